//! Symbolic scalar expressions over state variables.
//!
//! Nodes are reference counted and immutable, so substitution shares
//! subtrees instead of copying them: composing the one-step map with itself
//! k times yields a DAG whose size is linear in k. Evaluation goes through
//! [`Tape`], which visits each shared node once.
//!
//! Text form is prefix notation, e.g. `(add (mul (var 0) (var 1)) (const 1.0))`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::ops;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalBox};
use crate::tape::Tape;

#[derive(Debug)]
pub enum Node {
    Var(usize),
    Const(f64),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Neg(Expr),
    /// Integer power with exponent >= 1.
    Pow(Expr, u32),
    Sin(Expr),
    Cos(Expr),
    Exp(Expr),
}

#[derive(Clone)]
pub struct Expr(Arc<Node>);

impl Expr {
    fn wrap(node: Node) -> Self {
        Expr(Arc::new(node))
    }

    pub fn var(i: usize) -> Self {
        Expr::wrap(Node::Var(i))
    }

    pub fn constant(c: f64) -> Self {
        Expr::wrap(Node::Const(c))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub(crate) fn ptr(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_const(&self) -> bool {
        self.as_const().is_some()
    }

    pub fn add(&self, rhs: &Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a + b),
            (Some(a), None) if a == 0.0 => rhs.clone(),
            (None, Some(b)) if b == 0.0 => self.clone(),
            _ => Expr::wrap(Node::Add(self.clone(), rhs.clone())),
        }
    }

    pub fn sub(&self, rhs: &Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a - b),
            (Some(a), None) if a == 0.0 => rhs.neg(),
            (None, Some(b)) if b == 0.0 => self.clone(),
            _ => Expr::wrap(Node::Sub(self.clone(), rhs.clone())),
        }
    }

    pub fn mul(&self, rhs: &Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a * b),
            (Some(a), _) if a == 0.0 => Expr::constant(0.0),
            (_, Some(b)) if b == 0.0 => Expr::constant(0.0),
            (Some(a), _) if a == 1.0 => rhs.clone(),
            (_, Some(b)) if b == 1.0 => self.clone(),
            _ => Expr::wrap(Node::Mul(self.clone(), rhs.clone())),
        }
    }

    pub fn neg(&self) -> Expr {
        match self.as_const() {
            Some(a) => Expr::constant(-a),
            None => Expr::wrap(Node::Neg(self.clone())),
        }
    }

    /// Integer power. Panics on exponent 0, which the grammar excludes.
    pub fn powi(&self, n: u32) -> Expr {
        assert!(n >= 1, "power exponent must be >= 1");
        match self.as_const() {
            Some(a) => Expr::constant(crate::tape::powi_chain(a, n)),
            None if n == 1 => self.clone(),
            None => Expr::wrap(Node::Pow(self.clone(), n)),
        }
    }

    pub fn sin(&self) -> Expr {
        match self.as_const() {
            Some(a) => Expr::constant(a.sin()),
            None => Expr::wrap(Node::Sin(self.clone())),
        }
    }

    pub fn cos(&self) -> Expr {
        match self.as_const() {
            Some(a) => Expr::constant(a.cos()),
            None => Expr::wrap(Node::Cos(self.clone())),
        }
    }

    pub fn exp(&self) -> Expr {
        match self.as_const() {
            Some(a) => Expr::constant(a.exp()),
            None => Expr::wrap(Node::Exp(self.clone())),
        }
    }

    /// Left-folded sum; the empty sum is `0`.
    pub fn sum<'a>(terms: impl IntoIterator<Item = &'a Expr>) -> Expr {
        terms
            .into_iter()
            .fold(Expr::constant(0.0), |acc, t| acc.add(t))
    }

    /// `Σ coeffs[j] * terms[j]`, skipping zero coefficients.
    pub fn linear_combination(coeffs: &[f64], terms: &[Expr]) -> Expr {
        debug_assert_eq!(coeffs.len(), terms.len());
        coeffs
            .iter()
            .zip(terms)
            .fold(Expr::constant(0.0), |acc, (&c, t)| {
                acc.add(&Expr::constant(c).mul(t))
            })
    }

    fn children(&self) -> (Option<&Expr>, Option<&Expr>) {
        match &*self.0 {
            Node::Var(_) | Node::Const(_) => (None, None),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) => (Some(a), Some(b)),
            Node::Neg(a) | Node::Pow(a, _) | Node::Sin(a) | Node::Cos(a) | Node::Exp(a) => {
                (Some(a), None)
            }
        }
    }

    /// Unique nodes in post-order (children before parents).
    pub(crate) fn post_order(roots: &[Expr]) -> Vec<Expr> {
        let mut seen: HashSet<*const Node> = HashSet::new();
        let mut out = Vec::new();
        let mut stack: Vec<(Expr, bool)> = roots.iter().rev().map(|e| (e.clone(), false)).collect();
        while let Some((e, expanded)) = stack.pop() {
            if seen.contains(&e.ptr()) {
                continue;
            }
            if expanded {
                seen.insert(e.ptr());
                out.push(e);
                continue;
            }
            stack.push((e.clone(), true));
            let (a, b) = e.children();
            for c in [b, a].into_iter().flatten() {
                if !seen.contains(&c.ptr()) {
                    stack.push((c.clone(), false));
                }
            }
        }
        out
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        Expr::post_order(std::slice::from_ref(self))
            .iter()
            .filter_map(|e| match *e.0 {
                Node::Var(i) => Some(i),
                _ => None,
            })
            .max()
    }

    /// Number of distinct nodes in the shared representation.
    pub fn dag_size(&self) -> usize {
        Expr::post_order(std::slice::from_ref(self)).len()
    }

    /// Number of nodes the expression would have as a plain tree (saturating).
    pub fn tree_size(&self) -> u64 {
        let mut size: HashMap<*const Node, u64> = HashMap::new();
        for e in Expr::post_order(std::slice::from_ref(self)) {
            let (a, b) = e.children();
            let s = [a, b]
                .into_iter()
                .flatten()
                .fold(1u64, |acc, c| acc.saturating_add(size[&c.ptr()]));
            size.insert(e.ptr(), s);
        }
        size[&self.ptr()]
    }

    /// Replaces every `Var(i)` by `replacements[i]`, preserving sharing.
    pub fn substitute(&self, replacements: &[Expr]) -> Result<Expr> {
        substitute_all(std::slice::from_ref(self), replacements).map(|mut v| v.remove(0))
    }

    pub fn eval_point(&self, x: &[f64]) -> Result<f64> {
        Tape::compile(std::slice::from_ref(self))
            .eval_point(x)
            .map(|v| v[0])
    }

    pub fn eval_interval(&self, b: &IntervalBox) -> Result<Interval> {
        Tape::compile(std::slice::from_ref(self))
            .eval_interval(b)
            .map(|v| v[0])
    }
}

/// Substitutes into several expressions at once so shared structure across
/// them stays shared in the result.
pub fn substitute_all(exprs: &[Expr], replacements: &[Expr]) -> Result<Vec<Expr>> {
    let mut memo: HashMap<*const Node, Expr> = HashMap::new();
    for e in Expr::post_order(exprs) {
        let get = |c: &Expr, memo: &HashMap<*const Node, Expr>| memo[&c.ptr()].clone();
        let out = match &*e.0 {
            Node::Var(i) => replacements
                .get(*i)
                .cloned()
                .ok_or(Error::MissingReplacement {
                    index: *i,
                    available: replacements.len(),
                })?,
            Node::Const(_) => e.clone(),
            Node::Add(a, b) => get(a, &memo).add(&get(b, &memo)),
            Node::Sub(a, b) => get(a, &memo).sub(&get(b, &memo)),
            Node::Mul(a, b) => get(a, &memo).mul(&get(b, &memo)),
            Node::Neg(a) => get(a, &memo).neg(),
            Node::Pow(a, n) => get(a, &memo).powi(*n),
            Node::Sin(a) => get(a, &memo).sin(),
            Node::Cos(a) => get(a, &memo).cos(),
            Node::Exp(a) => get(a, &memo).exp(),
        };
        memo.insert(e.ptr(), out);
    }
    Ok(exprs.iter().map(|e| memo[&e.ptr()].clone()).collect())
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.0 {
            Node::Var(i) => write!(f, "(var {i})"),
            Node::Const(c) => write!(f, "(const {c:?})"),
            Node::Add(a, b) => write!(f, "(add {a} {b})"),
            Node::Sub(a, b) => write!(f, "(sub {a} {b})"),
            Node::Mul(a, b) => write!(f, "(mul {a} {b})"),
            Node::Neg(a) => write!(f, "(neg {a})"),
            Node::Pow(a, n) => write!(f, "(pow {a} {n})"),
            Node::Sin(a) => write!(f, "(sin {a})"),
            Node::Cos(a) => write!(f, "(cos {a})"),
            Node::Exp(a) => write!(f, "(exp {a})"),
        }
    }
}

/// Structural equality; shared subgraphs are compared once.
impl PartialEq for Expr {
    fn eq(&self, other: &Expr) -> bool {
        fn go(a: &Expr, b: &Expr, seen: &mut HashSet<(*const Node, *const Node)>) -> bool {
            if Arc::ptr_eq(&a.0, &b.0) || seen.contains(&(a.ptr(), b.ptr())) {
                return true;
            }
            let eq = match (a.node(), b.node()) {
                (Node::Var(i), Node::Var(j)) => i == j,
                (Node::Const(x), Node::Const(y)) => x.to_bits() == y.to_bits(),
                (Node::Add(a1, a2), Node::Add(b1, b2))
                | (Node::Sub(a1, a2), Node::Sub(b1, b2))
                | (Node::Mul(a1, a2), Node::Mul(b1, b2)) => go(a1, b1, seen) && go(a2, b2, seen),
                (Node::Pow(x, m), Node::Pow(y, n)) => m == n && go(x, y, seen),
                (Node::Neg(x), Node::Neg(y))
                | (Node::Sin(x), Node::Sin(y))
                | (Node::Cos(x), Node::Cos(y))
                | (Node::Exp(x), Node::Exp(y)) => go(x, y, seen),
                _ => false,
            };
            if eq {
                seen.insert((a.ptr(), b.ptr()));
            }
            eq
        }
        go(self, other, &mut HashSet::new())
    }
}

/// Serialized as its prefix text.
impl serde::Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Expr> {
        let mut p = Parser { src: s, pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != s.len() {
            return Err(p.error("trailing input"));
        }
        Ok(e)
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn expect(&mut self, c: char) -> Result<()> {
        self.skip_ws();
        if self.src[self.pos..].starts_with(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.error(format!("expected '{c}'")))
        }
    }

    fn atom(&mut self) -> Result<&str> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let len = rest
            .find(|c: char| c.is_whitespace() || c == '(' || c == ')')
            .unwrap_or(rest.len());
        if len == 0 {
            return Err(self.error("expected token"));
        }
        self.pos += len;
        Ok(&rest[..len])
    }

    fn expr(&mut self) -> Result<Expr> {
        self.expect('(')?;
        let head_pos = self.pos;
        let head = self.atom()?.to_string();
        let e = match head.as_str() {
            "var" => {
                let tok = self.atom()?.to_string();
                let i = tok
                    .parse::<usize>()
                    .map_err(|_| self.error(format!("bad variable index '{tok}'")))?;
                Expr::var(i)
            }
            "const" => {
                let tok = self.atom()?.to_string();
                let c = tok
                    .parse::<f64>()
                    .ok()
                    .filter(|c| c.is_finite())
                    .ok_or_else(|| self.error(format!("bad constant '{tok}'")))?;
                Expr::constant(c)
            }
            "add" | "sub" | "mul" => {
                let a = self.expr()?;
                let b = self.expr()?;
                match head.as_str() {
                    "add" => a.add(&b),
                    "sub" => a.sub(&b),
                    _ => a.mul(&b),
                }
            }
            "pow" => {
                let a = self.expr()?;
                let tok = self.atom()?.to_string();
                let n = tok
                    .parse::<u32>()
                    .ok()
                    .filter(|&n| n >= 1)
                    .ok_or_else(|| self.error(format!("bad exponent '{tok}'")))?;
                a.powi(n)
            }
            "neg" | "sin" | "cos" | "exp" => {
                let a = self.expr()?;
                match head.as_str() {
                    "neg" => a.neg(),
                    "sin" => a.sin(),
                    "cos" => a.cos(),
                    _ => a.exp(),
                }
            }
            other => {
                self.pos = head_pos;
                return Err(self.error(format!("unknown operator '{other}'")));
            }
        };
        self.expect(')')?;
        Ok(e)
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident) => {
        impl ops::$tr<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::$method(self, rhs)
            }
        }
        impl ops::$tr<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$method(&self, &rhs)
            }
        }
        impl ops::$tr<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                Expr::$method(&self, &Expr::constant(rhs))
            }
        }
        impl ops::$tr<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$method(&Expr::constant(self), &rhs)
            }
        }
    };
}

binop!(Add, add);
binop!(Sub, sub);
binop!(Mul, mul);

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(&self)
    }
}

impl ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}
