//! Expanded polynomial form with interval coefficients.
//!
//! Used as an extra enclosure for polynomial constraints: expanding
//! `B(f(x)) - B(x)` lets equal monomials cancel before interval evaluation,
//! which natural interval evaluation of the tree cannot do.

use std::collections::{BTreeMap, HashMap};

use crate::expr::{Expr, Node};
use crate::interval::{Interval, IntervalBox};

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    n: usize,
    terms: BTreeMap<Vec<u32>, Interval>,
}

impl Polynomial {
    fn zero(n: usize) -> Self {
        Polynomial {
            n,
            terms: BTreeMap::new(),
        }
    }

    fn constant(n: usize, c: Interval) -> Self {
        let mut p = Polynomial::zero(n);
        if c != Interval::point(0.0) {
            p.terms.insert(vec![0; n], c);
        }
        p
    }

    fn var(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        let mut p = Polynomial::zero(n);
        p.terms.insert(e, Interval::point(1.0));
        p
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    fn add(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            let slot = out.terms.entry(e.clone()).or_insert(Interval::point(0.0));
            *slot = *slot + *c;
        }
        out.terms.retain(|_, c| *c != Interval::point(0.0));
        out
    }

    fn neg(&self) -> Polynomial {
        Polynomial {
            n: self.n,
            terms: self.terms.iter().map(|(e, c)| (e.clone(), -*c)).collect(),
        }
    }

    fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero(self.n);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                let slot = out.terms.entry(e).or_insert(Interval::point(0.0));
                *slot = *slot + *ca * *cb;
            }
        }
        out.terms.retain(|_, c| *c != Interval::point(0.0));
        out
    }

    /// Expands `e` over `n` variables. Returns `None` for non-polynomial
    /// expressions or when the expansion would exceed `max_terms` monomials.
    pub fn from_expr(e: &Expr, n: usize, max_terms: usize) -> Option<Polynomial> {
        let mut memo: HashMap<*const Node, Polynomial> = HashMap::new();
        for node in Expr::post_order(std::slice::from_ref(e)) {
            let get = |c: &Expr| &memo[&c.ptr()];
            let p = match node.node() {
                Node::Var(i) if *i < n => Polynomial::var(n, *i),
                Node::Var(_) => return None,
                Node::Const(c) => Polynomial::constant(n, Interval::point(*c)),
                Node::Add(a, b) => get(a).add(get(b)),
                Node::Sub(a, b) => get(a).add(&get(b).neg()),
                Node::Mul(a, b) => get(a).mul(get(b)),
                Node::Neg(a) => get(a).neg(),
                Node::Pow(a, k) => {
                    let base = get(a);
                    let mut acc = base.clone();
                    for _ in 1..*k {
                        acc = acc.mul(base);
                        if acc.num_terms() > max_terms {
                            return None;
                        }
                    }
                    acc
                }
                Node::Sin(_) | Node::Cos(_) | Node::Exp(_) => return None,
            };
            if p.num_terms() > max_terms {
                return None;
            }
            memo.insert(node.ptr(), p);
        }
        memo.remove(&e.ptr())
    }

    /// Interval enclosure over `b`, with even powers evaluated tightly.
    pub fn enclose(&self, b: &IntervalBox) -> Interval {
        let max_deg = self.degree().max(1) as usize;
        let powers: Vec<Vec<Interval>> = (0..self.n)
            .map(|i| {
                let x = b.get(i);
                (0..=max_deg)
                    .map(|k| {
                        if k == 0 {
                            Interval::point(1.0)
                        } else {
                            x.powi(k as u32)
                        }
                    })
                    .collect()
            })
            .collect();
        self.terms
            .iter()
            .fold(Interval::point(0.0), |acc, (e, c)| {
                let m = e
                    .iter()
                    .enumerate()
                    .filter(|(_, &k)| k > 0)
                    .fold(*c, |m, (i, &k)| m * powers[i][k as usize]);
                acc + m
            })
    }
}
