//! Straight-line evaluation program compiled from one or more expressions.
//!
//! Compilation deduplicates structurally identical nodes (value numbering),
//! so `B(f(x)) - B(x)` with `f` the identity collapses to `s - s` on one slot,
//! which interval evaluation then encloses by exactly `[0, 0]`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::expr::{Expr, Node};
use crate::interval::{Interval, IntervalBox};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Op {
    Var(usize),
    /// f64 bit pattern
    Const(u64),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Neg(u32),
    Pow(u32, u32),
    Sin(u32),
    Cos(u32),
    Exp(u32),
}

#[derive(Clone, Debug)]
pub struct Tape {
    ops: Vec<Op>,
    outputs: Vec<u32>,
    /// Minimum input dimension (max variable index + 1).
    arity: usize,
}

impl Tape {
    pub fn compile(exprs: &[Expr]) -> Tape {
        let mut ops: Vec<Op> = Vec::new();
        let mut numbering: HashMap<Op, u32> = HashMap::new();
        let mut slot_of: HashMap<*const Node, u32> = HashMap::new();
        let mut arity = 0;

        for e in Expr::post_order(exprs) {
            let s = |c: &Expr| slot_of[&c.ptr()];
            let op = match e.node() {
                Node::Var(i) => {
                    arity = arity.max(i + 1);
                    Op::Var(*i)
                }
                Node::Const(c) => Op::Const(c.to_bits()),
                Node::Add(a, b) => {
                    let (a, b) = (s(a), s(b));
                    // commutative: canonical operand order improves sharing
                    Op::Add(a.min(b), a.max(b))
                }
                Node::Sub(a, b) => Op::Sub(s(a), s(b)),
                Node::Mul(a, b) => {
                    let (a, b) = (s(a), s(b));
                    Op::Mul(a.min(b), a.max(b))
                }
                Node::Neg(a) => Op::Neg(s(a)),
                Node::Pow(a, n) => Op::Pow(s(a), *n),
                Node::Sin(a) => Op::Sin(s(a)),
                Node::Cos(a) => Op::Cos(s(a)),
                Node::Exp(a) => Op::Exp(s(a)),
            };
            let slot = *numbering.entry(op).or_insert_with(|| {
                ops.push(op);
                (ops.len() - 1) as u32
            });
            slot_of.insert(e.ptr(), slot);
        }
        let outputs = exprs.iter().map(|e| slot_of[&e.ptr()]).collect();
        Tape {
            ops,
            outputs,
            arity,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim < self.arity {
            return Err(Error::VarOutOfRange {
                index: self.arity - 1,
                dim,
            });
        }
        Ok(())
    }

    pub fn eval_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = Vec::new();
        self.eval_point_with(x, &mut scratch)?;
        Ok(self.outputs.iter().map(|&o| scratch[o as usize]).collect())
    }

    /// Point evaluation into a reusable buffer; output `j` is
    /// `scratch[self.output_slot(j)]`.
    pub fn eval_point_with(&self, x: &[f64], scratch: &mut Vec<f64>) -> Result<()> {
        self.check_dim(x.len())?;
        scratch.clear();
        scratch.reserve(self.ops.len());
        for op in &self.ops {
            let v = |i: u32| scratch[i as usize];
            let r = match *op {
                Op::Var(i) => x[i],
                Op::Const(bits) => f64::from_bits(bits),
                Op::Add(a, b) => v(a) + v(b),
                Op::Sub(a, b) => v(a) - v(b),
                Op::Mul(a, b) => v(a) * v(b),
                Op::Neg(a) => -v(a),
                Op::Pow(a, n) => powi_chain(v(a), n),
                Op::Sin(a) => v(a).sin(),
                Op::Cos(a) => v(a).cos(),
                Op::Exp(a) => v(a).exp(),
            };
            scratch.push(r);
        }
        Ok(())
    }

    pub fn output_slot(&self, j: usize) -> usize {
        self.outputs[j] as usize
    }

    pub fn eval_interval(&self, b: &IntervalBox) -> Result<Vec<Interval>> {
        let mut scratch = Vec::new();
        self.eval_interval_with(b, &mut scratch)?;
        Ok(self.outputs.iter().map(|&o| scratch[o as usize]).collect())
    }

    pub fn eval_interval_with(&self, b: &IntervalBox, scratch: &mut Vec<Interval>) -> Result<()> {
        self.check_dim(b.dim())?;
        scratch.clear();
        scratch.reserve(self.ops.len());
        for op in &self.ops {
            let v = |i: u32| scratch[i as usize];
            let r = match *op {
                Op::Var(i) => b.get(i),
                Op::Const(bits) => Interval::point(f64::from_bits(bits)),
                Op::Add(a, c) => v(a) + v(c),
                Op::Sub(a, c) if a == c => Interval::point(0.0),
                Op::Sub(a, c) => v(a) - v(c),
                Op::Mul(a, c) if a == c => v(a).powi(2),
                Op::Mul(a, c) => v(a) * v(c),
                Op::Neg(a) => -v(a),
                Op::Pow(a, n) => v(a).powi(n),
                Op::Sin(a) => v(a).sin(),
                Op::Cos(a) => v(a).cos(),
                Op::Exp(a) => v(a).exp(),
            };
            scratch.push(r);
        }
        Ok(())
    }

    /// Forward-mode interval differentiation. Fills `values` with one
    /// enclosure per slot and `grads` with `n` gradient enclosures per slot
    /// (slot-major), where `n = b.dim()`.
    pub fn eval_gradient_with(
        &self,
        b: &IntervalBox,
        values: &mut Vec<Interval>,
        grads: &mut Vec<Interval>,
    ) -> Result<()> {
        let n = b.dim();
        self.check_dim(n)?;
        values.clear();
        grads.clear();
        let zero = Interval::point(0.0);
        grads.resize(self.ops.len() * n, zero);
        for (slot, op) in self.ops.iter().enumerate() {
            let v = |i: u32| values[i as usize];
            let base = slot * n;
            let (val, rule): (Interval, GradRule) = match *op {
                Op::Var(i) => {
                    grads[base + i] = Interval::point(1.0);
                    (b.get(i), GradRule::Done)
                }
                Op::Const(bits) => (Interval::point(f64::from_bits(bits)), GradRule::Done),
                Op::Add(a, c) => (v(a) + v(c), GradRule::Sum(a, c, false)),
                Op::Sub(a, c) if a == c => (zero, GradRule::Done),
                Op::Sub(a, c) => (v(a) - v(c), GradRule::Sum(a, c, true)),
                Op::Mul(a, c) if a == c => {
                    let va = v(a);
                    (va.powi(2), GradRule::Scale(a, Interval::point(2.0) * va))
                }
                Op::Mul(a, c) => (v(a) * v(c), GradRule::Product(a, c)),
                Op::Neg(a) => (-v(a), GradRule::Scale(a, Interval::point(-1.0))),
                Op::Pow(a, k) => {
                    let va = v(a);
                    let d = if k == 1 {
                        Interval::point(1.0)
                    } else {
                        Interval::point(k as f64) * va.powi(k - 1)
                    };
                    (va.powi(k), GradRule::Scale(a, d))
                }
                Op::Sin(a) => (v(a).sin(), GradRule::Scale(a, v(a).cos())),
                Op::Cos(a) => (v(a).cos(), GradRule::Scale(a, -v(a).sin())),
                Op::Exp(a) => {
                    let e = v(a).exp();
                    (e, GradRule::Scale(a, e))
                }
            };
            values.push(val);
            match rule {
                GradRule::Done => {}
                GradRule::Sum(a, c, negate) => {
                    for i in 0..n {
                        let ga = grads[a as usize * n + i];
                        let gc = grads[c as usize * n + i];
                        grads[base + i] = if negate { ga - gc } else { ga + gc };
                    }
                }
                GradRule::Scale(a, d) => {
                    for i in 0..n {
                        grads[base + i] = d * grads[a as usize * n + i];
                    }
                }
                GradRule::Product(a, c) => {
                    let (va, vc) = (values[a as usize], values[c as usize]);
                    for i in 0..n {
                        grads[base + i] =
                            grads[a as usize * n + i] * vc + va * grads[c as usize * n + i];
                    }
                }
            }
        }
        Ok(())
    }
}

/// `x^n` by left-to-right multiplication, the same order the interval
/// enclosure rounds along, so point results always land inside it.
pub(crate) fn powi_chain(x: f64, n: u32) -> f64 {
    let mut r = x;
    for _ in 1..n {
        r *= x;
    }
    r
}

enum GradRule {
    Done,
    Sum(u32, u32, bool),
    Scale(u32, Interval),
    Product(u32, u32),
}
