//! δ-complete verification of k-inductive barrier certificates by interval
//! branch-and-bound over the negated certificate conditions.
//!
//! Each condition is negated into a conjunction of inequalities over a
//! region box. A box is pruned as soon as one inequality is provably
//! infeasible on it; its midpoint is evaluated exactly as a candidate
//! witness; boxes narrower than δ that survive both tests are reported as
//! δ-sat. Upper bounds are the intersection of several enclosures: natural
//! interval evaluation, the mean-value form, the expanded polynomial (when
//! the constraint is polynomial) and a monotonicity reduction to faces.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DataDrivenModel, LinearDataModel};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::interval::{Interval, IntervalBox};
use crate::poly::Polynomial;
use crate::safety::{KbcSpec, SafetySpec};
use crate::tape::Tape;

pub const DEFAULT_MAX_BOXES: usize = 5_000_000;
pub const DEFAULT_DELTA: f64 = 1e-3;

/// Monomial cap for the expanded-polynomial enclosure.
const MAX_POLY_TERMS: usize = 4096;

/// Boxes processed between checks of the cross-condition cancel flag.
const CANCEL_POLL: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// `B ≤ 0` on `X_I`.
    I,
    /// `B > λ` on `X_U`.
    U,
    /// `B(f₁(x)) ≤ B(x) + ε` wherever `B(x) ≤ λ`.
    E1,
    /// `B(f_k(x)) ≤ B(x)` wherever `B(x) ≤ 0`.
    E2,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::I, Condition::U, Condition::E1, Condition::E2];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug)]
pub struct VerificationTask {
    pub certificate: Expr,
    pub f1: Vec<Expr>,
    pub fk: Vec<Expr>,
    pub spec: SafetySpec,
    pub kbc: KbcSpec,
    pub delta: f64,
    pub max_boxes: usize,
}

impl VerificationTask {
    pub fn new(
        certificate: Expr,
        f1: Vec<Expr>,
        fk: Vec<Expr>,
        spec: SafetySpec,
        kbc: KbcSpec,
        delta: f64,
    ) -> Result<Self> {
        let task = VerificationTask {
            certificate,
            f1,
            fk,
            spec,
            kbc,
            delta,
            max_boxes: DEFAULT_MAX_BOXES,
        };
        task.validate()?;
        Ok(task)
    }

    /// Task for a data-driven model; `f_k` is composed symbolically with
    /// shared subexpressions.
    pub fn from_model(
        certificate: Expr,
        model: &DataDrivenModel,
        spec: SafetySpec,
        kbc: KbcSpec,
        delta: f64,
    ) -> Result<Self> {
        let f1 = model.symbolic_step();
        let fk = if kbc.k() == 1 {
            f1.clone()
        } else {
            model.symbolic_k_step(kbc.k())
        };
        VerificationTask::new(certificate, f1, fk, spec, kbc, delta)
    }

    /// Task for the linear specialization with `f₁ = Â·x`, `f_k = Âᵏ·x`.
    pub fn from_linear(
        certificate: Expr,
        model: &LinearDataModel,
        spec: SafetySpec,
        kbc: KbcSpec,
        delta: f64,
    ) -> Result<Self> {
        let f1 = model.symbolic_k_step(1);
        let fk = model.symbolic_k_step(kbc.k());
        VerificationTask::new(certificate, f1, fk, spec, kbc, delta)
    }

    pub fn with_max_boxes(mut self, max_boxes: usize) -> Self {
        self.max_boxes = max_boxes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.spec.dim();
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::config(format!("delta must be positive, got {}", self.delta)));
        }
        if self.max_boxes == 0 {
            return Err(Error::config("max_boxes must be positive"));
        }
        for f in [&self.f1, &self.fk] {
            if f.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: f.len(),
                });
            }
        }
        for e in std::iter::once(&self.certificate).chain(&self.f1).chain(&self.fk) {
            if let Some(i) = e.max_var() {
                if i >= n {
                    return Err(Error::VarOutOfRange { index: i, dim: n });
                }
            }
        }
        Ok(())
    }
}

/// `expr > 0` when strict, `expr ≥ 0` otherwise.
#[derive(Clone, Debug)]
pub struct Constraint {
    pub expr: Expr,
    pub strict: bool,
}

impl Constraint {
    fn holds(&self, v: f64) -> bool {
        if self.strict {
            v > 0.0
        } else {
            v >= 0.0
        }
    }

    /// Infeasible on a set whose values are bounded above by `hi`.
    fn refuted_by(&self, hi: f64) -> bool {
        if self.strict {
            hi <= 0.0
        } else {
            hi < 0.0
        }
    }
}

/// One negated condition: the region to search and the conjunction that a
/// violating point satisfies. The last constraint carries the margin.
#[derive(Clone, Debug)]
pub struct ConditionSet {
    pub condition: Condition,
    pub region: IntervalBox,
    pub constraints: Vec<Constraint>,
}

pub fn condition_exprs(task: &VerificationTask) -> Vec<ConditionSet> {
    let b = &task.certificate;
    let lambda = Expr::constant(task.kbc.lambda());
    let eps = Expr::constant(task.kbc.epsilon());
    let b_f1 = b.substitute(&task.f1).expect("validated task");
    let b_fk = if task.kbc.k() == 1 && task.fk.iter().zip(&task.f1).all(|(a, c)| a.ptr() == c.ptr()) {
        b_f1.clone()
    } else {
        b.substitute(&task.fk).expect("validated task")
    };
    let strict = |expr: Expr| Constraint { expr, strict: true };
    let weak = |expr: Expr| Constraint { expr, strict: false };
    let x = task.spec.state_space().clone();
    vec![
        ConditionSet {
            condition: Condition::I,
            region: task.spec.initial().clone(),
            constraints: vec![strict(b.clone())],
        },
        ConditionSet {
            condition: Condition::U,
            region: task.spec.unsafe_set().clone(),
            constraints: vec![weak(lambda.sub(b))],
        },
        ConditionSet {
            condition: Condition::E1,
            region: x.clone(),
            constraints: vec![weak(lambda.sub(b)), strict(b_f1.sub(b).sub(&eps))],
        },
        ConditionSet {
            condition: Condition::E2,
            region: x,
            constraints: vec![weak(b.neg()), strict(b_fk.sub(b))],
        },
    ]
}

/// Conditions violated at `x` under exact point evaluation, with the
/// violation amount.
pub fn check_point(task: &VerificationTask, x: &[f64]) -> Result<Vec<(Condition, f64)>> {
    let mut out = Vec::new();
    for set in condition_exprs(task) {
        if !set.region.contains(x) {
            continue;
        }
        let tape = Tape::compile(&set.constraints.iter().map(|c| c.expr.clone()).collect::<Vec<_>>());
        let vals = tape.eval_point(x)?;
        if set.constraints.iter().zip(&vals).all(|(c, &v)| c.holds(v)) {
            out.push((set.condition, *vals.last().expect("nonempty")));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Counterexample {
        condition: Condition,
        point: Vec<f64>,
        margin: f64,
    },
    /// A box narrower than δ that could be neither refuted nor confirmed.
    /// `margin` is the value of the condition's last constraint at the box
    /// midpoint.
    DeltaSat {
        condition: Condition,
        #[serde(rename = "box")]
        region: IntervalBox,
        margin: f64,
    },
    Exhausted {
        condition: Condition,
        boxes: usize,
    },
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid)
    }

    pub fn condition(&self) -> Option<Condition> {
        match self {
            Verdict::Valid => None,
            Verdict::Counterexample { condition, .. }
            | Verdict::DeltaSat { condition, .. }
            | Verdict::Exhausted { condition, .. } => Some(*condition),
        }
    }

    /// A concrete point for retraining: the witness or the δ-box center.
    pub fn witness(&self) -> Option<Vec<f64>> {
        match self {
            Verdict::Counterexample { point, .. } => Some(point.clone()),
            Verdict::DeltaSat { region, .. } => Some(region.midpoint()),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Verdict::Counterexample { .. } => 0,
            Verdict::DeltaSat { .. } => 1,
            Verdict::Exhausted { .. } => 2,
            Verdict::Valid => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionOutcome {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub boxes_explored: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub boxes_explored: usize,
    /// Seconds.
    pub wall_time: f64,
    /// Outcome of each condition search; `None` for searches cancelled
    /// because an earlier condition already produced a counterexample.
    pub conditions: Vec<Option<ConditionOutcome>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchOptions {
    /// Keep a uniform random sample of up to this many pruned boxes per
    /// condition.
    pub sample_pruned: usize,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            sample_pruned: 0,
            seed: 0,
        }
    }
}

pub fn verify(task: &VerificationTask) -> Result<VerificationOutcome> {
    verify_traced(task, SearchOptions::default()).map(|(o, _)| o)
}

pub fn verify_linear(
    certificate: Expr,
    model: &LinearDataModel,
    spec: SafetySpec,
    kbc: KbcSpec,
    delta: f64,
) -> Result<VerificationOutcome> {
    verify(&VerificationTask::from_linear(certificate, model, spec, kbc, delta)?)
}

/// [`verify`] that also returns a sample of pruned boxes per condition.
pub fn verify_traced(
    task: &VerificationTask,
    opts: SearchOptions,
) -> Result<(VerificationOutcome, Vec<(Condition, IntervalBox)>)> {
    task.validate()?;
    let start = Instant::now();
    let sets = condition_exprs(task);
    // lowest condition index with a confirmed counterexample so far
    let best_cex = AtomicUsize::new(usize::MAX);

    let results: Vec<Option<SearchResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sets
            .iter()
            .map(|set| {
                let best_cex = &best_cex;
                scope.spawn(move || {
                    let r = Search::new(set, task, opts).run(best_cex);
                    if let Some(r) = &r {
                        if matches!(r.verdict, Verdict::Counterexample { .. }) {
                            best_cex.fetch_min(set.condition.index(), AtomicOrdering::SeqCst);
                        }
                    }
                    r
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("verifier worker panicked"))
            .collect()
    });

    let mut verdict = Verdict::Valid;
    let mut boxes = 0;
    let mut pruned = Vec::new();
    let mut conditions = Vec::new();
    for r in results {
        match r {
            Some(r) => {
                boxes += r.boxes;
                if r.verdict.rank() < verdict.rank() {
                    verdict = r.verdict.clone();
                }
                pruned.extend(r.pruned);
                conditions.push(Some(ConditionOutcome {
                    verdict: r.verdict,
                    boxes_explored: r.boxes,
                }));
            }
            None => conditions.push(None),
        }
    }
    let outcome = VerificationOutcome {
        verdict,
        boxes_explored: boxes,
        wall_time: start.elapsed().as_secs_f64(),
        conditions,
    };
    Ok((outcome, pruned))
}

struct SearchResult {
    verdict: Verdict,
    boxes: usize,
    pruned: Vec<(Condition, IntervalBox)>,
}

/// Heap entry ordered widest-first, then by insertion order.
struct Entry {
    width: f64,
    seq: u64,
    b: IntervalBox,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.width
            .total_cmp(&other.width)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Search<'a> {
    set: &'a ConditionSet,
    task: &'a VerificationTask,
    opts: SearchOptions,
    tape: Tape,
    polys: Vec<Option<Polynomial>>,
    n: usize,
    values: Vec<Interval>,
    grads: Vec<Interval>,
    scratch: Vec<Interval>,
    point_scratch: Vec<f64>,
}

enum BoxStatus {
    Pruned,
    Witness(Vec<f64>, f64),
    Open,
}

impl<'a> Search<'a> {
    fn new(set: &'a ConditionSet, task: &'a VerificationTask, opts: SearchOptions) -> Self {
        let n = task.spec.dim();
        let exprs: Vec<Expr> = set.constraints.iter().map(|c| c.expr.clone()).collect();
        let tape = Tape::compile(&exprs);
        let polys = exprs
            .iter()
            .map(|e| Polynomial::from_expr(e, n, MAX_POLY_TERMS))
            .collect();
        Search {
            set,
            task,
            opts,
            tape,
            polys,
            n,
            values: Vec::new(),
            grads: Vec::new(),
            scratch: Vec::new(),
            point_scratch: Vec::new(),
        }
    }

    fn run(mut self, best_cex: &AtomicUsize) -> Option<SearchResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed ^ self.set.condition.index() as u64);
        let mut pruned: Vec<(Condition, IntervalBox)> = Vec::new();
        let mut pruned_seen = 0usize;
        let mut heap = BinaryHeap::new();
        let mut seq = 0u64;
        heap.push(Entry {
            width: self.set.region.max_width(),
            seq,
            b: self.set.region.clone(),
        });
        let mut boxes = 0usize;
        let me = self.set.condition.index();

        while let Some(Entry { b, .. }) = heap.pop() {
            if boxes % CANCEL_POLL == 0 && best_cex.load(AtomicOrdering::SeqCst) < me {
                return None;
            }
            if boxes >= self.task.max_boxes {
                return Some(SearchResult {
                    verdict: Verdict::Exhausted {
                        condition: self.set.condition,
                        boxes,
                    },
                    boxes,
                    pruned,
                });
            }
            boxes += 1;
            match self.classify(&b) {
                BoxStatus::Pruned => {
                    if self.opts.sample_pruned > 0 {
                        // reservoir sampling
                        pruned_seen += 1;
                        if pruned.len() < self.opts.sample_pruned {
                            pruned.push((self.set.condition, b));
                        } else {
                            let j = rng.gen_range(0..pruned_seen);
                            if j < self.opts.sample_pruned {
                                pruned[j] = (self.set.condition, b);
                            }
                        }
                    }
                }
                BoxStatus::Witness(point, margin) => {
                    return Some(SearchResult {
                        verdict: Verdict::Counterexample {
                            condition: self.set.condition,
                            point,
                            margin,
                        },
                        boxes,
                        pruned,
                    });
                }
                BoxStatus::Open if b.max_width() < self.task.delta => {
                    let margin = self.point_values(&b.midpoint()).last().copied().unwrap_or(f64::NAN);
                    return Some(SearchResult {
                        verdict: Verdict::DeltaSat {
                            condition: self.set.condition,
                            region: b,
                            margin,
                        },
                        boxes,
                        pruned,
                    });
                }
                BoxStatus::Open => {
                    let (l, r) = b.bisect(b.widest_dim());
                    for child in [l, r] {
                        seq += 1;
                        heap.push(Entry {
                            width: child.max_width(),
                            seq,
                            b: child,
                        });
                    }
                }
            }
        }
        Some(SearchResult {
            verdict: Verdict::Valid,
            boxes,
            pruned,
        })
    }

    fn point_values(&mut self, x: &[f64]) -> Vec<f64> {
        self.tape
            .eval_point_with(x, &mut self.point_scratch)
            .expect("validated dimension");
        (0..self.tape.num_outputs())
            .map(|j| self.point_scratch[self.tape.output_slot(j)])
            .collect()
    }

    fn confirm(&mut self, x: &[f64]) -> Option<f64> {
        let vals = self.point_values(x);
        let holds = self
            .set
            .constraints
            .iter()
            .zip(&vals)
            .all(|(c, &v)| c.holds(v));
        holds.then(|| *vals.last().expect("nonempty"))
    }

    fn classify(&mut self, b: &IntervalBox) -> BoxStatus {
        if self.refuted(b) {
            return BoxStatus::Pruned;
        }
        let mid = b.midpoint();
        if let Some(m) = self.confirm(&mid) {
            return BoxStatus::Witness(mid, m);
        }
        if b.max_width() < self.task.delta && self.n <= 6 {
            for c in b.corners() {
                if let Some(m) = self.confirm(&c) {
                    return BoxStatus::Witness(c, m);
                }
            }
        }
        BoxStatus::Open
    }

    /// Whether some constraint is provably infeasible on `b`.
    fn refuted(&mut self, b: &IntervalBox) -> bool {
        let m = self.tape.num_outputs();
        self.tape
            .eval_interval_with(b, &mut self.scratch)
            .expect("validated dimension");
        let mut upper: Vec<f64> = (0..m)
            .map(|j| self.scratch[self.tape.output_slot(j)].hi())
            .collect();
        if self.any_refuted(&upper) {
            return true;
        }

        for (j, p) in self.polys.iter().enumerate() {
            if let Some(p) = p {
                upper[j] = upper[j].min(p.enclose(b).hi());
            }
        }
        if self.any_refuted(&upper) {
            return true;
        }

        // mean-value form around the midpoint
        let n = self.n;
        self.tape
            .eval_gradient_with(b, &mut self.values, &mut self.grads)
            .expect("validated dimension");
        let mid = b.midpoint();
        self.tape
            .eval_interval_with(&IntervalBox::point(&mid), &mut self.scratch)
            .expect("validated dimension");
        let slots: Vec<usize> = (0..m).map(|j| self.tape.output_slot(j)).collect();
        let mut faces: Vec<Option<IntervalBox>> = vec![None; m];
        for (j, &slot) in slots.iter().enumerate() {
            let grad = &self.grads[slot * n..(slot + 1) * n];
            let mv = (0..n).fold(self.scratch[slot], |acc, i| {
                acc + grad[i] * (b.get(i) - Interval::point(mid[i]))
            });
            upper[j] = upper[j].min(mv.hi());

            // monotone directions: the maximum lies on the upper face
            let mut face = b.clone();
            let mut reduced = false;
            for (i, g) in grad.iter().enumerate() {
                if b.get(i).width() == 0.0 {
                    continue;
                }
                if g.lo() >= 0.0 {
                    face.set(i, Interval::point(b.get(i).hi()));
                    reduced = true;
                } else if g.hi() <= 0.0 {
                    face.set(i, Interval::point(b.get(i).lo()));
                    reduced = true;
                }
            }
            if reduced {
                faces[j] = Some(face);
            }
        }
        if self.any_refuted(&upper) {
            return true;
        }
        for (j, face) in faces.into_iter().enumerate() {
            if let Some(face) = face {
                self.tape
                    .eval_interval_with(&face, &mut self.scratch)
                    .expect("validated dimension");
                let mut hi = self.scratch[slots[j]].hi();
                if let Some(p) = &self.polys[j] {
                    hi = hi.min(p.enclose(&face).hi());
                }
                upper[j] = upper[j].min(hi);
            }
        }
        self.any_refuted(&upper)
    }

    fn any_refuted(&self, upper: &[f64]) -> bool {
        self.set
            .constraints
            .iter()
            .zip(upper)
            .any(|(c, &hi)| c.refuted_by(hi))
    }
}
