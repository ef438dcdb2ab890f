//! Test oracles shared by the integration suites. Nothing here calls the
//! library's interval or tape machinery, so the checks stay independent.

#![allow(dead_code)]

use kbarrier::expr::{Expr, Node};
use kbarrier::interval::IntervalBox;
use kbarrier::learner::DatasetTriple;
use kbarrier::network::{Activation, NetworkParams};
use kbarrier::safety::{KbcSpec, SafetySpec};
use kbarrier::verifier::VerificationTask;
use rand::Rng;

pub fn bx(b: &[(f64, f64)]) -> IntervalBox {
    IntervalBox::from_bounds(b).unwrap()
}

/// Random expression over `n` variables with at most `depth` levels.
pub fn random_expr(rng: &mut impl Rng, depth: u32, n: usize) -> Expr {
    if depth == 0 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.6) {
            Expr::var(rng.gen_range(0..n))
        } else {
            Expr::constant((rng.gen_range(-3.0..3.0_f64) * 8.0).round() / 8.0 + rng.gen_range(-0.01..0.01))
        };
    }
    let a = random_expr(rng, depth - 1, n);
    match rng.gen_range(0..9) {
        0 => a.add(&random_expr(rng, depth - 1, n)),
        1 => a.sub(&random_expr(rng, depth - 1, n)),
        2 => a.mul(&random_expr(rng, depth - 1, n)),
        3 => a.neg(),
        4 => a.powi(rng.gen_range(1..=4)),
        5 => a.sin(),
        6 => a.cos(),
        7 => a.mul(&Expr::constant(0.3)).exp(),
        _ => a.sub(&a.mul(&Expr::constant(0.5))),
    }
}

pub fn random_box(rng: &mut impl Rng, n: usize) -> IntervalBox {
    let bounds: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let c = rng.gen_range(-3.0..3.0);
            let w = if rng.gen_bool(0.1) {
                0.0
            } else {
                rng.gen_range(0.0..2.5_f64).powi(2)
            };
            (c - w / 2.0, c + w / 2.0)
        })
        .collect();
    bx(&bounds)
}

pub fn sample_in(rng: &mut impl Rng, b: &IntervalBox) -> Vec<f64> {
    b.dims()
        .iter()
        .map(|d| {
            if d.width() == 0.0 {
                d.lo()
            } else {
                rng.gen_range(d.lo()..=d.hi())
            }
        })
        .collect()
}

/// Plain recursive point evaluation.
pub fn naive_eval(e: &Expr, x: &[f64]) -> f64 {
    match e.node() {
        Node::Var(i) => x[*i],
        Node::Const(c) => *c,
        Node::Add(a, b) => naive_eval(a, x) + naive_eval(b, x),
        Node::Sub(a, b) => naive_eval(a, x) - naive_eval(b, x),
        Node::Mul(a, b) => naive_eval(a, x) * naive_eval(b, x),
        Node::Neg(a) => -naive_eval(a, x),
        Node::Pow(a, k) => naive_eval(a, x).powi(*k as i32),
        Node::Sin(a) => naive_eval(a, x).sin(),
        Node::Cos(a) => naive_eval(a, x).cos(),
        Node::Exp(a) => naive_eval(a, x).exp(),
    }
}

/// Worst-case margin of each condition (I, U, E1, E2) over a uniform
/// `res × res` grid of a 2-D state space. A positive entry is a violation
/// (for U, any value ≥ 0 is). `NEG_INFINITY` marks an empty region.
pub fn grid_margins(
    spec: &SafetySpec,
    kbc: &KbcSpec,
    b: &dyn Fn(&[f64]) -> f64,
    f1: &dyn Fn(&[f64]) -> Vec<f64>,
    fk: &dyn Fn(&[f64]) -> Vec<f64>,
    res: usize,
) -> [f64; 4] {
    let (eps, lambda) = (kbc.epsilon(), kbc.lambda());
    let x = spec.state_space();
    let mut worst = [f64::NEG_INFINITY; 4];
    for i in 0..res {
        for j in 0..res {
            let p = [
                x.get(0).lo() + x.get(0).width() * i as f64 / (res - 1) as f64,
                x.get(1).lo() + x.get(1).width() * j as f64 / (res - 1) as f64,
            ];
            let v = b(&p);
            if spec.initial().contains(&p) {
                worst[0] = worst[0].max(v);
            }
            if spec.unsafe_set().contains(&p) {
                worst[1] = worst[1].max(lambda - v);
            }
            if v <= lambda {
                worst[2] = worst[2].max(b(&f1(&p)) - v - eps);
            }
            if v <= 0.0 {
                worst[3] = worst[3].max(b(&fk(&p)) - v);
            }
        }
    }
    worst
}

/// Whether grid margins show no violation beyond `tol`.
pub fn grid_clean(m: &[f64; 4], tol: f64) -> bool {
    m.iter().all(|&v| v <= tol)
}

/// Interval with outward nudging after every operation.
#[derive(Clone, Copy, Debug)]
pub struct Iv(pub f64, pub f64);

impl Iv {
    fn out(lo: f64, hi: f64) -> Iv {
        Iv(lo.next_down().next_down(), hi.next_up().next_up())
    }
    fn add(self, o: Iv) -> Iv {
        Iv::out(self.0 + o.0, self.1 + o.1)
    }
    fn sub(self, o: Iv) -> Iv {
        Iv::out(self.0 - o.1, self.1 - o.0)
    }
    fn mul(self, o: Iv) -> Iv {
        let p = [self.0 * o.0, self.0 * o.1, self.1 * o.0, self.1 * o.1];
        Iv::out(
            p.iter().copied().fold(f64::INFINITY, f64::min),
            p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }
    fn powi(self, k: u32) -> Iv {
        let mut r = self;
        for _ in 1..k {
            r = r.mul(self);
        }
        if k % 2 == 0 && self.0 <= 0.0 && self.1 >= 0.0 {
            r.0 = r.0.max(0.0);
        }
        r
    }
    fn sin(self) -> Iv {
        // crude but sound: any interval covering a critical point widens to ±1
        let (a, b) = (self.0, self.1);
        if b - a >= std::f64::consts::TAU {
            return Iv(-1.0, 1.0);
        }
        let mut lo = a.sin().min(b.sin());
        let mut hi = a.sin().max(b.sin());
        let half_pi = std::f64::consts::FRAC_PI_2;
        let first = ((a - half_pi) / std::f64::consts::PI).floor() as i64 - 1;
        for m in first..first + 4 {
            let c = half_pi + m as f64 * std::f64::consts::PI;
            if c >= a - 1e-9 && c <= b + 1e-9 {
                if m.rem_euclid(2) == 0 {
                    hi = 1.0;
                } else {
                    lo = -1.0;
                }
            }
        }
        Iv::out(lo.max(-1.0) - 1e-15, (hi + 1e-15).min(1.0))
    }
    fn cos(self) -> Iv {
        Iv(self.0 + std::f64::consts::FRAC_PI_2, self.1 + std::f64::consts::FRAC_PI_2).sin()
    }
    fn exp(self) -> Iv {
        Iv::out(self.0.exp() * (1.0 - 1e-15), self.1.exp() * (1.0 + 1e-15))
    }
}

/// Tree-walk interval evaluation with [`Iv`].
pub fn naive_interval(e: &Expr, b: &[Iv]) -> Iv {
    match e.node() {
        Node::Var(i) => b[*i],
        Node::Const(c) => Iv(*c, *c),
        Node::Add(x, y) => naive_interval(x, b).add(naive_interval(y, b)),
        Node::Sub(x, y) => naive_interval(x, b).sub(naive_interval(y, b)),
        Node::Mul(x, y) => naive_interval(x, b).mul(naive_interval(y, b)),
        Node::Neg(x) => {
            let v = naive_interval(x, b);
            Iv(-v.1, -v.0)
        }
        Node::Pow(x, k) => naive_interval(x, b).powi(*k),
        Node::Sin(x) => naive_interval(x, b).sin(),
        Node::Cos(x) => naive_interval(x, b).cos(),
        Node::Exp(x) => naive_interval(x, b).exp(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conventional {
    Valid,
    Counterexample,
    /// Search reached the minimum box size without a decision.
    Undecided,
}

/// Independent checker for the conventional conditions
/// `B ≤ 0` on `X_I`, `B > 0` on `X_U`, `B(f(x)) ≤ B(x)` on `{B ≤ 0}`,
/// by depth-first bisection with tree-walk intervals and midpoint tests.
pub fn conventional_check(spec: &SafetySpec, b: &Expr, f: &[Expr], min_width: f64) -> Conventional {
    let bf = b.substitute(f).unwrap();
    let to_iv = |r: &IntervalBox| r.dims().iter().map(|d| Iv(d.lo(), d.hi())).collect::<Vec<_>>();
    let mut undecided = false;
    // (region, kind): 0 = I, 1 = U, 2 = evolution
    let jobs = [
        (spec.initial().clone(), 0),
        (spec.unsafe_set().clone(), 1),
        (spec.state_space().clone(), 2),
    ];
    for (region, kind) in jobs {
        let mut stack = vec![region];
        while let Some(r) = stack.pop() {
            let iv = to_iv(&r);
            let bi = naive_interval(b, &iv);
            let feasible = match kind {
                0 => bi.1 > 0.0,
                1 => bi.0 <= 0.0,
                _ => bi.0 <= 0.0 && naive_interval(&bf, &iv).sub(bi).1 > 0.0,
            };
            if !feasible {
                continue;
            }
            let m = r.midpoint();
            let bm = naive_eval(b, &m);
            let violated = match kind {
                0 => bm > 0.0,
                1 => bm <= 0.0,
                _ => bm <= 0.0 && naive_eval(&bf, &m) - bm > 0.0,
            };
            if violated {
                return Conventional::Counterexample;
            }
            if r.max_width() < min_width {
                undecided = true;
                continue;
            }
            let (l, h) = r.bisect(r.widest_dim());
            stack.push(h);
            stack.push(l);
        }
    }
    if undecided {
        Conventional::Undecided
    } else {
        Conventional::Valid
    }
}

/// Straight-line hinge loss: returns (L_I, L_U, L_1, L_k) for `b` evaluated
/// independently of the network's own forward pass.
pub fn reference_loss(
    b: &dyn Fn(&[f64]) -> f64,
    data: &DatasetTriple,
    kbc: &KbcSpec,
    eta: [f64; 4],
) -> [f64; 4] {
    let relu = |v: f64| if v > 0.0 { v } else { 0.0 };
    let (eps, lambda) = (kbc.epsilon(), kbc.lambda());
    let mut sum = [0.0; 4];
    let (mut n_i, mut n_u) = (0usize, 0usize);
    for i in 0..data.len() {
        let s = &data.states[i];
        if data.in_initial[i] {
            sum[0] += relu(b(s) + eta[0]);
            n_i += 1;
        }
        if data.in_unsafe[i] {
            sum[1] += relu(-b(s) + lambda + eta[1]);
            n_u += 1;
        }
        sum[2] += relu(b(&data.one_step[i]) - b(s) - eps + eta[2]);
        sum[3] += relu(b(&data.k_step[i]) - b(s) + eta[3]);
    }
    let n = data.len() as f64;
    [sum[0] / n_i as f64, sum[1] / n_u as f64, sum[2] / n, sum[3] / n]
}

/// Network output written out by hand.
pub fn reference_forward(p: &NetworkParams, x: &[f64]) -> f64 {
    let mut out = p.output_bias;
    for j in 0..p.width() {
        let mut z = p.biases[j];
        for (w, xi) in p.weights[j].iter().zip(x) {
            z += w * xi;
        }
        let a = match p.activations[j] {
            Activation::Square => z * z,
            Activation::Sin => z.sin(),
            Activation::Cos => z.cos(),
        };
        out += p.output_weights[j] * a;
    }
    out
}

/// Smallest |argument| over every hinge term in the loss.
pub fn min_hinge_distance(p: &NetworkParams, data: &DatasetTriple, kbc: &KbcSpec, eta: [f64; 4]) -> f64 {
    let b = |x: &[f64]| reference_forward(p, x);
    let (eps, lambda) = (kbc.epsilon(), kbc.lambda());
    let mut d = f64::INFINITY;
    for i in 0..data.len() {
        let s = &data.states[i];
        let bs = b(s);
        if data.in_initial[i] {
            d = d.min((bs + eta[0]).abs());
        }
        if data.in_unsafe[i] {
            d = d.min((-bs + lambda + eta[1]).abs());
        }
        d = d.min((b(&data.one_step[i]) - bs - eps + eta[2]).abs());
        d = d.min((b(&data.k_step[i]) - bs + eta[3]).abs());
    }
    d
}

/// Random dataset over `[-2, 2]²` with `X_I = [-2,-1]×[-2,2]` and
/// `X_U = [1,2]×[-2,2]`; evolutions come from a random linear map.
pub fn random_dataset(rng: &mut impl Rng, rows: usize, k: usize) -> (SafetySpec, DatasetTriple) {
    let spec = SafetySpec::new(
        bx(&[(-2.0, 2.0), (-2.0, 2.0)]),
        bx(&[(-2.0, -1.0), (-2.0, 2.0)]),
        bx(&[(1.0, 2.0), (-2.0, 2.0)]),
    )
    .unwrap();
    let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let step = |x: &[f64]| vec![a[0] * x[0] + a[1] * x[1], a[2] * x[0] + a[3] * x[1]];
    let mut data = DatasetTriple::default();
    for i in 0..rows {
        let lo = match i % 3 {
            0 => -2.0,
            1 => 1.0,
            _ => -1.0,
        };
        let s = vec![rng.gen_range(lo..lo + 1.0), rng.gen_range(-2.0..2.0)];
        let one = step(&s);
        let mut kk = one.clone();
        for _ in 1..k {
            kk = step(&kk);
        }
        data.in_initial.push(spec.initial().contains(&s));
        data.in_unsafe.push(spec.unsafe_set().contains(&s));
        data.states.push(s);
        data.one_step.push(one);
        data.k_step.push(kk);
    }
    (spec, data)
}

pub fn random_network(rng: &mut impl Rng, h: usize) -> NetworkParams {
    let acts = [Activation::Square, Activation::Sin, Activation::Cos];
    let activations = (0..h).map(|_| acts[rng.gen_range(0..3)]).collect();
    NetworkParams::init(2, activations, rng.gen())
}

/// Small random verification problem on `X = [-2, 2]²`: affine dynamics,
/// a linear-plus-quadratic certificate, `X_I` on its negative side and
/// `X_U` on its positive side.
pub fn random_instance(rng: &mut impl Rng, k: usize, eps: f64) -> VerificationTask {
    let kbc = KbcSpec::new(k, eps).unwrap();
    let lambda = kbc.lambda();
    let (a, b0, q, initial, unsafe_set) = loop {
        let a = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let b0 = rng.gen_range(-0.5..0.5);
        let q = rng.gen_range(-0.05..0.05);
        let b = |x: &[f64]| a[0] * x[0] + a[1] * x[1] + b0 + q * x[0] * x[0];
        let mut place = |want: &dyn Fn(f64) -> bool| {
            (0..200).find_map(|_| {
                let c = [rng.gen_range(-1.7..1.7), rng.gen_range(-1.7..1.7)];
                let r = bx(&[(c[0] - 0.2, c[0] + 0.2), (c[1] - 0.2, c[1] + 0.2)]);
                (r.corners().iter().all(|p| want(b(p))) && want(b(&c))).then_some(r)
            })
        };
        let initial = place(&|v| v < -0.3);
        let unsafe_set = place(&|v| v > lambda + 0.3);
        if let (Some(i), Some(u)) = (initial, unsafe_set) {
            break (a, b0, q, i, u);
        }
    };
    let spec = SafetySpec::new(bx(&[(-2.0, 2.0), (-2.0, 2.0)]), initial, unsafe_set).unwrap();
    let (x1, x2) = (Expr::var(0), Expr::var(1));
    let cert = x1.mul(&Expr::constant(a[0]))
        .add(&x2.mul(&Expr::constant(a[1])))
        .add(&Expr::constant(b0))
        .add(&x1.powi(2).mul(&Expr::constant(q)));
    // near-identity map plus a drift, so both outcomes are common
    let f1: Vec<Expr> = (0..2)
        .map(|i| {
            let row = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)];
            x1.mul(&Expr::constant(row[0] + (i == 0) as u8 as f64))
                .add(&x2.mul(&Expr::constant(row[1] + (i == 1) as u8 as f64)))
                .add(&Expr::constant(rng.gen_range(-0.3..0.3)))
        })
        .collect();
    let fk = kbarrier::dynamics::compose(&f1, k);
    VerificationTask::new(cert, f1, fk, spec, kbc, 1e-3)
        .unwrap()
        .with_max_boxes(500_000)
}

/// [`grid_margins`] for a verification task.
pub fn task_grid_margins(task: &VerificationTask, res: usize) -> [f64; 4] {
    let eval = |es: &[Expr], x: &[f64]| es.iter().map(|e| naive_eval(e, x)).collect::<Vec<_>>();
    grid_margins(
        &task.spec,
        &task.kbc,
        &|x| naive_eval(&task.certificate, x),
        &|x| eval(&task.f1, x),
        &|x| eval(&task.fk, x),
        res,
    )
}
