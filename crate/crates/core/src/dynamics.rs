//! Ground-truth simulators, trajectory data matrices and the data-driven
//! closed-loop model built from a single trajectory.
//!
//! With noise-free data and a dictionary that contains every term of the
//! true dynamics `x⁺ = A·D(x)`, any right inverse `Q` of the dictionary data
//! matrix (`D0·Q = I`) reproduces the dynamics exactly as `x⁺ = X1·Q·D(x)`.
//! The truth model only generates data; everything downstream of
//! [`DataDrivenModel::build`] uses the data-driven representation.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::{substitute_all, Expr};
use crate::tape::Tape;

/// Relative singular-value threshold below which a data matrix is treated as
/// rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// Max-norm tolerance on `D0·Q - I` checked after building `Q`.
pub const RIGHT_INVERSE_TOLERANCE: f64 = 1e-8;

/// Tree size above which k-step composition logs a warning.
pub const COMPOSITION_WARN_NODES: u64 = 1_000_000;

fn check_vars(exprs: &[Expr], n: usize) -> Result<()> {
    for e in exprs {
        if let Some(i) = e.max_var() {
            if i >= n {
                return Err(Error::VarOutOfRange { index: i, dim: n });
            }
        }
    }
    Ok(())
}

fn check_len(x: &[f64], n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    Ok(())
}

/// Known transition map used to generate data (and nothing else).
#[derive(Clone, Debug)]
pub struct TruthModel {
    name: String,
    step: Vec<Expr>,
    /// Sampling time in seconds; already folded into `step`.
    dt: f64,
    tape: Tape,
}

impl TruthModel {
    pub fn new(name: impl Into<String>, step: Vec<Expr>, dt: f64) -> Result<Self> {
        let n = step.len();
        if n == 0 {
            return Err(Error::config("truth model needs at least one state"));
        }
        check_vars(&step, n)?;
        let tape = Tape::compile(&step);
        Ok(TruthModel {
            name: name.into(),
            step,
            dt,
            tape,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.step.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_exprs(&self) -> &[Expr] {
        &self.step
    }

    pub fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x, self.dim())?;
        self.tape.eval_point(x)
    }

    pub fn iterate(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        let mut s = x.to_vec();
        for _ in 0..k {
            s = self.step(&s)?;
        }
        Ok(s)
    }
}

/// Ordered list of candidate terms `D(x)`.
#[derive(Clone, Debug)]
pub struct Dictionary {
    terms: Vec<Expr>,
    n: usize,
    tape: Tape,
}

impl Dictionary {
    pub fn new(terms: Vec<Expr>, n: usize) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::config("dictionary must have at least one term"));
        }
        check_vars(&terms, n)?;
        let tape = Tape::compile(&terms);
        Ok(Dictionary { terms, n, tape })
    }

    /// The dictionary `[x1, ..., xn]` of a linear system.
    pub fn identity(n: usize) -> Self {
        Dictionary::new((0..n).map(Expr::var).collect(), n).expect("valid identity dictionary")
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[Expr] {
        &self.terms
    }

    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_len(x, self.n)?;
        Ok(DVector::from_vec(self.tape.eval_point(x)?))
    }
}

/// The data matrices `X0 = [x(0) … x(T-1)]`, `X1 = [x(1) … x(T)]` and
/// `D0 = [D(x(0)) … D(x(T-1))]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryData {
    pub x0: DMatrix<f64>,
    pub x1: DMatrix<f64>,
    pub d0: DMatrix<f64>,
}

impl TrajectoryData {
    /// Assembles the data matrices from paired state columns, evaluating the
    /// dictionary on `x0`.
    pub fn from_matrices(x0: DMatrix<f64>, x1: DMatrix<f64>, dict: &Dictionary) -> Result<Self> {
        if x0.shape() != x1.shape() {
            return Err(Error::DimensionMismatch {
                expected: x0.ncols(),
                got: x1.ncols(),
            });
        }
        if x0.nrows() != dict.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: dict.state_dim(),
                got: x0.nrows(),
            });
        }
        let mut d0 = DMatrix::zeros(dict.len(), x0.ncols());
        for (j, col) in x0.column_iter().enumerate() {
            let x: Vec<f64> = col.iter().copied().collect();
            d0.set_column(j, &dict.eval(&x)?);
        }
        Ok(TrajectoryData { x0, x1, d0 })
    }

    /// Builds data matrices from consecutive states `x(0) … x(T)`.
    pub fn from_states(states: &[Vec<f64>], dict: &Dictionary) -> Result<Self> {
        let n = dict.state_dim();
        if states.len() < 2 {
            return Err(Error::InsufficientSamples {
                samples: states.len().saturating_sub(1),
                terms: dict.len(),
            });
        }
        for s in states {
            check_len(s, n)?;
        }
        let t = states.len() - 1;
        let x0 = DMatrix::from_fn(n, t, |i, j| states[j][i]);
        let x1 = DMatrix::from_fn(n, t, |i, j| states[j + 1][i]);
        TrajectoryData::from_matrices(x0, x1, dict)
    }

    pub fn samples(&self) -> usize {
        self.x0.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.x0.nrows()
    }

    /// States `x(0) … x(T)` of a shift-consistent trajectory.
    pub fn states(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self
            .x0
            .column_iter()
            .map(|c| c.iter().copied().collect())
            .collect();
        if let Some(last) = self.x1.column_iter().last() {
            out.push(last.iter().copied().collect());
        }
        out
    }

    /// Writes `t,x1,…,xn` rows for `x(0) … x(T)`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_states_csv(w, &self.states())
    }

    /// Reads a trajectory written by [`write_csv`](Self::write_csv) (or any
    /// CSV with a leading time column followed by state columns).
    pub fn read_csv<R: Read>(r: R, dict: &Dictionary) -> Result<Self> {
        TrajectoryData::from_states(&read_states_csv(r)?, dict)
    }
}

pub fn write_states_csv<W: Write>(w: W, states: &[Vec<f64>]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let n = states.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    wtr.write_record(&header)?;
    for (t, s) in states.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(s.iter().map(|v| format!("{v:?}")));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_states_csv<R: Read>(r: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut states = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config(format!("bad number '{f}' in trajectory CSV")))
            })
            .collect::<Result<Vec<_>>>()?;
        states.push(vals);
    }
    Ok(states)
}

/// Rolls the truth model from `x0` for `t` steps and assembles the data
/// matrices. Requires `t >= N` so that `D0` can have full row rank.
pub fn collect_trajectory(
    truth: &TruthModel,
    dict: &Dictionary,
    x0: &[f64],
    t: usize,
) -> Result<TrajectoryData> {
    if t < dict.len() {
        return Err(Error::InsufficientSamples {
            samples: t,
            terms: dict.len(),
        });
    }
    if dict.state_dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.dim(),
            got: dict.state_dim(),
        });
    }
    check_len(x0, truth.dim())?;
    let mut states = Vec::with_capacity(t + 1);
    states.push(x0.to_vec());
    for i in 0..t {
        let next = truth.step(&states[i])?;
        states.push(next);
    }
    TrajectoryData::from_states(&states, dict)
}

struct RightInverse {
    q: DMatrix<f64>,
    sigma_min: f64,
    sigma_max: f64,
}

/// Minimum-norm right inverse of a wide full-row-rank matrix, computed from
/// its SVD rather than the normal equations (which square the condition
/// number).
fn right_inverse(m: &DMatrix<f64>) -> Result<RightInverse> {
    let (rows, cols) = m.shape();
    if cols < rows {
        return Err(Error::InsufficientSamples {
            samples: cols,
            terms: rows,
        });
    }
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let sigma_min = svd.singular_values.min();
    if !(sigma_max > 0.0) || sigma_min / sigma_max <= RANK_TOLERANCE {
        return Err(Error::PersistencyOfExcitation {
            sigma_min,
            sigma_max,
        });
    }
    let q = svd
        .pseudo_inverse(0.0)
        .map_err(|e| Error::config(format!("pseudo-inverse failed: {e}")))?;
    let residual = (m * &q - DMatrix::identity(rows, rows)).amax();
    if residual > RIGHT_INVERSE_TOLERANCE {
        return Err(Error::RightInverseResidual { residual });
    }
    Ok(RightInverse {
        q,
        sigma_min,
        sigma_max,
    })
}

/// Data-driven closed loop `x⁺ = X1·Q·D(x)` with constant `Q`.
#[derive(Clone, Debug)]
pub struct DataDrivenModel {
    q: DMatrix<f64>,
    x1: DMatrix<f64>,
    dictionary: Dictionary,
    /// `X1·Q`, the data-based estimate of the coefficient matrix `A`.
    transition: DMatrix<f64>,
    sigma_min: f64,
    sigma_max: f64,
}

impl DataDrivenModel {
    pub fn build(traj: &TrajectoryData, dictionary: &Dictionary) -> Result<Self> {
        if traj.d0.nrows() != dictionary.len() {
            return Err(Error::DimensionMismatch {
                expected: dictionary.len(),
                got: traj.d0.nrows(),
            });
        }
        let inv = right_inverse(&traj.d0)?;
        let transition = &traj.x1 * &inv.q;
        Ok(DataDrivenModel {
            q: inv.q,
            x1: traj.x1.clone(),
            dictionary: dictionary.clone(),
            transition,
            sigma_min: inv.sigma_min,
            sigma_max: inv.sigma_max,
        })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn x1(&self) -> &DMatrix<f64> {
        &self.x1
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dictionary
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn state_dim(&self) -> usize {
        self.x1.nrows()
    }

    pub fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dictionary.eval(x)?;
        Ok((&self.transition * d).iter().copied().collect())
    }

    /// `f_k(x)` by the recursion `f_k = step(f_{k-1})`.
    pub fn k_step(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        assert!(k >= 1, "k must be >= 1");
        let mut s = self.step(x)?;
        for _ in 1..k {
            s = self.step(&s)?;
        }
        Ok(s)
    }

    pub fn symbolic_step(&self) -> Vec<Expr> {
        let terms = self.dictionary.terms();
        self.transition
            .row_iter()
            .map(|row| {
                let coeffs: Vec<f64> = row.iter().copied().collect();
                Expr::linear_combination(&coeffs, terms)
            })
            .collect()
    }

    pub fn symbolic_k_step(&self, k: usize) -> Vec<Expr> {
        compose(&self.symbolic_step(), k)
    }
}

/// `f ∘ f ∘ … ∘ f` (k times) by repeated substitution.
pub fn compose(f1: &[Expr], k: usize) -> Vec<Expr> {
    assert!(k >= 1, "k must be >= 1");
    let mut f = f1.to_vec();
    for _ in 1..k {
        f = substitute_all(f1, &f).expect("one replacement per state variable");
    }
    let size = f.iter().map(Expr::tree_size).fold(0u64, u64::saturating_add);
    if size > COMPOSITION_WARN_NODES {
        log::warn!("{k}-step composition has {size} tree nodes (evaluated as a shared DAG)");
    }
    f
}

/// Linear specialization `x⁺ = Â·x` with `Â = X1·Q`, `X0·Q = I`.
#[derive(Clone, Debug)]
pub struct LinearDataModel {
    a_hat: DMatrix<f64>,
}

impl LinearDataModel {
    pub fn build(x0: &DMatrix<f64>, x1: &DMatrix<f64>) -> Result<Self> {
        if x0.shape() != x1.shape() {
            return Err(Error::DimensionMismatch {
                expected: x0.ncols(),
                got: x1.ncols(),
            });
        }
        let inv = right_inverse(x0)?;
        Ok(LinearDataModel {
            a_hat: x1 * &inv.q,
        })
    }

    /// Wraps a known matrix; used for analysis and tests.
    pub fn from_matrix(a_hat: DMatrix<f64>) -> Self {
        assert!(a_hat.is_square(), "transition matrix must be square");
        LinearDataModel { a_hat }
    }

    pub fn a_hat(&self) -> &DMatrix<f64> {
        &self.a_hat
    }

    pub fn state_dim(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn power(&self, k: usize) -> DMatrix<f64> {
        assert!(k >= 1, "k must be >= 1");
        let mut p = self.a_hat.clone();
        for _ in 1..k {
            p = &self.a_hat * p;
        }
        p
    }

    pub fn k_step(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        check_len(x, self.state_dim())?;
        let v = self.power(k) * DVector::from_column_slice(x);
        Ok(v.iter().copied().collect())
    }

    /// `Â^k·x` as expressions, built in closed form from the matrix power.
    pub fn symbolic_k_step(&self, k: usize) -> Vec<Expr> {
        let p = self.power(k);
        let vars: Vec<Expr> = (0..self.state_dim()).map(Expr::var).collect();
        p.row_iter()
            .map(|row| {
                let coeffs: Vec<f64> = row.iter().copied().collect();
                Expr::linear_combination(&coeffs, &vars)
            })
            .collect()
    }
}
