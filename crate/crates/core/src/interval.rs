//! Outward-rounded interval arithmetic and axis-aligned boxes.
//!
//! Every operation returns an enclosure of the exact real result for all
//! inputs drawn from the operand intervals. Rounding is directed by
//! checking exactness of each floating-point result with error-free
//! transformations (TwoSum for addition, FMA for multiplication), so exact
//! operations such as `1.0 - 1.0` stay point intervals. Transcendental
//! functions are widened by a fixed number of ulps around the libm result.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ulps of slack applied around libm results for sin, cos and exp.
const LIBM_ULPS: usize = 2;

/// Smallest positive normal; below it FMA-based exactness checks are unreliable.
const TINY: f64 = f64::MIN_POSITIVE;

#[inline]
fn nan_guard_down(x: f64) -> f64 {
    if x.is_nan() {
        f64::NEG_INFINITY
    } else {
        x
    }
}

#[inline]
fn nan_guard_up(x: f64) -> f64 {
    if x.is_nan() {
        f64::INFINITY
    } else {
        x
    }
}

/// Lower and upper bounds on the real sum `a + b`.
#[inline]
pub(crate) fn add_bounds(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    if !s.is_finite() {
        if a.is_finite() && b.is_finite() {
            // overflow from finite operands
            return if s > 0.0 {
                (f64::MAX, f64::INFINITY)
            } else {
                (f64::NEG_INFINITY, f64::MIN)
            };
        }
        return (nan_guard_down(s), nan_guard_up(s));
    }
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    if err < 0.0 {
        (s.next_down(), s)
    } else if err > 0.0 {
        (s, s.next_up())
    } else {
        (s, s)
    }
}

/// Lower and upper bounds on the real product `a * b`.
#[inline]
pub(crate) fn mul_bounds(a: f64, b: f64) -> (f64, f64) {
    if a == 0.0 || b == 0.0 {
        if a.is_finite() && b.is_finite() {
            return (0.0, 0.0);
        }
        // 0 * inf: the operands come from unbounded enclosures
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let p = a * b;
    if !p.is_finite() {
        if a.is_finite() && b.is_finite() {
            return if p > 0.0 {
                (f64::MAX, f64::INFINITY)
            } else {
                (f64::NEG_INFINITY, f64::MIN)
            };
        }
        return (nan_guard_down(p), nan_guard_up(p));
    }
    if p.abs() < TINY {
        return (p.next_down(), p.next_up());
    }
    let err = a.mul_add(b, -p);
    if err < 0.0 {
        (p.next_down(), p)
    } else if err > 0.0 {
        (p, p.next_up())
    } else {
        (p, p)
    }
}

#[inline]
fn widen(v: f64, ulps: usize) -> (f64, f64) {
    let (mut lo, mut hi) = (v, v);
    for _ in 0..ulps {
        lo = lo.next_down();
        hi = hi.next_up();
    }
    (lo, hi)
}

/// `x^n` bounds for `x >= 0`, by a chain of directed multiplications.
fn pow_nonneg_bounds(x: f64, n: u32) -> (f64, f64) {
    debug_assert!(x >= 0.0 && n >= 1);
    let (mut lo, mut hi) = (x, x);
    for _ in 1..n {
        lo = mul_bounds(lo, x).0;
        hi = mul_bounds(hi, x).1;
    }
    (lo.max(0.0), hi)
}

/// Closed real interval `[lo, hi]`.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = Error;

    fn try_from([lo, hi]: [f64; 2]) -> Result<Self> {
        Interval::new(lo, hi)
    }
}

impl From<Interval> for [f64; 2] {
    fn from(iv: Interval) -> Self {
        [iv.lo, iv.hi]
    }
}

impl fmt::Debug for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:?}, {:?}]", self.lo, self.hi)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl Interval {
    pub const ENTIRE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    /// Validated constructor: both bounds finite and `lo <= hi`.
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::config(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    /// Unchecked constructor for enclosures, which may have infinite bounds.
    #[inline]
    pub(crate) fn raw(lo: f64, hi: f64) -> Self {
        debug_assert!(!(lo > hi), "inverted interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    #[inline]
    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    #[inline]
    pub fn mid(&self) -> f64 {
        if self.lo == self.hi {
            return self.lo;
        }
        let m = 0.5 * self.lo + 0.5 * self.hi;
        m.clamp(self.lo, self.hi)
    }

    #[inline]
    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval::raw(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    /// Intersection of two enclosures of the same quantity. If rounding makes
    /// them disjoint the hull is returned instead.
    pub fn intersect_enclosure(&self, other: &Interval) -> Interval {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo <= hi {
            Interval::raw(lo, hi)
        } else {
            self.hull(other)
        }
    }

    pub fn powi(self, n: u32) -> Interval {
        assert!(n >= 1, "exponent must be positive");
        if n == 1 {
            return self;
        }
        if n % 2 == 0 {
            if self.lo >= 0.0 {
                let (lo, _) = pow_nonneg_bounds(self.lo, n);
                let (_, hi) = pow_nonneg_bounds(self.hi, n);
                Interval::raw(lo, hi)
            } else if self.hi <= 0.0 {
                let (lo, _) = pow_nonneg_bounds(-self.hi, n);
                let (_, hi) = pow_nonneg_bounds(-self.lo, n);
                Interval::raw(lo, hi)
            } else {
                let m = (-self.lo).max(self.hi);
                Interval::raw(0.0, pow_nonneg_bounds(m, n).1)
            }
        } else {
            let lo = if self.lo >= 0.0 {
                pow_nonneg_bounds(self.lo, n).0
            } else {
                -pow_nonneg_bounds(-self.lo, n).1
            };
            let hi = if self.hi >= 0.0 {
                pow_nonneg_bounds(self.hi, n).1
            } else {
                -pow_nonneg_bounds(-self.hi, n).0
            };
            Interval::raw(lo, hi)
        }
    }

    pub fn exp(self) -> Interval {
        let lo = if self.lo == 0.0 {
            1.0
        } else {
            widen(self.lo.exp(), LIBM_ULPS).0.max(0.0)
        };
        let hi = if self.hi == 0.0 {
            1.0
        } else {
            widen(self.hi.exp(), LIBM_ULPS).1
        };
        Interval::raw(nan_guard_down(lo), nan_guard_up(hi))
    }

    pub fn sin(self) -> Interval {
        if self.lo == 0.0 && self.hi == 0.0 {
            return Interval::point(0.0);
        }
        if !self.lo.is_finite() || !self.hi.is_finite() || self.width() >= TAU {
            return Interval::raw(-1.0, 1.0);
        }
        let a = widen(self.lo.sin(), LIBM_ULPS);
        let b = widen(self.hi.sin(), LIBM_ULPS);
        let mut lo = a.0.min(b.0).max(-1.0);
        let mut hi = a.1.max(b.1).min(1.0);
        if contains_phase(&self, FRAC_PI_2) {
            hi = 1.0;
        }
        if contains_phase(&self, -FRAC_PI_2) {
            lo = -1.0;
        }
        Interval::raw(lo, hi)
    }

    pub fn cos(self) -> Interval {
        if self.lo == 0.0 && self.hi == 0.0 {
            return Interval::point(1.0);
        }
        if !self.lo.is_finite() || !self.hi.is_finite() || self.width() >= TAU {
            return Interval::raw(-1.0, 1.0);
        }
        let a = widen(self.lo.cos(), LIBM_ULPS);
        let b = widen(self.hi.cos(), LIBM_ULPS);
        let mut lo = a.0.min(b.0).max(-1.0);
        let mut hi = a.1.max(b.1).min(1.0);
        if contains_phase(&self, 0.0) {
            hi = 1.0;
        }
        if contains_phase(&self, PI) {
            lo = -1.0;
        }
        Interval::raw(lo, hi)
    }
}

/// Whether `iv` may contain a point `phase + 2πk` for some integer k.
/// Errs on the side of `true` near the boundary.
fn contains_phase(iv: &Interval, phase: f64) -> bool {
    let slack = 1e-13 * (1.0 + iv.lo.abs().max(iv.hi.abs()));
    let k0 = ((iv.lo - phase) / TAU).floor();
    (0..3).any(|j| {
        let t = phase + TAU * (k0 + j as f64);
        t >= iv.lo - slack && t <= iv.hi + slack
    })
}

impl Add for Interval {
    type Output = Interval;

    #[inline]
    fn add(self, rhs: Interval) -> Interval {
        Interval::raw(add_bounds(self.lo, rhs.lo).0, add_bounds(self.hi, rhs.hi).1)
    }
}

impl Sub for Interval {
    type Output = Interval;

    #[inline]
    fn sub(self, rhs: Interval) -> Interval {
        self + (-rhs)
    }
}

impl Neg for Interval {
    type Output = Interval;

    #[inline]
    fn neg(self) -> Interval {
        Interval::raw(-self.hi, -self.lo)
    }
}

impl Mul for Interval {
    type Output = Interval;

    fn mul(self, rhs: Interval) -> Interval {
        if self.is_point() && rhs.is_point() {
            let (lo, hi) = mul_bounds(self.lo, rhs.lo);
            return Interval::raw(lo, hi);
        }
        let cands = [
            mul_bounds(self.lo, rhs.lo),
            mul_bounds(self.lo, rhs.hi),
            mul_bounds(self.hi, rhs.lo),
            mul_bounds(self.hi, rhs.hi),
        ];
        let lo = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let hi = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        Interval::raw(lo, hi)
    }
}

/// Axis-aligned box: one interval per state dimension.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntervalBox {
    dims: Vec<Interval>,
}

impl fmt::Debug for IntervalBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.dims.iter()).finish()
    }
}

impl fmt::Display for IntervalBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, "×")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl IntervalBox {
    pub fn new(dims: Vec<Interval>) -> Self {
        IntervalBox { dims }
    }

    /// Builds a box from `(lo, hi)` bounds, validating each.
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        bounds
            .iter()
            .map(|&(lo, hi)| Interval::new(lo, hi))
            .collect::<Result<Vec<_>>>()
            .map(IntervalBox::new)
    }

    pub fn point(x: &[f64]) -> Self {
        IntervalBox::new(x.iter().map(|&v| Interval::point(v)).collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn dims(&self) -> &[Interval] {
        &self.dims
    }

    #[inline]
    pub fn get(&self, i: usize) -> Interval {
        self.dims[i]
    }

    pub fn set(&mut self, i: usize, iv: Interval) {
        self.dims[i] = iv;
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.dims.iter().map(Interval::mid).collect()
    }

    pub fn max_width(&self) -> f64 {
        self.dims.iter().map(Interval::width).fold(0.0, f64::max)
    }

    /// Index of the widest dimension (lowest index on ties).
    pub fn widest_dim(&self) -> usize {
        let mut best = 0;
        for (i, d) in self.dims.iter().enumerate() {
            if d.width() > self.dims[best].width() {
                best = i;
            }
        }
        best
    }

    /// Splits dimension `i` at its midpoint.
    pub fn bisect(&self, i: usize) -> (IntervalBox, IntervalBox) {
        let d = self.dims[i];
        let m = d.mid();
        let mut left = self.clone();
        let mut right = self.clone();
        left.dims[i] = Interval::raw(d.lo, m);
        right.dims[i] = Interval::raw(m, d.hi);
        (left, right)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dims.len() && self.dims.iter().zip(x).all(|(d, &v)| d.contains(v))
    }

    pub fn contains_box(&self, other: &IntervalBox) -> bool {
        other.dim() == self.dim()
            && self
                .dims
                .iter()
                .zip(&other.dims)
                .all(|(a, b)| a.contains_interval(b))
    }

    /// Whether the two closed boxes share at least one point.
    pub fn intersects(&self, other: &IntervalBox) -> bool {
        self.dims
            .iter()
            .zip(&other.dims)
            .all(|(a, b)| a.lo <= b.hi && b.lo <= a.hi)
    }

    /// Projects `x` onto the box.
    pub fn clamp(&self, x: &mut [f64]) {
        for (v, d) in x.iter_mut().zip(&self.dims) {
            *v = v.clamp(d.lo, d.hi);
        }
    }

    /// All 2^n corner points.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dims.len();
        (0..1usize << n)
            .map(|mask| {
                (0..n)
                    .map(|i| {
                        if mask >> i & 1 == 1 {
                            self.dims[i].hi
                        } else {
                            self.dims[i].lo
                        }
                    })
                    .collect()
            })
            .collect()
    }
}
