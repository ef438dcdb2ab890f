use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::IntervalBox;

/// Induction depth `k` and per-step slack `ε`; `λ = (k-1)·ε` is the
/// unsafe-region threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KbcSpecRepr", into = "KbcSpecRepr")]
pub struct KbcSpec {
    k: usize,
    epsilon: f64,
    lambda: f64,
}

#[derive(Serialize, Deserialize)]
struct KbcSpecRepr {
    k: usize,
    epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
}

impl TryFrom<KbcSpecRepr> for KbcSpec {
    type Error = Error;

    fn try_from(r: KbcSpecRepr) -> Result<Self> {
        let spec = KbcSpec::new(r.k, r.epsilon)?;
        if let Some(l) = r.lambda {
            if (l - spec.lambda).abs() > 1e-12 * (1.0 + l.abs()) {
                return Err(Error::config(format!(
                    "lambda {l} inconsistent with (k-1)*epsilon = {}",
                    spec.lambda
                )));
            }
        }
        Ok(spec)
    }
}

impl From<KbcSpec> for KbcSpecRepr {
    fn from(s: KbcSpec) -> Self {
        KbcSpecRepr {
            k: s.k,
            epsilon: s.epsilon,
            lambda: Some(s.lambda),
        }
    }
}

impl KbcSpec {
    pub fn new(k: usize, epsilon: f64) -> Result<Self> {
        if k < 1 {
            return Err(Error::config("k must be >= 1"));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::config(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        Ok(KbcSpec {
            k,
            epsilon,
            lambda: (k - 1) as f64 * epsilon,
        })
    }

    /// The conventional barrier-certificate case `k = 1, ε = 0`.
    pub fn conventional() -> Self {
        KbcSpec::new(1, 0.0).expect("valid")
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// State space `X`, initial set `X_I` and unsafe set `X_U`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SafetySpecRepr", into = "SafetySpecRepr")]
pub struct SafetySpec {
    state_space: IntervalBox,
    initial: IntervalBox,
    unsafe_set: IntervalBox,
}

#[derive(Serialize, Deserialize)]
struct SafetySpecRepr {
    state_space: IntervalBox,
    initial: IntervalBox,
    #[serde(rename = "unsafe")]
    unsafe_set: IntervalBox,
}

impl TryFrom<SafetySpecRepr> for SafetySpec {
    type Error = Error;

    fn try_from(r: SafetySpecRepr) -> Result<Self> {
        SafetySpec::new(r.state_space, r.initial, r.unsafe_set)
    }
}

impl From<SafetySpec> for SafetySpecRepr {
    fn from(s: SafetySpec) -> Self {
        SafetySpecRepr {
            state_space: s.state_space,
            initial: s.initial,
            unsafe_set: s.unsafe_set,
        }
    }
}

impl SafetySpec {
    pub fn new(state_space: IntervalBox, initial: IntervalBox, unsafe_set: IntervalBox) -> Result<Self> {
        let n = state_space.dim();
        if n == 0 || initial.dim() != n || unsafe_set.dim() != n {
            return Err(Error::config("state, initial and unsafe boxes must share a positive dimension"));
        }
        if !state_space.contains_box(&initial) {
            return Err(Error::config(format!(
                "initial set {initial} is not contained in the state space {state_space}"
            )));
        }
        if !state_space.contains_box(&unsafe_set) {
            return Err(Error::config(format!(
                "unsafe set {unsafe_set} is not contained in the state space {state_space}"
            )));
        }
        if initial.intersects(&unsafe_set) {
            return Err(Error::config(format!(
                "initial set {initial} and unsafe set {unsafe_set} intersect"
            )));
        }
        Ok(SafetySpec {
            state_space,
            initial,
            unsafe_set,
        })
    }

    pub fn dim(&self) -> usize {
        self.state_space.dim()
    }

    pub fn state_space(&self) -> &IntervalBox {
        &self.state_space
    }

    pub fn initial(&self) -> &IntervalBox {
        &self.initial
    }

    pub fn unsafe_set(&self) -> &IntervalBox {
        &self.unsafe_set
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(b: &[(f64, f64)]) -> IntervalBox {
        IntervalBox::from_bounds(b).unwrap()
    }

    #[test]
    fn lambda_is_derived() {
        let s = KbcSpec::new(3, 0.1).unwrap();
        assert!((s.lambda() - 0.2).abs() < 1e-15);
        assert_eq!(KbcSpec::conventional().lambda(), 0.0);
        assert!(KbcSpec::new(0, 0.1).is_err());
        assert!(KbcSpec::new(2, -0.1).is_err());
    }

    #[test]
    fn lambda_mismatch_rejected() {
        let ok: KbcSpec = serde_json::from_str(r#"{"k":2,"epsilon":0.1}"#).unwrap();
        assert_eq!(ok.k(), 2);
        let bad = serde_json::from_str::<KbcSpec>(r#"{"k":2,"epsilon":0.1,"lambda":0.5}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn safety_spec_validation() {
        let x = bx(&[(-2.0, 2.0), (-2.0, 2.0)]);
        let xi = bx(&[(0.5, 1.5), (-2.0, -1.0)]);
        let xu = bx(&[(-0.5, 0.5), (0.6, 1.8)]);
        assert!(SafetySpec::new(x.clone(), xi.clone(), xu.clone()).is_ok());
        let outside = bx(&[(1.5, 2.5), (0.0, 1.0)]);
        assert!(SafetySpec::new(x.clone(), outside, xu.clone()).is_err());
        let overlapping = bx(&[(0.0, 1.0), (0.0, 1.0)]);
        let err = SafetySpec::new(x, overlapping, xu).unwrap_err();
        assert!(err.to_string().contains("intersect"));
    }
}
