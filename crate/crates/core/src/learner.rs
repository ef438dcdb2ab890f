//! Dataset construction and training of candidate certificates.
//!
//! The loss has one hinge term per certificate condition:
//!
//! ```text
//! L_I = mean_{s ∈ S_I} ReLU( B(s) + η1)
//! L_U = mean_{s ∈ S_U} ReLU(-B(s) + λ + η2)
//! L_1 = mean_{s ∈ S}   ReLU( B(s⁺)  - B(s) - ε + η3)
//! L_k = mean_{s ∈ S}   ReLU( B(sᵏ⁺) - B(s) + η4)
//! ```
//!
//! The two evolution terms range over the whole sample set because the
//! sub-level sets of `B` are unknown while `B` is being trained.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::DataDrivenModel;
use crate::error::{Error, Result};
use crate::interval::IntervalBox;
use crate::network::NetworkParams;
use crate::safety::{KbcSpec, SafetySpec};

/// Sampled states with their one-step and k-step data-driven evolutions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetTriple {
    pub states: Vec<Vec<f64>>,
    pub one_step: Vec<Vec<f64>>,
    pub k_step: Vec<Vec<f64>>,
    pub in_initial: Vec<bool>,
    pub in_unsafe: Vec<bool>,
}

impl DatasetTriple {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn initial_count(&self) -> usize {
        self.in_initial.iter().filter(|&&b| b).count()
    }

    pub fn unsafe_count(&self) -> usize {
        self.in_unsafe.iter().filter(|&&b| b).count()
    }

    /// Appends `s` with its evolutions under `model` and its region masks.
    pub fn push(
        &mut self,
        s: Vec<f64>,
        model: &DataDrivenModel,
        kbc: &KbcSpec,
        spec: &SafetySpec,
    ) -> Result<()> {
        let one = model.step(&s)?;
        let k = if kbc.k() == 1 {
            one.clone()
        } else {
            model.k_step(&s, kbc.k())?
        };
        self.in_initial.push(spec.initial().contains(&s));
        self.in_unsafe.push(spec.unsafe_set().contains(&s));
        self.states.push(s);
        self.one_step.push(one);
        self.k_step.push(k);
        Ok(())
    }
}

/// Samples forced into each of `X_I` and `X_U` on top of `m` uniform samples.
pub fn region_quota(m: usize) -> usize {
    (m / 20).max(50)
}

pub(crate) fn uniform_in(b: &IntervalBox, rng: &mut impl Rng) -> Vec<f64> {
    b.dims()
        .iter()
        .map(|d| {
            if d.width() == 0.0 {
                d.lo()
            } else {
                (d.lo() + rng.gen::<f64>() * d.width()).min(d.hi())
            }
        })
        .collect()
}

/// `m` uniform samples over `X` plus [`region_quota`] samples in each of
/// `X_I` and `X_U`, evolved with the data-driven model.
pub fn sample_dataset(
    spec: &SafetySpec,
    model: &DataDrivenModel,
    kbc: &KbcSpec,
    m: usize,
    seed: u64,
) -> Result<DatasetTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = DatasetTriple::default();
    for _ in 0..m {
        let s = uniform_in(spec.state_space(), &mut rng);
        data.push(s, model, kbc, spec)?;
    }
    let quota = region_quota(m);
    for region in [spec.initial(), spec.unsafe_set()] {
        for _ in 0..quota {
            let s = uniform_in(region, &mut rng);
            data.push(s, model, kbc, spec)?;
        }
    }
    Ok(data)
}

fn default_epochs() -> usize {
    1000
}
fn default_lr() -> f64 {
    0.1
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub eta1: f64,
    #[serde(default)]
    pub eta2: f64,
    #[serde(default)]
    pub eta3: f64,
    #[serde(default)]
    pub eta4: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta1: 0.0,
            eta2: 0.0,
            eta3: 0.0,
            eta4: 0.0,
            epochs: default_epochs(),
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_epsilon: default_adam_eps(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let etas = [self.eta1, self.eta2, self.eta3, self.eta4];
        if etas.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(Error::config("eta values must be finite and >= 0"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::config("Adam epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub initial: f64,
    #[serde(rename = "unsafe")]
    pub unsafe_: f64,
    pub one_step: f64,
    pub k_step: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.initial + self.unsafe_ + self.one_step + self.k_step
    }
}

fn check_masks(data: &DatasetTriple) -> Result<()> {
    if data.initial_count() == 0 {
        return Err(Error::EmptyRegionMask { region: "initial" });
    }
    if data.unsafe_count() == 0 {
        return Err(Error::EmptyRegionMask { region: "unsafe" });
    }
    Ok(())
}

/// Loss and (optionally) its gradient in one pass over the data.
fn evaluate(
    p: &NetworkParams,
    data: &DatasetTriple,
    kbc: &KbcSpec,
    cfg: &TrainConfig,
    mut grad: Option<&mut [f64]>,
) -> Result<LossBreakdown> {
    check_masks(data)?;
    let n_i = data.initial_count() as f64;
    let n_u = data.unsafe_count() as f64;
    let n_s = data.len() as f64;
    let (eps, lambda) = (kbc.epsilon(), kbc.lambda());
    let mut out = LossBreakdown::default();
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }

    for i in 0..data.len() {
        let s = &data.states[i];
        let b = p.forward(s);

        if data.in_initial[i] {
            let a = b + cfg.eta1;
            if a > 0.0 {
                out.initial += a / n_i;
                if let Some(g) = grad.as_deref_mut() {
                    p.accumulate_gradient(s, 1.0 / n_i, g);
                }
            }
        }
        if data.in_unsafe[i] {
            let a = -b + lambda + cfg.eta2;
            if a > 0.0 {
                out.unsafe_ += a / n_u;
                if let Some(g) = grad.as_deref_mut() {
                    p.accumulate_gradient(s, -1.0 / n_u, g);
                }
            }
        }

        let b1 = p.forward(&data.one_step[i]);
        let a1 = b1 - b - eps + cfg.eta3;
        if a1 > 0.0 {
            out.one_step += a1 / n_s;
            if let Some(g) = grad.as_deref_mut() {
                p.accumulate_gradient(&data.one_step[i], 1.0 / n_s, g);
                p.accumulate_gradient(s, -1.0 / n_s, g);
            }
        }

        let bk = p.forward(&data.k_step[i]);
        let ak = bk - b + cfg.eta4;
        if ak > 0.0 {
            out.k_step += ak / n_s;
            if let Some(g) = grad.as_deref_mut() {
                p.accumulate_gradient(&data.k_step[i], 1.0 / n_s, g);
                p.accumulate_gradient(s, -1.0 / n_s, g);
            }
        }
    }
    Ok(out)
}

/// Loss value; `total()` on the result gives the sum of the four terms.
pub fn loss(
    p: &NetworkParams,
    data: &DatasetTriple,
    kbc: &KbcSpec,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    evaluate(p, data, kbc, cfg, None)
}

/// Loss and its gradient (flat layout of [`NetworkParams::flatten`]). The
/// ReLU subgradient at 0 is taken as 0.
pub fn loss_and_gradient(
    p: &NetworkParams,
    data: &DatasetTriple,
    kbc: &KbcSpec,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut g = vec![0.0; p.num_params()];
    let l = evaluate(p, data, kbc, cfg, Some(&mut g))?;
    Ok((l, g))
}

pub fn gradient(
    p: &NetworkParams,
    data: &DatasetTriple,
    kbc: &KbcSpec,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    loss_and_gradient(p, data, kbc, cfg).map(|(_, g)| g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub best_breakdown: LossBreakdown,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Full-batch Adam for `cfg.epochs` epochs, returning the parameters with
/// the lowest loss seen (checked before every update and after the last).
/// Stops early when the loss reaches exactly zero.
pub fn train(
    p0: &NetworkParams,
    data: &DatasetTriple,
    kbc: &KbcSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = p0.clone();
    let mut theta = params.flatten();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];

    let first = loss(&params, data, kbc, cfg)?;
    let mut best = TrainOutcome {
        params: params.clone(),
        initial_loss: first.total(),
        best_loss: first.total(),
        best_breakdown: first,
        best_epoch: 0,
        epochs_run: 0,
    };

    for epoch in 0..cfg.epochs {
        let (l, g) = loss_and_gradient(&params, data, kbc, cfg)?;
        let total = l.total();
        if !total.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        if total < best.best_loss {
            best.params = params.clone();
            best.best_loss = total;
            best.best_breakdown = l;
            best.best_epoch = epoch;
        }
        best.epochs_run = epoch;
        if total == 0.0 {
            return Ok(best);
        }
        let t = (epoch + 1) as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..theta.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
        params.set_flat(&theta);
        best.epochs_run = epoch + 1;
    }

    if cfg.epochs > 0 {
        let last = loss(&params, data, kbc, cfg)?;
        if !last.total().is_finite() {
            return Err(Error::Diverged { epoch: cfg.epochs });
        }
        if last.total() < best.best_loss {
            best.params = params;
            best.best_loss = last.total();
            best.best_breakdown = last;
            best.best_epoch = cfg.epochs;
        }
    }
    Ok(best)
}
