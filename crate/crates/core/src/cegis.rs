//! Learner–verifier loop: train a candidate, verify it over the whole state
//! space, add the counterexample neighbourhood to the dataset and retrain
//! from the current parameters until the verifier accepts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::DataDrivenModel;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::learner::{self, DatasetTriple, LossBreakdown, TrainConfig};
use crate::network::NetworkParams;
use crate::safety::{KbcSpec, SafetySpec};
use crate::verifier::{self, VerificationTask, Verdict, DEFAULT_DELTA, DEFAULT_MAX_BOXES};

fn default_max_iterations() -> usize {
    20
}
fn default_cex_points() -> usize {
    20
}
fn default_cex_radius() -> f64 {
    0.1
}
fn default_lr_initial() -> f64 {
    0.1
}
fn default_lr_retrain() -> f64 {
    0.05
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_max_boxes() -> usize {
    DEFAULT_MAX_BOXES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CegisConfig {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Neighbourhood samples added per counterexample.
    #[serde(default = "default_cex_points")]
    pub cex_points: usize,
    #[serde(default = "default_cex_radius")]
    pub cex_radius: f64,
    #[serde(default = "default_lr_initial")]
    pub lr_initial: f64,
    #[serde(default = "default_lr_retrain")]
    pub lr_retrain: f64,
    /// Accept a δ-sat verdict as verified (its margin is recorded).
    #[serde(default)]
    pub accept_delta_sat: bool,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_max_boxes")]
    pub max_boxes: usize,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for CegisConfig {
    fn default() -> Self {
        CegisConfig {
            max_iterations: default_max_iterations(),
            cex_points: default_cex_points(),
            cex_radius: default_cex_radius(),
            lr_initial: default_lr_initial(),
            lr_retrain: default_lr_retrain(),
            accept_delta_sat: false,
            delta: default_delta(),
            max_boxes: default_max_boxes(),
            train: TrainConfig::default(),
        }
    }
}

impl CegisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cex_points == 0 {
            return Err(Error::config("cex_points must be positive"));
        }
        if !(self.cex_radius > 0.0) || !self.cex_radius.is_finite() {
            return Err(Error::config("cex_radius must be positive"));
        }
        if !(self.lr_initial > 0.0) || !(self.lr_retrain > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.lr_retrain > self.lr_initial {
            return Err(Error::config("lr_retrain must not exceed lr_initial"));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::config("delta must be positive"));
        }
        if self.max_boxes == 0 {
            return Err(Error::config("max_boxes must be positive"));
        }
        self.train.validate()
    }
}

/// Appends `cex` and `cfg.cex_points` uniform samples from the
/// radius-`cfg.cex_radius` ball around it (clipped to `X`), with their
/// evolutions and region masks.
pub fn augment(
    data: &DatasetTriple,
    cex: &[f64],
    cfg: &CegisConfig,
    spec: &SafetySpec,
    model: &DataDrivenModel,
    kbc: &KbcSpec,
    seed: u64,
) -> Result<DatasetTriple> {
    let mut out = data.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = spec.state_space();
    let mut first = cex.to_vec();
    x.clamp(&mut first);
    out.push(first, model, kbc, spec)?;
    let r = cfg.cex_radius;
    for _ in 0..cfg.cex_points {
        let offset = loop {
            let d: Vec<f64> = cex.iter().map(|_| rng.gen_range(-1.0..=1.0)).collect();
            if d.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                break d;
            }
        };
        let mut s: Vec<f64> = cex.iter().zip(&offset).map(|(c, d)| c + r * d).collect();
        x.clamp(&mut s);
        out.push(s, model, kbc, spec)?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CegisOutcome {
    Verified,
    Terminated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub learning_rate: f64,
    /// Rows used for training in this iteration.
    pub dataset_size: usize,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub loss_breakdown: LossBreakdown,
    pub verdict: Verdict,
    /// Point whose neighbourhood was appended after this iteration.
    pub counterexample: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CegisReport {
    pub outcome: CegisOutcome,
    pub iterations: usize,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    /// Final certificate, present when verified.
    pub certificate: Option<Expr>,
    pub params: NetworkParams,
    pub diagnostic: Option<String>,
}

impl CegisReport {
    pub fn verified(&self) -> bool {
        self.outcome == CegisOutcome::Verified
    }
}

/// Runs the loop from `net` on `data`. The first iteration trains at
/// `lr_initial`, later ones resume from the current parameters at
/// `lr_retrain`. Retraining samples use seeds derived from `seed`.
pub fn run(
    spec: &SafetySpec,
    model: &DataDrivenModel,
    kbc: &KbcSpec,
    net: &NetworkParams,
    data: DatasetTriple,
    cfg: &CegisConfig,
    seed: u64,
) -> Result<CegisReport> {
    cfg.validate()?;
    net.validate()?;
    let mut report = CegisReport {
        outcome: CegisOutcome::Terminated,
        iterations: 0,
        seed,
        records: Vec::new(),
        certificate: None,
        params: net.clone(),
        diagnostic: None,
    };
    if cfg.max_iterations == 0 {
        report.diagnostic = Some("max_iterations is 0".into());
        return Ok(report);
    }

    let f1 = model.symbolic_step();
    let fk = if kbc.k() == 1 {
        f1.clone()
    } else {
        model.symbolic_k_step(kbc.k())
    };
    let mut data = data;
    let mut params = net.clone();

    for iteration in 1..=cfg.max_iterations {
        let lr = if iteration == 1 {
            cfg.lr_initial
        } else {
            cfg.lr_retrain
        };
        let train_cfg = TrainConfig {
            learning_rate: lr,
            ..cfg.train.clone()
        };
        let trained = learner::train(&params, &data, kbc, &train_cfg)?;
        params = trained.params;
        let certificate = params.to_expr();
        let task = VerificationTask::new(
            certificate.clone(),
            f1.clone(),
            fk.clone(),
            spec.clone(),
            *kbc,
            cfg.delta,
        )?
        .with_max_boxes(cfg.max_boxes);
        let verdict = verifier::verify(&task)?.verdict;
        log::info!(
            "iteration {iteration}: loss {:.6} -> {:.6}, {} rows, {:?}",
            trained.initial_loss,
            trained.best_loss,
            data.len(),
            verdict
        );

        let accepted = match &verdict {
            Verdict::Valid => true,
            Verdict::DeltaSat { .. } => cfg.accept_delta_sat,
            _ => false,
        };
        let witness = if accepted { None } else { verdict.witness() };
        report.records.push(IterationRecord {
            iteration,
            learning_rate: lr,
            dataset_size: data.len(),
            initial_loss: trained.initial_loss,
            best_loss: trained.best_loss,
            best_epoch: trained.best_epoch,
            loss_breakdown: trained.best_breakdown,
            verdict: verdict.clone(),
            counterexample: witness.clone(),
        });
        report.iterations = iteration;
        report.params = params.clone();

        if accepted {
            report.outcome = CegisOutcome::Verified;
            report.certificate = Some(certificate);
            return Ok(report);
        }
        match witness {
            Some(cex) => {
                let s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(iteration as u64);
                data = augment(&data, &cex, cfg, spec, model, kbc, s)?;
            }
            None => {
                report.diagnostic = Some(format!(
                    "verifier exhausted its box budget ({} boxes); raise max_boxes",
                    cfg.max_boxes
                ));
                return Ok(report);
            }
        }
    }
    report.diagnostic = Some(format!("no verified certificate after {} iterations", cfg.max_iterations));
    Ok(report)
}
