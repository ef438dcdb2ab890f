//! Case-study configuration and the builtin case studies.

use serde::{Deserialize, Serialize};

use crate::cegis::{self, CegisConfig, CegisReport};
use crate::dynamics::{collect_trajectory, DataDrivenModel, Dictionary, TrajectoryData, TruthModel};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::interval::IntervalBox;
use crate::learner::{self, TrainConfig};
use crate::network::{Activation, ActivationLayout, NetworkParams};
use crate::safety::{KbcSpec, SafetySpec};
use crate::verifier::VerificationTask;

pub const BUILTIN_NAMES: [&str; 3] = ["polynomial", "pendulum", "highly-nonlinear"];

/// Ground-truth system, used only to generate the trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemSpec {
    /// One of [`BUILTIN_NAMES`].
    Builtin(String),
    /// Explicit one-step map with the sampling time already folded in.
    Step { step: Vec<Expr>, dt: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub width: usize,
    pub activations: ActivationLayout,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaseStudyConfig {
    pub name: String,
    pub system: SystemSpec,
    pub dictionary: Vec<Expr>,
    pub x0: Vec<f64>,
    /// Number of transitions `T` in the recorded trajectory.
    pub trajectory_length: usize,
    pub spec: SafetySpec,
    pub kbc: KbcSpec,
    pub network: NetworkSpec,
    /// Uniform samples over `X` in the initial dataset.
    pub samples: usize,
    pub cegis: CegisConfig,
}

fn x(i: usize) -> Expr {
    Expr::var(i)
}

fn c(v: f64) -> Expr {
    Expr::constant(v)
}

/// Builtin truth model `x⁺ = x + Δt·g(x)` by name.
pub fn builtin_truth(name: &str) -> Result<TruthModel> {
    let dt = 0.1;
    let g = match name {
        "polynomial" => vec![
            x(1) + 2.0 * x(0) * x(1),
            -x(0) + 2.0 * x(0).powi(2) - 2.0 * x(1).powi(2),
        ],
        "pendulum" => {
            let (grav, m, l, b) = (9.81, 1.0, 0.1, 1.0);
            vec![
                x(1),
                x(0).sin() * grav + -(b / m) * x(1) + (-(grav * m * l) * x(0) + b * x(1)) * (1.0 / (m * l)),
            ]
        }
        "highly-nonlinear" => {
            let s2 = x(0).sin().powi(2);
            vec![
                x(1) + x(0).neg().exp() + s2.clone(),
                x(0) - s2 + x(0).cos().powi(2),
            ]
        }
        other => return Err(Error::config(format!("unknown model id {other:?}"))),
    };
    let step = g
        .into_iter()
        .enumerate()
        .map(|(i, gi)| x(i) + c(dt) * gi)
        .collect();
    TruthModel::new(name, step, dt)
}

/// Certificates as printed for the builtin studies, where available.
pub fn published_certificate(name: &str) -> Option<Expr> {
    match name {
        "polynomial" => Some(
            0.02 * x(0).powi(2) + 0.02 * x(0) * x(1) - 0.12 * x(0) - 0.04 * x(1).powi(2)
                + 0.04 * x(1)
                + c(0.10),
        ),
        "highly-nonlinear" => Some(published_network().to_expr()),
        _ => None,
    }
}

/// The published highly-nonlinear certificate as network parameters.
pub fn published_network() -> NetworkParams {
    use Activation::{Cos, Sin};
    NetworkParams::new(
        vec![Sin, Sin, Cos, Cos],
        vec![
            vec![0.54, -1.32],
            vec![0.58, -0.47],
            vec![0.72, -0.06],
            vec![0.80, -0.05],
        ],
        vec![1.14, 0.29, 1.40, 1.31],
        vec![-0.55, -1.35, 0.65, 0.12],
        0.99,
    )
    .expect("valid parameters")
}

fn square_box(lo: f64, hi: f64) -> IntervalBox {
    IntervalBox::from_bounds(&[(lo, hi), (lo, hi)]).expect("valid box")
}

fn bx(b: [(f64, f64); 2]) -> IntervalBox {
    IntervalBox::from_bounds(&b).expect("valid box")
}

impl CaseStudyConfig {
    pub fn builtin(name: &str) -> Result<Self> {
        let train = |eta1: f64| TrainConfig {
            eta1,
            eta2: 0.001,
            epochs: 1000,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let cegis = |eta1: f64, cex_points: usize| CegisConfig {
            max_iterations: 20,
            cex_points,
            cex_radius: 0.1,
            lr_initial: 0.1,
            lr_retrain: 0.05,
            train: train(eta1),
            ..CegisConfig::default()
        };
        let state_space = square_box(-2.0, 2.0);
        let cfg = match name {
            "polynomial" => CaseStudyConfig {
                name: name.into(),
                system: SystemSpec::Builtin(name.into()),
                dictionary: vec![x(0), x(1), x(0) * x(1), x(0).powi(2), x(1).powi(2)],
                x0: vec![0.5, -2.0],
                trajectory_length: 6,
                spec: SafetySpec::new(
                    state_space,
                    bx([(0.5, 1.5), (-2.0, -1.0)]),
                    bx([(-2.0, -1.0), (-0.5, 0.5)]),
                )?,
                kbc: KbcSpec::new(3, 0.1)?,
                network: NetworkSpec {
                    width: 2,
                    activations: ActivationLayout::Uniform(Activation::Square),
                },
                samples: 100,
                cegis: cegis(0.1, 20),
            },
            "pendulum" => CaseStudyConfig {
                name: name.into(),
                system: SystemSpec::Builtin(name.into()),
                dictionary: vec![x(0), x(1), x(0).sin(), x(0).cos()],
                x0: vec![0.5, -1.5],
                trajectory_length: 5,
                spec: SafetySpec::new(
                    state_space,
                    bx([(-0.5, 0.5), (-1.5, -1.0)]),
                    bx([(0.0, 1.0), (0.1, 1.1)]),
                )?,
                kbc: KbcSpec::new(2, 0.1)?,
                network: NetworkSpec {
                    width: 32,
                    activations: ActivationLayout::Uniform(Activation::Square),
                },
                samples: 1000,
                cegis: cegis(0.1, 10),
            },
            "highly-nonlinear" => CaseStudyConfig {
                name: name.into(),
                system: SystemSpec::Builtin(name.into()),
                dictionary: vec![
                    x(0),
                    x(1),
                    x(0).neg().exp(),
                    x(1).neg().exp(),
                    x(0).sin().powi(2),
                    x(0).cos().powi(2),
                ],
                x0: vec![0.5, -1.0],
                trajectory_length: 7,
                spec: SafetySpec::new(
                    state_space,
                    bx([(0.5, 1.5), (-2.0, -1.0)]),
                    bx([(-0.5, 0.5), (0.6, 1.8)]),
                )?,
                kbc: KbcSpec::new(2, 0.1)?,
                network: NetworkSpec {
                    width: 4,
                    activations: ActivationLayout::SinCos,
                },
                samples: 1000,
                cegis: cegis(0.0, 20),
            },
            other => return Err(Error::config(format!("unknown builtin config {other:?}"))),
        };
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: CaseStudyConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let truth = self.truth_model()?;
        let n = truth.dim();
        let dict = self.dictionary()?;
        if dict.state_dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: dict.state_dim(),
            });
        }
        if self.x0.len() != n || self.spec.dim() != n {
            return Err(Error::config(format!(
                "x0 and safety boxes must have dimension {n}"
            )));
        }
        if self.trajectory_length < dict.len() {
            return Err(Error::InsufficientSamples {
                samples: self.trajectory_length,
                terms: dict.len(),
            });
        }
        if self.network.width == 0 {
            return Err(Error::config("network width must be positive"));
        }
        self.network.activations.expand(self.network.width)?;
        if self.samples == 0 {
            return Err(Error::config("samples must be positive"));
        }
        self.cegis.validate()
    }

    pub fn truth_model(&self) -> Result<TruthModel> {
        match &self.system {
            SystemSpec::Builtin(name) => builtin_truth(name),
            SystemSpec::Step { step, dt } => TruthModel::new(self.name.clone(), step.clone(), *dt),
        }
    }

    pub fn dictionary(&self) -> Result<Dictionary> {
        let n = match &self.system {
            SystemSpec::Builtin(name) => builtin_truth(name)?.dim(),
            SystemSpec::Step { step, .. } => step.len(),
        };
        Dictionary::new(self.dictionary.clone(), n)
    }

    /// Records the trajectory and builds the data-driven model from it.
    pub fn build_model(&self) -> Result<(TrajectoryData, DataDrivenModel)> {
        let truth = self.truth_model()?;
        let dict = self.dictionary()?;
        let traj = collect_trajectory(&truth, &dict, &self.x0, self.trajectory_length)?;
        let model = DataDrivenModel::build(&traj, &dict)?;
        Ok((traj, model))
    }

    pub fn initial_network(&self, seed: u64) -> Result<NetworkParams> {
        let acts = self.network.activations.expand(self.network.width)?;
        Ok(NetworkParams::init(self.spec.dim(), acts, seed))
    }

    /// Full pipeline: trajectory, model, dataset, CEGIS. Every random
    /// choice derives from `seed`.
    pub fn synthesize(&self, seed: u64) -> Result<CegisReport> {
        self.validate()?;
        let (_, model) = self.build_model()?;
        let data = learner::sample_dataset(&self.spec, &model, &self.kbc, self.samples, seed)?;
        let net = self.initial_network(seed)?;
        cegis::run(&self.spec, &model, &self.kbc, &net, data, &self.cegis, seed)
    }

    /// Verification task for `certificate` against `model`, optionally with
    /// a different `k`/`ε` than configured.
    pub fn verification_task(
        &self,
        model: &DataDrivenModel,
        certificate: Expr,
        kbc: Option<KbcSpec>,
        delta: Option<f64>,
    ) -> Result<VerificationTask> {
        let kbc = kbc.unwrap_or(self.kbc);
        let task = VerificationTask::from_model(
            certificate,
            model,
            self.spec.clone(),
            kbc,
            delta.unwrap_or(self.cegis.delta),
        )?;
        Ok(task.with_max_boxes(self.cegis.max_boxes))
    }
}
