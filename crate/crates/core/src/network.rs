//! One-hidden-layer certificate network
//! `B(x) = c + Σ_j v_j · g_j(b_j + W_j·x)` with per-node activations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::tape::powi_chain;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Square,
    Sin,
    Cos,
}

impl Activation {
    #[inline]
    pub fn apply(self, t: f64) -> f64 {
        match self {
            Activation::Square => powi_chain(t, 2),
            Activation::Sin => t.sin(),
            Activation::Cos => t.cos(),
        }
    }

    #[inline]
    pub fn derivative(self, t: f64) -> f64 {
        match self {
            Activation::Square => 2.0 * t,
            Activation::Sin => t.cos(),
            Activation::Cos => -t.sin(),
        }
    }

    fn to_expr(self, z: &Expr) -> Expr {
        match self {
            Activation::Square => z.powi(2),
            Activation::Sin => z.sin(),
            Activation::Cos => z.cos(),
        }
    }
}

/// Per-node activation assignment for a hidden layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationLayout {
    /// Every node uses the same activation.
    Uniform(Activation),
    /// First ⌈h/2⌉ nodes sin, the rest cos.
    SinCos,
    /// Explicit per-node list; its length must equal the width.
    Explicit(Vec<Activation>),
}

impl ActivationLayout {
    pub fn expand(&self, width: usize) -> Result<Vec<Activation>> {
        match self {
            ActivationLayout::Uniform(a) => Ok(vec![*a; width]),
            ActivationLayout::SinCos => {
                let sin_nodes = width.div_ceil(2);
                Ok((0..width)
                    .map(|j| if j < sin_nodes { Activation::Sin } else { Activation::Cos })
                    .collect())
            }
            ActivationLayout::Explicit(v) if v.len() == width => Ok(v.clone()),
            ActivationLayout::Explicit(v) => Err(Error::config(format!(
                "activation list has {} entries for width {width}",
                v.len()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub activations: Vec<Activation>,
    /// Hidden weights, one row of length n per node.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

impl NetworkParams {
    pub fn new(
        activations: Vec<Activation>,
        weights: Vec<Vec<f64>>,
        biases: Vec<f64>,
        output_weights: Vec<f64>,
        output_bias: f64,
    ) -> Result<Self> {
        let p = NetworkParams {
            activations,
            weights,
            biases,
            output_weights,
            output_bias,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.activations.len();
        if h == 0 {
            return Err(Error::config("network width must be positive"));
        }
        if self.weights.len() != h || self.biases.len() != h || self.output_weights.len() != h {
            return Err(Error::config("network parameter shapes disagree with width"));
        }
        let n = self.weights[0].len();
        if n == 0 || self.weights.iter().any(|r| r.len() != n) {
            return Err(Error::config("hidden weight rows must share a positive length"));
        }
        if !self.flatten().iter().all(|v| v.is_finite()) {
            return Err(Error::config("network parameters must be finite"));
        }
        Ok(())
    }

    /// Random initialization: hidden layer `U(±1/√n)`, output layer `U(±1/√h)`.
    pub fn init(n: usize, activations: Vec<Activation>, seed: u64) -> Self {
        let h = activations.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = 1.0 / (n as f64).sqrt();
        let o = 1.0 / (h as f64).sqrt();
        let weights = (0..h)
            .map(|_| (0..n).map(|_| rng.gen_range(-a..a)).collect())
            .collect();
        let biases = (0..h).map(|_| rng.gen_range(-a..a)).collect();
        let output_weights = (0..h).map(|_| rng.gen_range(-o..o)).collect();
        let output_bias = rng.gen_range(-o..o);
        NetworkParams {
            activations,
            weights,
            biases,
            output_weights,
            output_bias,
        }
    }

    pub fn width(&self) -> usize {
        self.activations.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn num_params(&self) -> usize {
        let (h, n) = (self.width(), self.input_dim());
        h * n + 2 * h + 1
    }

    #[inline]
    fn preactivation(&self, j: usize, x: &[f64]) -> f64 {
        self.weights[j]
            .iter()
            .zip(x)
            .fold(self.biases[j], |acc, (w, xi)| acc + w * xi)
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        (0..self.width()).fold(self.output_bias, |acc, j| {
            acc + self.output_weights[j] * self.activations[j].apply(self.preactivation(j, x))
        })
    }

    /// Adds `scale · ∂B(x)/∂θ` to `grad` (flat layout, see [`flatten`](Self::flatten)).
    pub fn accumulate_gradient(&self, x: &[f64], scale: f64, grad: &mut [f64]) {
        let (h, n) = (self.width(), self.input_dim());
        let (w_part, rest) = grad.split_at_mut(h * n);
        let (b_part, rest) = rest.split_at_mut(h);
        let (v_part, c_part) = rest.split_at_mut(h);
        for j in 0..h {
            let z = self.preactivation(j, x);
            let act = self.activations[j];
            v_part[j] += scale * act.apply(z);
            let dz = scale * self.output_weights[j] * act.derivative(z);
            b_part[j] += dz;
            for (k, xk) in x.iter().enumerate() {
                w_part[j * n + k] += dz * xk;
            }
        }
        c_part[0] += scale;
    }

    /// Parameters as `[W (row-major), b, v, c]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for row in &self.weights {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(&self.biases);
        out.extend_from_slice(&self.output_weights);
        out.push(self.output_bias);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let (h, n) = (self.width(), self.input_dim());
        for j in 0..h {
            self.weights[j].copy_from_slice(&flat[j * n..(j + 1) * n]);
        }
        self.biases.copy_from_slice(&flat[h * n..h * n + h]);
        self.output_weights
            .copy_from_slice(&flat[h * n + h..h * n + 2 * h]);
        self.output_bias = flat[h * n + 2 * h];
    }

    /// Symbolic form of the network, e.g.
    /// `v₁·sin(w₁₁x₁ + w₁₂x₂ + b₁) + … + c`.
    pub fn to_expr(&self) -> Expr {
        let vars: Vec<Expr> = (0..self.input_dim()).map(Expr::var).collect();
        let hidden = (0..self.width()).map(|j| {
            let z = Expr::linear_combination(&self.weights[j], &vars)
                .add(&Expr::constant(self.biases[j]));
            Expr::constant(self.output_weights[j]).mul(&self.activations[j].to_expr(&z))
        });
        hidden
            .fold(Expr::constant(0.0), |acc, t| acc.add(&t))
            .add(&Expr::constant(self.output_bias))
    }
}
