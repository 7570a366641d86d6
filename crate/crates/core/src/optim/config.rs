use serde::{Deserialize, Serialize};

use super::{OptimError, Result};
use crate::model::ModelConfig;
use crate::tensor::Reduction;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Adam with decoupled weight decay.
    #[default]
    Adam,
    /// Plain gradient descent.
    Sgd,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsPooling {
    /// One mean/std over all elements.
    #[default]
    Global,
    /// One mean/std per latent channel.
    PerChannel,
}

/// Latent region optimisation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Denoising timestep at which the latent is optimised (T′).
    pub t_prime: usize,
    /// Iterations per target frame (I).
    pub iterations: usize,
    pub lr: f64,
    /// Layers whose hidden states form the feature map.
    pub layer_set: Vec<usize>,
    /// Cutoffs drawn uniformly once per iteration for SFS.
    pub cutoffs: Vec<f64>,
    pub butterworth_order: u32,
    /// Spread scale of the CSS Gaussian.
    pub css_alpha: f64,
    /// Number of preceding frames pooled for ADSR targets, minus one (L_n).
    pub neighbor_window: usize,
    pub rng_seed: u64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub reduction: Reduction,
    pub stats_pooling: StatsPooling,
    pub adsr: bool,
    pub css: bool,
    pub sfs: bool,
    pub use_rec: bool,
    pub use_cst: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            t_prime: 3,
            iterations: 4,
            lr: 0.04,
            layer_set: vec![2, 3],
            cutoffs: vec![0.2, 0.4, 0.6, 1.0],
            butterworth_order: 2,
            css_alpha: 1.0,
            neighbor_window: 3,
            rng_seed: 11,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            reduction: Reduction::Sum,
            stats_pooling: StatsPooling::Global,
            adsr: true,
            css: true,
            sfs: true,
            use_rec: true,
            use_cst: true,
        }
    }
}

fn bad(field: &str, message: impl Into<String>) -> OptimError {
    OptimError::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl OptimConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.t_prime == 0 || self.t_prime > model.timesteps {
            return Err(bad("t_prime", format!("must lie in 1..={}", model.timesteps)));
        }
        if self.iterations == 0 {
            return Err(bad("iterations", "must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(bad("lr", "must be positive"));
        }
        if self.layer_set.is_empty() || self.layer_set.iter().any(|&l| l >= model.layers) {
            return Err(bad("layer_set", format!("needs 1+ layers below {}", model.layers)));
        }
        if self.cutoffs.is_empty() || self.cutoffs.iter().any(|w| !(*w > 0.0 && *w <= 1.0)) {
            return Err(bad("cutoffs", "needs 1+ values in (0, 1]"));
        }
        if self.butterworth_order == 0 {
            return Err(bad("butterworth_order", "must be >= 1"));
        }
        if self.css_alpha.is_nan() || self.css_alpha <= 0.0 {
            return Err(bad("css_alpha", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(bad("beta1/beta2", "must lie in [0, 1)"));
        }
        if self.eps.is_nan() || self.eps <= 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(bad("eps/weight_decay", "eps must be positive, weight decay non-negative"));
        }
        Ok(())
    }
}
