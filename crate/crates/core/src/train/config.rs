use serde::{Deserialize, Serialize};

use crate::moe::{MoeConfig, MoeConfigError};
use crate::nn::BackboneConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Training hyperparameters. Defaults: batch 1024, 40 epochs, alpha 0.1,
/// 128 experts with top-32 routing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Weight of the balancing losses in the total objective.
    pub alpha: f64,
    pub n_experts: usize,
    pub top_k: usize,
    pub expert_hidden: usize,
    pub noise_enabled: bool,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub disable_balancing_losses: bool,
    pub disable_moe: bool,
    pub disable_cnn: bool,
    pub backbone: BackboneConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            max_epochs: 40,
            alpha: 0.1,
            n_experts: 128,
            top_k: 32,
            expert_hidden: 16,
            noise_enabled: true,
            optimizer: AdamConfig::default(),
            seed: 0,
            disable_balancing_losses: false,
            disable_moe: false,
            disable_cnn: false,
            backbone: BackboneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    Zero(&'static str),
    #[error("alpha must be finite and nonnegative, got {0}")]
    Alpha(f64),
    #[error("invalid optimizer setting: {0}")]
    Optimizer(String),
    #[error(transparent)]
    Moe(#[from] MoeConfigError),
}

/// Which of the three networks the model is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// CNN backbone feeding the mixture of experts.
    CnnMoe,
    /// CNN backbone feeding a dense 128 → 9 layer.
    CnnDense,
    /// One dense 78 → 9 layer on the flat feature vector.
    Dense,
}

/// Everything needed to rebuild a model's structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub backbone: BackboneConfig,
    pub moe: MoeConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [("batch_size", self.batch_size), ("max_epochs", self.max_epochs)] {
            if v == 0 {
                return Err(ConfigError::Zero(name));
            }
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(ConfigError::Alpha(self.alpha));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(ConfigError::Optimizer(format!("{o:?}")));
        }
        if !self.disable_moe && !self.disable_cnn {
            self.model_config().moe.validate()?;
        }
        Ok(())
    }

    /// Model structure implied by these settings and ablation flags.
    pub fn model_config(&self) -> ModelConfig {
        let architecture = match (self.disable_cnn, self.disable_moe) {
            (true, _) => Architecture::Dense,
            (false, true) => Architecture::CnnDense,
            (false, false) => Architecture::CnnMoe,
        };
        let (w_importance, w_load) = if self.disable_balancing_losses { (0.0, 0.0) } else { (1.0, 1.0) };
        ModelConfig {
            architecture,
            moe: MoeConfig {
                n_experts: self.n_experts,
                top_k: self.top_k,
                input_dim: self.backbone.output_dim(),
                expert_hidden: self.expert_hidden,
                n_classes: crate::data::N_CLASSES,
                w_importance,
                w_load,
                noise_enabled: self.noise_enabled,
            },
            backbone: self.backbone.clone(),
        }
    }
}
