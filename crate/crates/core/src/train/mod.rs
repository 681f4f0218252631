//! Training objective, optimizer, metrics, checkpoints and ablations.

mod ablation;
mod checkpoint;
mod config;
mod gating;
mod loss;
mod metrics;
mod model;
mod optim;
mod trainer;

pub use ablation::{config_diff, parse_expert_grid, run_ablation, AblationRun, AblationVariant, EXPERT_GRID};
pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CheckpointMeta,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{AdamConfig, Architecture, ConfigError, ModelConfig, TrainConfig};
pub use gating::{cv_squared, gating_report, ExpertUsage, GatingReport};
pub use loss::{total_loss, LossParts};
pub use metrics::{weighted_f1, ClassMetrics, EvalReport, MetricsError};
pub use model::{batch_tensor, Head, Model, ModelOutput};
pub use optim::Adam;
pub use trainer::{train, EpochRecord, History};

use crate::data::EncodedSample;
use crate::scalar::Scalar;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{component} became {value} at epoch {epoch}, step {step}")]
    NonFinite {
        component: &'static str,
        value: f64,
        epoch: usize,
        step: usize,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("unknown ablation variant {0:?} (expected zero_losses, no_moe, no_cnn or expert_grid(n,k))")]
    UnknownVariant(String),
    #[error("model has no mixture-of-experts head")]
    NoExperts,
}

/// Eval-mode metrics on a held-out set.
pub fn evaluate<T: Scalar>(model: &Model<T>, samples: &[EncodedSample], batch_size: usize) -> Result<EvalReport, TrainError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty.into());
    }
    let predictions = model.predict(samples, batch_size)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(EvalReport::from_predictions(&labels, &predictions)?)
}

#[cfg(test)]
mod tests;
