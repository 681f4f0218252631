use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::EncodedSample;
use crate::scalar::Scalar;

use super::config::TrainConfig;
use super::metrics::EvalReport;
use super::model::Model;
use super::trainer::{train, History};
use super::{evaluate, TrainError};

/// `(n_experts, top_k)` pairs of the expert-count sweep.
pub const EXPERT_GRID: [(usize, usize); 6] = [(128, 32), (64, 32), (64, 16), (32, 16), (32, 4), (16, 4)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Baseline,
    /// Balancing-loss weights set to 0.
    ZeroLosses,
    /// Dense 128 → 9 in place of the mixture of experts.
    NoMoe,
    /// Dense 78 → 9 in place of backbone and experts.
    NoCnn,
    ExpertGrid { n_experts: usize, top_k: usize },
}

impl AblationVariant {
    /// `base` with only the fields this variant ablates changed.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match *self {
            Self::Baseline => {}
            Self::ZeroLosses => c.disable_balancing_losses = true,
            Self::NoMoe => c.disable_moe = true,
            Self::NoCnn => c.disable_cnn = true,
            Self::ExpertGrid { n_experts, top_k } => {
                c.n_experts = n_experts;
                c.top_k = top_k;
            }
        }
        c
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Baseline => f.write_str("baseline"),
            Self::ZeroLosses => f.write_str("zero_losses"),
            Self::NoMoe => f.write_str("no_moe"),
            Self::NoCnn => f.write_str("no_cnn"),
            Self::ExpertGrid { n_experts, top_k } => write!(f, "expert_grid({n_experts},{top_k})"),
        }
    }
}

fn parse_pair(s: &str) -> Option<(usize, usize)> {
    let s = s.trim().trim_start_matches('(').trim_end_matches(')');
    let (n, k) = s.split_once([',', 'x', ':'])?;
    Some((n.trim().parse().ok()?, k.trim().parse().ok()?))
}

impl FromStr for AblationVariant {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "baseline" => Ok(Self::Baseline),
            "zero_losses" => Ok(Self::ZeroLosses),
            "no_moe" => Ok(Self::NoMoe),
            "no_cnn" => Ok(Self::NoCnn),
            other => other
                .strip_prefix("expert_grid")
                .and_then(parse_pair)
                .map(|(n_experts, top_k)| Self::ExpertGrid { n_experts, top_k })
                .ok_or_else(|| TrainError::UnknownVariant(other.to_string())),
        }
    }
}

/// Parses `"128x32,64x16"` or `"(128,32);(64,16)"`.
pub fn parse_expert_grid(s: &str) -> Result<Vec<(usize, usize)>, TrainError> {
    let items: Vec<&str> = if s.contains(';') {
        s.split(';').collect()
    } else if s.contains('x') {
        s.split(',').collect()
    } else {
        return Err(TrainError::UnknownVariant(format!("expert grid {s:?}")));
    };
    items
        .into_iter()
        .filter(|p| !p.trim().is_empty())
        .map(|p| parse_pair(p).ok_or_else(|| TrainError::UnknownVariant(format!("expert grid entry {p:?}"))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: AblationVariant,
    pub config: TrainConfig,
    pub param_count: usize,
    pub history: History,
    pub report: EvalReport,
}

/// Trains the variant from scratch on `train` and evaluates it on `test`.
pub fn run_ablation<T: Scalar>(
    base: &TrainConfig,
    variant: AblationVariant,
    train_set: &[EncodedSample],
    test_set: &[EncodedSample],
) -> Result<AblationRun, TrainError> {
    let config = variant.apply(base);
    config.validate()?;
    let mut model = Model::<T>::new(config.model_config(), config.seed);
    let param_count = model.param_count();
    let history = train(&mut model, train_set, &config)?;
    let report = evaluate(&model, test_set, config.batch_size)?;
    Ok(AblationRun {
        variant,
        config,
        param_count,
        history,
        report,
    })
}

/// Top-level config fields whose values differ.
pub fn config_diff(a: &TrainConfig, b: &TrainConfig) -> Vec<String> {
    let (a, b) = (serde_json::to_value(a).unwrap(), serde_json::to_value(b).unwrap());
    let (a, b) = (a.as_object().unwrap(), b.as_object().unwrap());
    a.iter().filter(|(k, v)| b.get(*k) != Some(v)).map(|(k, _)| k.clone()).collect()
}
