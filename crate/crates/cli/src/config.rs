//! Run configuration: built-in defaults, then the config file, then flags.

use std::path::{Path, PathBuf};

use nidsmoe::data::{ImputationProtocol, DEFAULT_LABEL_COLUMN};
use nidsmoe::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// CSV path, or `synthetic` / `synthetic:<n>` for Gaussian blobs.
    pub dataset: Option<String>,
    pub label_column: String,
    /// Root under which run directories and the encoded-dataset cache live.
    pub out: PathBuf,
    pub imputation: ImputationProtocol,
    pub train_fraction: f64,
    /// Ablation applied by `train`; `ablate` runs each listed variant.
    pub ablate: Vec<String>,
    /// `(n_experts, top_k)` sweep; empty means a single run.
    pub expert_grid: Vec<(usize, usize)>,
    /// Also write per-class reports as plain text next to the JSON.
    pub text_reports: bool,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            label_column: DEFAULT_LABEL_COLUMN.to_string(),
            out: PathBuf::from("out"),
            imputation: ImputationProtocol::default(),
            train_fraction: 0.6,
            ablate: Vec::new(),
            expert_grid: Vec::new(),
            text_reports: true,
            train: TrainConfig::default(),
        }
    }
}

/// Flag values; `None` leaves the config-file (or default) value alone.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub dataset: Option<String>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub alpha: Option<f64>,
    pub experts: Option<usize>,
    pub top_k: Option<usize>,
    pub ablate: Option<Vec<String>>,
    pub expert_grid: Option<Vec<(usize, usize)>>,
    pub imputation: Option<ImputationProtocol>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, flags: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        cfg.apply(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, f: &Overrides) {
        if let Some(v) = &f.dataset {
            self.dataset = Some(v.clone());
        }
        if let Some(v) = &f.out {
            self.out = v.clone();
        }
        if let Some(v) = f.imputation {
            self.imputation = v;
        }
        if let Some(v) = &f.ablate {
            self.ablate = v.clone();
        }
        if let Some(v) = &f.expert_grid {
            self.expert_grid = v.clone();
        }
        let t = &mut self.train;
        if let Some(v) = f.seed {
            t.seed = v;
        }
        if let Some(v) = f.epochs {
            t.max_epochs = v;
        }
        if let Some(v) = f.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = f.alpha {
            t.alpha = v;
        }
        if let Some(v) = f.experts {
            t.n_experts = v;
        }
        if let Some(v) = f.top_k {
            t.top_k = v;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CliError::Config(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }
}
