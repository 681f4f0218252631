use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::{TensorError, TensorResult};

use super::layers::{BatchNorm1d, Conv1d};
use super::params::{Forward, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub in_length: usize,
    /// Filter count per cell; every cell except the last ends in a max-pool.
    pub filters: Vec<usize>,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 6,
            in_length: 13,
            filters: vec![16, 32, 64, 128],
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl BackboneConfig {
    /// Sequence length after each cell.
    pub fn length_trace(&self) -> Vec<usize> {
        let mut len = self.in_length;
        let last = self.filters.len().saturating_sub(1);
        (0..self.filters.len())
            .map(|i| {
                if i < last {
                    len /= 2;
                }
                len
            })
            .collect()
    }

    pub fn output_dim(&self) -> usize {
        let len = self.length_trace().last().copied().unwrap_or(self.in_length);
        self.filters.last().copied().unwrap_or(self.in_channels) * len
    }
}

/// Conv → batch norm → ReLU → optional max-pool.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnCell {
    pub conv: Conv1d,
    pub norm: BatchNorm1d,
    pub pool: bool,
}

impl CnnCell {
    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, store: &ParamStore<T>, x: Var) -> TensorResult<Var> {
        let y = self.conv.forward(f, store, x)?;
        let y = self.norm.forward(f, store, y)?;
        let y = f.graph.relu(y);
        if self.pool {
            f.graph.max_pool2(y)
        } else {
            Ok(y)
        }
    }
}

/// Stack of [`CnnCell`]s mapping a `(channels × length)` sample to a flat feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnBackbone {
    pub config: BackboneConfig,
    pub cells: Vec<CnnCell>,
}

impl CnnBackbone {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut RngState, config: BackboneConfig) -> Self {
        let mut in_ch = config.in_channels;
        let last = config.filters.len().saturating_sub(1);
        let cells = config
            .filters
            .iter()
            .enumerate()
            .map(|(i, &out)| {
                let name = format!("backbone.cell{i}");
                let cell = CnnCell {
                    conv: Conv1d::new(store, rng, &format!("{name}.conv"), in_ch, out),
                    norm: BatchNorm1d::new(store, &format!("{name}.bn"), out, config.bn_momentum, config.bn_eps),
                    pool: i < last,
                };
                in_ch = out;
                cell
            })
            .collect();
        Self { config, cells }
    }

    /// `(batch, channels, length)` → `(batch, output_dim)`.
    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, store: &ParamStore<T>, x: Var) -> TensorResult<Var> {
        let shape = f.graph.shape(x).to_vec();
        let (c, l) = (self.config.in_channels, self.config.in_length);
        if shape.len() != 3 || shape[1] != c || shape[2] != l {
            return Err(TensorError::Dimension {
                op: "backbone",
                msg: format!("expected input (batch, {c}, {l}), got {shape:?}"),
            });
        }
        let mut y = x;
        for cell in &self.cells {
            y = cell.forward(f, store, y)?;
        }
        f.graph.reshape(y, &[shape[0], self.config.output_dim()])
    }
}
