use crate::autodiff::{Graph, Var};
use crate::data::{EncodedSample, ENCODED_WIDTH, N_CLASSES};
use crate::moe::{GateDecision, MoeLayer};
use crate::nn::{CnnBackbone, Dense, Forward, Mode, ParamStore};
use crate::rng::{streams, RngState};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorResult};

use super::config::{Architecture, ModelConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Moe(MoeLayer),
    Dense(Dense),
}

/// Classifier over encoded 78-value samples.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f64> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub backbone: Option<CnnBackbone>,
    pub head: Head,
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// `(batch, 9)`
    pub logits: Var,
    pub importance_loss: Option<Var>,
    pub load_loss: Option<Var>,
    pub decision: Option<GateDecision>,
}

impl<T: Scalar> Model<T> {
    /// Initializes parameters from the `INIT` stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = RngState::stream(seed, streams::INIT);
        let mut store = ParamStore::new();
        let (backbone, head) = match config.architecture {
            Architecture::CnnMoe => {
                let b = CnnBackbone::new(&mut store, &mut rng, config.backbone.clone());
                let moe = MoeLayer::new(&mut store, &mut rng, config.moe.clone());
                (Some(b), Head::Moe(moe))
            }
            Architecture::CnnDense => {
                let b = CnnBackbone::new(&mut store, &mut rng, config.backbone.clone());
                let d = Dense::new(&mut store, &mut rng, "head", b.config.output_dim(), N_CLASSES);
                (Some(b), Head::Dense(d))
            }
            Architecture::Dense => (None, Head::Dense(Dense::new(&mut store, &mut rng, "head", ENCODED_WIDTH, N_CLASSES))),
        };
        Self {
            config,
            store,
            backbone,
            head,
        }
    }

    pub fn param_count(&self) -> usize {
        self.store.trainable_count()
    }

    /// Batch norm needs at least two rows per training batch.
    pub fn needs_batch_stats(&self) -> bool {
        self.backbone.is_some()
    }

    /// `x` is `(batch, 78)`.
    pub fn forward(&self, f: &mut Forward<'_, T>, x: Var, rng: Option<&mut RngState>) -> TensorResult<ModelOutput> {
        let batch = f.graph.shape(x)[0];
        let features = match &self.backbone {
            Some(b) => {
                let c = &b.config;
                let x3 = f.graph.reshape(x, &[batch, c.in_channels, c.in_length])?;
                b.forward(f, &self.store, x3)?
            }
            None => x,
        };
        Ok(match &self.head {
            Head::Moe(moe) => {
                let out = moe.forward(f, &self.store, features, rng)?;
                ModelOutput {
                    logits: out.output,
                    importance_loss: Some(out.importance_loss),
                    load_loss: out.load_loss,
                    decision: Some(out.decision),
                }
            }
            Head::Dense(d) => ModelOutput {
                logits: d.forward(f, &self.store, features)?,
                importance_loss: None,
                load_loss: None,
                decision: None,
            },
        })
    }

    /// Eval-mode logits, `batch_size` rows at a time, as row-major `(n, 9)`.
    pub fn logits(&self, samples: &[EncodedSample], batch_size: usize) -> TensorResult<Vec<T>> {
        let mut out = Vec::with_capacity(samples.len() * N_CLASSES);
        for chunk in samples.chunks(batch_size.max(1)) {
            let mut g = Graph::new();
            let x = g.constant(batch_tensor(chunk));
            let mut f = Forward::new(&mut g, Mode::Eval);
            let o = self.forward(&mut f, x, None)?;
            out.extend_from_slice(g.data(o.logits));
        }
        Ok(out)
    }

    /// Eval-mode class predictions (first maximum on ties).
    pub fn predict(&self, samples: &[EncodedSample], batch_size: usize) -> TensorResult<Vec<usize>> {
        Ok(self.logits(samples, batch_size)?.chunks(N_CLASSES).map(argmax).collect())
    }
}

pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Stacks samples into a `(batch, 78)` tensor.
pub fn batch_tensor<T: Scalar>(samples: &[EncodedSample]) -> Tensor<T> {
    let data = samples
        .iter()
        .flat_map(|s| s.features.iter().map(|v| T::from_f64_lossy(*v)))
        .collect();
    Tensor::new(vec![samples.len(), ENCODED_WIDTH], data).expect("encoded samples are 78 wide")
}
