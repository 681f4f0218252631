//! Sparsely-gated mixture-of-experts head.
//!
//! A linear router scores every expert, optionally perturbs the scores with
//! learned Gaussian noise, keeps the top `k` per sample, and softmaxes them
//! into gate weights. Only the selected experts run; their outputs are summed
//! with those weights. Two auxiliary losses keep expert utilization balanced:
//! the squared coefficient of variation of per-expert gate mass (importance)
//! and of per-expert selection probability (load).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, Var};
use crate::nn::{Dense, Forward, Mode, ParamId, ParamStore};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorResult};

pub use crate::autodiff::{descending_order, kth_excluding_index};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MoeConfigError {
    #[error("top_k = {top_k} must lie in 1..={n_experts}")]
    TopK { top_k: usize, n_experts: usize },
    #[error("{0} must be positive")]
    Zero(&'static str),
    #[error("balancing-loss weights must be finite and nonnegative")]
    Weight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeConfig {
    pub n_experts: usize,
    pub top_k: usize,
    pub input_dim: usize,
    pub expert_hidden: usize,
    pub n_classes: usize,
    pub w_importance: f64,
    pub w_load: f64,
    /// Gating noise during training. Evaluation always routes on clean logits.
    pub noise_enabled: bool,
}

impl Default for MoeConfig {
    fn default() -> Self {
        Self {
            n_experts: 128,
            top_k: 32,
            input_dim: 128,
            expert_hidden: 16,
            n_classes: 9,
            w_importance: 1.0,
            w_load: 1.0,
            noise_enabled: true,
        }
    }
}

impl MoeConfig {
    pub fn with_experts(mut self, n_experts: usize, top_k: usize) -> Self {
        self.n_experts = n_experts;
        self.top_k = top_k;
        self
    }

    pub fn validate(&self) -> Result<(), MoeConfigError> {
        for (name, v) in [
            ("n_experts", self.n_experts),
            ("input_dim", self.input_dim),
            ("expert_hidden", self.expert_hidden),
            ("n_classes", self.n_classes),
        ] {
            if v == 0 {
                return Err(MoeConfigError::Zero(name));
            }
        }
        if self.top_k == 0 || self.top_k > self.n_experts {
            return Err(MoeConfigError::TopK {
                top_k: self.top_k,
                n_experts: self.n_experts,
            });
        }
        if !(self.w_importance >= 0.0 && self.w_importance.is_finite() && self.w_load >= 0.0 && self.w_load.is_finite()) {
            return Err(MoeConfigError::Weight);
        }
        Ok(())
    }
}

/// Two-layer perceptron: `input → hidden (ReLU) → classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expert {
    pub hidden: Dense,
    pub output: Dense,
}

impl Expert {
    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, store: &ParamStore<T>, x: Var) -> TensorResult<Var> {
        let h = self.hidden.forward(f, store, x)?;
        let h = f.graph.relu(h);
        self.output.forward(f, store, h)
    }
}

/// Clean and noise projections, both `[input_dim × n_experts]`, zero-initialized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Router {
    pub w_gate: ParamId,
    pub w_noise: ParamId,
}

/// Routing outcome for one batch.
#[derive(Debug, Clone)]
pub struct GateDecision {
    /// `x · W_g`
    pub clean_logits: Var,
    /// `softplus(x · W_noise)`
    pub noise_std: Var,
    /// Clean logits plus sampled noise, or the clean logits when noise is off.
    pub noisy_logits: Var,
    /// Sparse softmax weights, at most `k` nonzeros per row.
    pub gates: Var,
    /// Per row, the kept expert ids in descending logit order.
    pub selected: Vec<Vec<usize>>,
    pub noise_applied: bool,
}

impl Router {
    /// Noisy top-k gating.
    ///
    /// With `noise = Some(rng)` the logits become `x·W_g + ε ⊙ softplus(x·W_noise)`
    /// with `ε ~ N(0, 1)`; otherwise they are the clean logits.
    pub fn gate<T: Scalar>(
        &self,
        f: &mut Forward<'_, T>,
        store: &ParamStore<T>,
        x: Var,
        k: usize,
        noise: Option<&mut RngState>,
    ) -> TensorResult<GateDecision> {
        let wg = f.param(store, self.w_gate);
        let wn = f.param(store, self.w_noise);
        let clean = f.graph.matmul(x, wg)?;
        let raw = f.graph.matmul(x, wn)?;
        let noise_std = f.graph.softplus(raw);
        let noise_applied = noise.is_some();
        let noisy = match noise {
            Some(rng) => {
                let shape = f.graph.shape(clean).to_vec();
                let eps = f.graph.constant(rng.standard_normal(&shape));
                let scaled = f.graph.mul(eps, noise_std)?;
                f.graph.add(clean, scaled)?
            }
            None => clean,
        };
        let (masked, selected) = f.graph.top_k_mask(noisy, k)?;
        let gates = f.graph.softmax(masked, 1)?;
        Ok(GateDecision {
            clean_logits: clean,
            noise_std,
            noisy_logits: noisy,
            gates,
            selected,
            noise_applied,
        })
    }
}

/// `w · CV(Σ_rows gates)²`
pub fn importance_loss<T: Scalar>(g: &mut Graph<T>, gates: Var, w_importance: f64) -> TensorResult<Var> {
    let importance = g.column_sum(gates)?;
    let cv = g.cv_squared(importance);
    Ok(g.scale(cv, T::lit(w_importance)))
}

/// Per-sample, per-expert probability of staying selected under redrawn noise.
pub fn load_probability<T: Scalar>(g: &mut Graph<T>, decision: &GateDecision, k: usize) -> TensorResult<Var> {
    g.load_probability(decision.clean_logits, decision.noise_std, decision.noisy_logits, k)
}

/// `w · CV(Σ_rows P)²`
pub fn load_loss<T: Scalar>(g: &mut Graph<T>, probability: Var, w_load: f64) -> TensorResult<Var> {
    let load = g.column_sum(probability)?;
    let cv = g.cv_squared(load);
    Ok(g.scale(cv, T::lit(w_load)))
}

/// Gate-weighted sum of expert outputs, evaluating each expert only on the rows routed to it.
pub fn combine_experts<T: Scalar>(
    f: &mut Forward<'_, T>,
    store: &ParamStore<T>,
    experts: &[Expert],
    decision: &GateDecision,
    x: Var,
) -> TensorResult<Var> {
    let batch = f.graph.shape(x)[0];
    let n = experts.len();
    let width = experts.first().map_or(0, |e| e.output.out_features);
    let mut routed: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, sel) in decision.selected.iter().enumerate() {
        for &i in sel {
            routed[i].push(r);
        }
    }
    let mut parts = Vec::new();
    for (i, rows) in routed.into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let xi = f.graph.index_select_rows(x, &rows)?;
        let yi = experts[i].forward(f, store, xi)?;
        let entries: Vec<usize> = rows.iter().map(|r| r * n + i).collect();
        let gi = f.graph.gather_entries(decision.gates, &entries)?;
        let weighted = f.graph.scale_rows(yi, gi)?;
        parts.push((weighted, rows));
    }
    f.graph.index_add_rows(batch, width, parts)
}

/// Outputs of one MoE forward pass.
#[derive(Debug, Clone)]
pub struct MoeOutput {
    pub output: Var,
    pub decision: GateDecision,
    pub importance_loss: Var,
    /// Present only when gating noise was applied.
    pub load_loss: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoeLayer {
    pub config: MoeConfig,
    pub router: Router,
    pub experts: Vec<Expert>,
}

impl MoeLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut RngState, config: MoeConfig) -> Self {
        let shape = vec![config.input_dim, config.n_experts];
        let router = Router {
            w_gate: store.add("moe.router.w_gate", Tensor::zeros(shape.clone()), true),
            w_noise: store.add("moe.router.w_noise", Tensor::zeros(shape), true),
        };
        let experts = (0..config.n_experts)
            .map(|i| Expert {
                hidden: Dense::new(store, rng, &format!("moe.expert{i}.hidden"), config.input_dim, config.expert_hidden),
                output: Dense::new(store, rng, &format!("moe.expert{i}.output"), config.expert_hidden, config.n_classes),
            })
            .collect();
        Self { config, router, experts }
    }

    /// Noise is drawn from `rng` only in train mode with noise enabled.
    pub fn forward<T: Scalar>(
        &self,
        f: &mut Forward<'_, T>,
        store: &ParamStore<T>,
        x: Var,
        rng: Option<&mut RngState>,
    ) -> TensorResult<MoeOutput> {
        let noise = match (f.mode, self.config.noise_enabled) {
            (Mode::Train, true) => rng,
            _ => None,
        };
        let k = self.config.top_k;
        let decision = self.router.gate(f, store, x, k, noise)?;
        let output = combine_experts(f, store, &self.experts, &decision, x)?;
        let importance = importance_loss(f.graph, decision.gates, self.config.w_importance)?;
        let load = if decision.noise_applied {
            let p = load_probability(f.graph, &decision, k)?;
            Some(load_loss(f.graph, p, self.config.w_load)?)
        } else {
            None
        };
        Ok(MoeOutput {
            output,
            decision,
            importance_loss: importance,
            load_loss: load,
        })
    }
}
