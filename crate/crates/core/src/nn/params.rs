use crate::autodiff::{BatchStats, Graph, Var};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// `false` for buffers such as batch-norm running statistics.
    pub trainable: bool,
}

/// Owns every tensor of a model in registration order.
///
/// Layers hold [`ParamId`]s into the store; the order doubles as the
/// checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor: tensor.with_requires_grad(trainable),
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }
}

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates, gating noise.
    Train,
    /// Running statistics, clean gating.
    Eval,
}

/// Per-pass state threaded through layer forwards: the graph, the parameter
/// bindings, and pending running-statistic updates.
pub struct Forward<'g, T: Scalar> {
    pub graph: &'g mut Graph<T>,
    pub mode: Mode,
    bound: Vec<Option<Var>>,
    pub(crate) running_updates: Vec<(super::BatchNorm1d, BatchStats<T>)>,
}

impl<'g, T: Scalar> Forward<'g, T> {
    pub fn new(graph: &'g mut Graph<T>, mode: Mode) -> Self {
        Self {
            graph,
            mode,
            bound: Vec::new(),
            running_updates: Vec::new(),
        }
    }

    /// Graph node for a stored tensor, created on first use.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if self.bound.len() <= id.0 {
            self.bound.resize(id.0 + 1, None);
        }
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let entry = &store.entries[id.0];
        let v = if entry.trainable && self.mode == Mode::Train {
            self.graph.parameter(entry.tensor.clone())
        } else {
            self.graph.constant(entry.tensor.clone())
        };
        self.bound[id.0] = Some(v);
        v
    }

    /// Copies gradients of bound parameters back into the store.
    ///
    /// Parameters that did not take part in the pass (for instance experts
    /// no sample was routed to) are left with `grad = None`.
    pub fn write_grads(&self, store: &mut ParamStore<T>) {
        for (i, entry) in store.entries.iter_mut().enumerate() {
            entry.tensor.grad = match self.bound.get(i).copied().flatten() {
                Some(v) if entry.trainable => self.graph.grad(v).map(<[T]>::to_vec),
                _ => None,
            };
        }
    }

    /// Applies batch-norm running-statistic updates collected during a train pass.
    pub fn commit_running_stats(&mut self, store: &mut ParamStore<T>) {
        for (bn, stats) in self.running_updates.drain(..) {
            bn.update_running(store, &stats);
        }
    }
}

/// Uniform in `±1/sqrt(fan_in)`.
pub fn fan_in_uniform<T: Scalar>(rng: &mut RngState, shape: &[usize], fan_in: usize) -> Tensor<T> {
    rng.uniform_tensor(shape, 1.0 / (fan_in as f64).sqrt())
}
