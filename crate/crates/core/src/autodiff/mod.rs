//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value and the information its backward rule needs. Nodes are created in
//! topological order, so the reverse pass is a single sweep from the loss back
//! to index 0. A graph is built per training step and then dropped.

mod conv;
mod elementwise;
mod linalg;
mod reduce;
mod routing;

use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError, TensorResult};

pub use conv::BatchStats;
pub use reduce::CV_EPS;
pub use routing::{descending_order, kth_excluding_index};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Linear { x: Var, w: Var, b: Var, batch: usize, inp: usize, out: usize },
    Add { a: Var, b: Var },
    AddRow { a: Var, row: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: T },
    Relu { a: Var },
    Softplus { a: Var },
    NormalCdf { a: Var },
    Reshape { a: Var },
    Softmax { a: Var, outer: usize, len: usize, inner: usize },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    Sum { a: Var },
    ColumnSum { a: Var, rows: usize, cols: usize },
    CvSquared { a: Var, eps: T },
    TopKMask { a: Var, keep: Vec<bool> },
    IndexSelectRows { a: Var, rows: Vec<usize>, width: usize },
    IndexAddRows { parts: Vec<(Var, Vec<usize>)>, width: usize },
    GatherEntries { a: Var, entries: Vec<usize> },
    ScaleRows { a: Var, s: Var, width: usize },
    LoadProbability(routing::LoadProbabilityTape<T>),
    Conv1d(conv::Conv1dTape),
    BatchNorm(conv::BatchNormTape<T>),
    MaxPool { a: Var, argmax: Vec<usize> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Computation tape.
pub struct Graph<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor; gradients are tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, mut t: Tensor<T>) -> Var {
        t.grad = None;
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a trainable input.
    pub fn parameter(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    /// Adds an input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.item()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = inputs.iter().any(|v| self.requires_grad(*v));
        let value = Tensor::new(shape, data)
            .expect("op produced consistent shape")
            .with_requires_grad(requires_grad);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a single-element `loss`.
    ///
    /// Afterwards every node that depends on a gradient-tracking leaf carries a
    /// populated `grad`. Calling it again recomputes from scratch.
    pub fn backward(&mut self, loss: Var) -> TensorResult<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Dimension {
                op: "backward",
                msg: format!("loss must be a single value, got shape {:?}", self.shape(loss)),
            });
        }
        for node in &mut self.nodes {
            node.value.grad = None;
        }
        let mut grads = Grads {
            slots: (0..self.nodes.len()).map(|_| None).collect(),
        };
        grads.slots[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads.slots[id].take() else {
                continue;
            };
            if !self.nodes[id].value.requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut grads);
            self.nodes[id].value.grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut Grads<T>) {
        let out = &self.nodes[id].value;
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                linalg::matmul_backward(self, *a, *b, (*m, *k, *n), g, grads)
            }
            Op::Linear { x, w, b, batch, inp, out: o } => {
                linalg::linear_backward(self, (*x, *w, *b), (*batch, *inp, *o), g, grads)
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, || g.to_vec());
                self.accumulate(grads, *b, || g.to_vec());
            }
            Op::AddRow { a, row } => {
                self.accumulate(grads, *a, || g.to_vec());
                let width = self.value(*row).numel();
                self.accumulate(grads, *row, || {
                    let mut acc = vec![T::zero(); width];
                    for chunk in g.chunks(width) {
                        for (s, v) in acc.iter_mut().zip(chunk) {
                            *s += *v;
                        }
                    }
                    acc
                });
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.data(*a), self.data(*b));
                self.accumulate(grads, *a, || g.iter().zip(bv).map(|(g, b)| *g * *b).collect());
                self.accumulate(grads, *b, || g.iter().zip(av).map(|(g, a)| *g * *a).collect());
            }
            Op::Scale { a, factor } => {
                self.accumulate(grads, *a, || g.iter().map(|v| *v * *factor).collect())
            }
            Op::Relu { a } => elementwise::relu_backward(self, *a, g, grads),
            Op::Softplus { a } => elementwise::softplus_backward(self, *a, g, grads),
            Op::NormalCdf { a } => elementwise::normal_cdf_backward(self, *a, g, grads),
            Op::Reshape { a } => self.accumulate(grads, *a, || g.to_vec()),
            Op::Softmax { a, outer, len, inner } => {
                reduce::softmax_backward(self, *a, out.data(), (*outer, *len, *inner), g, grads)
            }
            Op::CrossEntropy { logits, labels, probs } => {
                reduce::cross_entropy_backward(self, *logits, labels, probs, g, grads)
            }
            Op::Sum { a } => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, || vec![g[0]; n]);
            }
            Op::ColumnSum { a, rows, cols } => {
                self.accumulate(grads, *a, || {
                    let mut d = Vec::with_capacity(rows * cols);
                    for _ in 0..*rows {
                        d.extend_from_slice(g);
                    }
                    d
                })
            }
            Op::CvSquared { a, eps } => reduce::cv_squared_backward(self, *a, *eps, g, grads),
            Op::TopKMask { a, keep } => self.accumulate(grads, *a, || {
                g.iter()
                    .zip(keep)
                    .map(|(g, k)| if *k { *g } else { T::zero() })
                    .collect()
            }),
            Op::IndexSelectRows { a, rows, width } => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, || {
                    let mut d = vec![T::zero(); n];
                    for (j, &r) in rows.iter().enumerate() {
                        for c in 0..*width {
                            d[r * width + c] += g[j * width + c];
                        }
                    }
                    d
                });
            }
            Op::IndexAddRows { parts, width } => {
                for (part, rows) in parts {
                    self.accumulate(grads, *part, || {
                        let mut d = Vec::with_capacity(rows.len() * width);
                        for &r in rows {
                            d.extend_from_slice(&g[r * width..(r + 1) * width]);
                        }
                        d
                    });
                }
            }
            Op::GatherEntries { a, entries } => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, || {
                    let mut d = vec![T::zero(); n];
                    for (j, &e) in entries.iter().enumerate() {
                        d[e] += g[j];
                    }
                    d
                });
            }
            Op::ScaleRows { a, s, width } => {
                let (av, sv) = (self.data(*a), self.data(*s));
                self.accumulate(grads, *a, || {
                    g.iter()
                        .enumerate()
                        .map(|(i, g)| *g * sv[i / width])
                        .collect()
                });
                self.accumulate(grads, *s, || {
                    g.chunks(*width)
                        .zip(av.chunks(*width))
                        .map(|(gr, ar)| gr.iter().zip(ar).map(|(g, a)| *g * *a).sum())
                        .collect()
                });
            }
            Op::LoadProbability(tape) => routing::load_probability_backward(self, tape, g, grads),
            Op::Conv1d(tape) => conv::conv1d_backward(self, tape, g, grads),
            Op::BatchNorm(tape) => conv::batchnorm_backward(self, tape, g, grads),
            Op::MaxPool { a, argmax } => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, || {
                    let mut d = vec![T::zero(); n];
                    for (o, &i) in argmax.iter().enumerate() {
                        d[i] += g[o];
                    }
                    d
                });
            }
        }
    }

    /// Adds `make()` into the gradient slot of `v`, skipping work when `v` is untracked.
    pub(crate) fn accumulate(&self, grads: &mut Grads<T>, v: Var, make: impl FnOnce() -> Vec<T>) {
        if !self.requires_grad(v) {
            return;
        }
        let d = make();
        match &mut grads.slots[v.0] {
            Some(acc) => acc.iter_mut().zip(d).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(d),
        }
    }
}

pub(crate) struct Grads<T> {
    slots: Vec<Option<Vec<T>>>,
}

pub(crate) fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

#[cfg(test)]
pub(crate) mod testutil;
