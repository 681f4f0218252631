use super::{shape_err, Graph, Grads, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::{TensorError, TensorResult};

/// Added to the mean before dividing in [`Graph::cv_squared`].
pub const CV_EPS: f64 = 1e-10;

impl<T: Scalar> Graph<T> {
    /// Softmax along `axis`.
    ///
    /// `-inf` entries (masked logits) come out as exactly `0`. A slice with no
    /// finite entry is an error.
    pub fn softmax(&mut self, a: Var, axis: usize) -> TensorResult<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Dimension {
                op: "softmax",
                msg: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.data(a);
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len)
                    .map(|j| x[at(j)])
                    .fold(T::neg_infinity(), |m, v| if v > m { v } else { m });
                if max == T::neg_infinity() {
                    return Err(TensorError::DegenerateSoftmax);
                }
                let mut total = T::zero();
                for j in 0..len {
                    let e = (x[at(j)] - max).exp();
                    y[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    y[at(j)] /= total;
                }
            }
        }
        Ok(self.push(shape, y, Op::Softmax { a, outer, len, inner }, &[a]))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> TensorResult<Var> {
        let shape = self.shape(logits);
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(shape_err("cross_entropy", shape, &[labels.len()]));
        }
        let (batch, classes) = (shape[0], shape[1]);
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(TensorError::LabelOutOfRange { label, classes });
        }
        let x = self.data(logits);
        let mut probs = Vec::with_capacity(x.len());
        let mut total = T::zero();
        for (row, &label) in x.chunks(classes).zip(labels) {
            let max = row.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
            let sum: T = row.iter().map(|v| (*v - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - row[label];
            probs.extend(row.iter().map(|v| (*v - lse).exp()));
        }
        let loss = total / T::from_usize_lossy(batch);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum { a }, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_usize_lossy(self.value(a).numel());
        let s = self.sum(a);
        self.scale(s, T::one() / n)
    }

    /// Sum over axis 0 of a 2-D tensor.
    pub fn column_sum(&mut self, a: Var) -> TensorResult<Var> {
        let shape = self.shape(a);
        if shape.len() != 2 {
            return Err(shape_err("column_sum", shape, &[]));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let mut acc = vec![T::zero(); cols];
        for row in self.data(a).chunks(cols) {
            for (s, v) in acc.iter_mut().zip(row) {
                *s += *v;
            }
        }
        Ok(self.push(vec![cols], acc, Op::ColumnSum { a, rows, cols }, &[a]))
    }

    /// `(std / (mean + 1e-10))²` with the population standard deviation, over all entries.
    pub fn cv_squared(&mut self, a: Var) -> Var {
        let eps = T::lit(CV_EPS);
        let (_, var, denom) = cv_parts(self.data(a), eps);
        self.push(vec![1], vec![var / (denom * denom)], Op::CvSquared { a, eps }, &[a])
    }
}

fn cv_parts<T: Scalar>(v: &[T], eps: T) -> (T, T, T) {
    let n = T::from_usize_lossy(v.len());
    let mean = v.iter().copied().sum::<T>() / n;
    let var = v.iter().map(|x| (*x - mean) * (*x - mean)).sum::<T>() / n;
    (mean, var, mean + eps)
}

pub(super) fn softmax_backward<T: Scalar>(
    graph: &Graph<T>,
    a: Var,
    y: &[T],
    (outer, len, inner): (usize, usize, usize),
    g: &[T],
    grads: &mut Grads<T>,
) {
    graph.accumulate(grads, a, || {
        let mut d = vec![T::zero(); y.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let dot: T = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                for j in 0..len {
                    d[at(j)] = y[at(j)] * (g[at(j)] - dot);
                }
            }
        }
        d
    });
}

pub(super) fn cross_entropy_backward<T: Scalar>(
    graph: &Graph<T>,
    logits: Var,
    labels: &[usize],
    probs: &[T],
    g: &[T],
    grads: &mut Grads<T>,
) {
    let batch = labels.len();
    let classes = probs.len() / batch;
    let scale = g[0] / T::from_usize_lossy(batch);
    graph.accumulate(grads, logits, || {
        let mut d: Vec<T> = probs.iter().map(|p| *p * scale).collect();
        for (r, &l) in labels.iter().enumerate() {
            d[r * classes + l] -= scale;
        }
        d
    });
}

pub(super) fn cv_squared_backward<T: Scalar>(
    graph: &Graph<T>,
    a: Var,
    eps: T,
    g: &[T],
    grads: &mut Grads<T>,
) {
    let v = graph.data(a);
    let (mean, var, denom) = cv_parts(v, eps);
    let n = T::from_usize_lossy(v.len());
    let two = T::lit(2.0);
    let d2 = denom * denom;
    let common = two * var / (d2 * denom * n);
    graph.accumulate(grads, a, || {
        v.iter()
            .map(|x| g[0] * (two * (*x - mean) / (n * d2) - common))
            .collect()
    });
}
