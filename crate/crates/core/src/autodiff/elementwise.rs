use super::{shape_err, Graph, Grads, Op, Var};
use crate::scalar::{self, Scalar};
use crate::tensor::TensorResult;

impl<T: Scalar> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| *x + *y).collect();
        Ok(self.push(self.shape(a).to_vec(), data, Op::Add { a, b }, &[a, b]))
    }

    /// Adds a vector to every trailing-axis slice of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> TensorResult<Var> {
        let width = self.value(row).numel();
        if self.shape(a).last() != Some(&width) {
            return Err(shape_err("add_row", self.shape(a), self.shape(row)));
        }
        let r = self.data(row);
        let data = self
            .data(a)
            .chunks(width)
            .flat_map(|c| c.iter().zip(r).map(|(x, y)| *x + *y))
            .collect();
        Ok(self.push(self.shape(a).to_vec(), data, Op::AddRow { a, row }, &[a, row]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", self.shape(a), self.shape(b)));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| *x * *y).collect();
        Ok(self.push(self.shape(a).to_vec(), data, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let data = self.data(a).iter().map(|x| *x * factor).collect();
        self.push(self.shape(a).to_vec(), data, Op::Scale { a, factor }, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|x| x.max(T::zero())).collect();
        self.push(self.shape(a).to_vec(), data, Op::Relu { a }, &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|x| scalar::softplus(*x)).collect();
        self.push(self.shape(a).to_vec(), data, Op::Softplus { a }, &[a])
    }

    /// Standard normal CDF, elementwise.
    pub fn normal_cdf(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|x| scalar::normal_cdf(*x)).collect();
        self.push(self.shape(a).to_vec(), data, Op::NormalCdf { a }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> TensorResult<Var> {
        if shape.iter().product::<usize>() != self.value(a).numel() {
            return Err(shape_err("reshape", self.shape(a), shape));
        }
        let data = self.data(a).to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Reshape { a }, &[a]))
    }
}

pub(super) fn relu_backward<T: Scalar>(graph: &Graph<T>, a: Var, g: &[T], grads: &mut Grads<T>) {
    let x = graph.data(a);
    graph.accumulate(grads, a, || {
        g.iter()
            .zip(x)
            .map(|(g, x)| if *x > T::zero() { *g } else { T::zero() })
            .collect()
    });
}

pub(super) fn softplus_backward<T: Scalar>(graph: &Graph<T>, a: Var, g: &[T], grads: &mut Grads<T>) {
    let x = graph.data(a);
    graph.accumulate(grads, a, || {
        g.iter().zip(x).map(|(g, x)| *g * scalar::sigmoid(*x)).collect()
    });
}

pub(super) fn normal_cdf_backward<T: Scalar>(graph: &Graph<T>, a: Var, g: &[T], grads: &mut Grads<T>) {
    let x = graph.data(a);
    graph.accumulate(grads, a, || {
        g.iter().zip(x).map(|(g, x)| *g * scalar::normal_pdf(*x)).collect()
    });
}
