use crate::autodiff::{BatchStats, Var};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorResult};

use super::params::{fan_in_uniform, Forward, Mode, ParamId, ParamStore};

pub const CONV_KERNEL: usize = 3;
pub const CONV_PADDING: usize = 1;

/// Length-preserving 1-D convolution (kernel 3, padding 1, stride 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv1d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut RngState,
        name: &str,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        let fan_in = in_channels * CONV_KERNEL;
        let w = fan_in_uniform(rng, &[out_channels, in_channels, CONV_KERNEL], fan_in);
        let b = fan_in_uniform(rng, &[out_channels], fan_in);
        Self {
            weight: store.add(format!("{name}.weight"), w, true),
            bias: store.add(format!("{name}.bias"), b, true),
            in_channels,
            out_channels,
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, store: &ParamStore<T>, x: Var) -> TensorResult<Var> {
        let w = f.param(store, self.weight);
        let b = f.param(store, self.bias);
        f.graph.conv1d(x, w, b, CONV_PADDING)
    }
}

/// Batch normalization over `(batch, length)` per channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, momentum: f64, eps: f64) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(vec![channels], T::one()), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![channels]), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(vec![channels]), false),
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::filled(vec![channels], T::one()),
                false,
            ),
            channels,
            momentum,
            eps,
        }
    }

    /// Train mode normalizes with batch statistics and queues a running-stat
    /// update on `f`; eval mode uses the running statistics only.
    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, store: &ParamStore<T>, x: Var) -> TensorResult<Var> {
        let gamma = f.param(store, self.gamma);
        let beta = f.param(store, self.beta);
        let eps = T::lit(self.eps);
        match f.mode {
            Mode::Train => {
                let (y, stats) = f.graph.batch_norm_train(x, gamma, beta, eps)?;
                f.running_updates.push((*self, stats));
                Ok(y)
            }
            Mode::Eval => f.graph.batch_norm_eval(
                x,
                gamma,
                beta,
                store.get(self.running_mean).data(),
                store.get(self.running_var).data(),
                eps,
            ),
        }
    }

    /// Exponential moving average; the variance estimate is unbiased.
    pub fn update_running<T: Scalar>(&self, store: &mut ParamStore<T>, stats: &BatchStats<T>) {
        let m = T::lit(self.momentum);
        let keep = T::one() - m;
        let n = T::from_usize_lossy(stats.count);
        let correction = n / (n - T::one());
        for (r, b) in store.get_mut(self.running_mean).data_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * *b;
        }
        for (r, b) in store.get_mut(self.running_var).data_mut().iter_mut().zip(&stats.var) {
            *r = keep * *r + m * *b * correction;
        }
    }
}

/// Fully connected layer, weights stored `[out × in]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Dense {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut RngState,
        name: &str,
        in_features: usize,
        out_features: usize,
    ) -> Self {
        let w = fan_in_uniform(rng, &[out_features, in_features], in_features);
        let b = fan_in_uniform(rng, &[out_features], in_features);
        Self {
            weight: store.add(format!("{name}.weight"), w, true),
            bias: store.add(format!("{name}.bias"), b, true),
            in_features,
            out_features,
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, store: &ParamStore<T>, x: Var) -> TensorResult<Var> {
        let w = f.param(store, self.weight);
        let b = f.param(store, self.bias);
        f.graph.linear(x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.in_features * self.out_features + self.out_features
    }
}
