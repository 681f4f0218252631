use super::{shape_err, Graph, Grads, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::{TensorError, TensorResult};

pub(crate) struct Conv1dTape {
    input: Var,
    weight: Var,
    bias: Var,
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    padding: usize,
    in_len: usize,
    out_len: usize,
}

pub(crate) struct BatchNormTape<T> {
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch: usize,
    channels: usize,
    len: usize,
    train: bool,
}

/// Per-channel statistics of one training batch, used to update running estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance, as used for normalization.
    pub var: Vec<T>,
    /// Number of values per channel.
    pub count: usize,
}

/// Unfolds `[batch × in_ch × in_len]` into rows of `in_ch * kernel` values,
/// one row per `(sample, output position)`; padding reads as 0.
fn im2col<T: Scalar>(
    x: &[T],
    batch: usize,
    in_ch: usize,
    in_len: usize,
    kernel: usize,
    padding: usize,
    out_len: usize,
) -> Vec<T> {
    let q = in_ch * kernel;
    let mut cols = vec![T::zero(); batch * out_len * q];
    for n in 0..batch {
        for t in 0..out_len {
            let row = &mut cols[(n * out_len + t) * q..(n * out_len + t + 1) * q];
            for c in 0..in_ch {
                for j in 0..kernel {
                    let pos = t + j;
                    if pos >= padding && pos - padding < in_len {
                        row[c * kernel + j] = x[(n * in_ch + c) * in_len + pos - padding];
                    }
                }
            }
        }
    }
    cols
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

#[inline]
fn axpy<T: Scalar>(out: &mut [T], alpha: T, x: &[T]) {
    if alpha == T::zero() {
        return;
    }
    for (o, v) in out.iter_mut().zip(x) {
        *o += alpha * *v;
    }
}

fn expect_3d(shape: &[usize], op: &'static str) -> TensorResult<(usize, usize, usize)> {
    match *shape {
        [b, c, l] => Ok((b, c, l)),
        _ => Err(TensorError::Dimension {
            op,
            msg: format!("expected (batch, channels, length), got {shape:?}"),
        }),
    }
}

impl<T: Scalar> Graph<T> {
    /// Stride-1 cross-correlation with symmetric zero padding.
    ///
    /// `input` is `[batch × in_ch × len]`, `weight` is `[out_ch × in_ch × kernel]`.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var, padding: usize) -> TensorResult<Var> {
        let (batch, in_ch, in_len) = expect_3d(self.shape(input), "conv1d")?;
        let (out_ch, w_in, kernel) = expect_3d(self.shape(weight), "conv1d weight")?;
        if w_in != in_ch {
            return Err(shape_err("conv1d", self.shape(input), self.shape(weight)));
        }
        if self.shape(bias) != [out_ch] {
            return Err(shape_err("conv1d bias", self.shape(weight), self.shape(bias)));
        }
        if in_len + 2 * padding < kernel {
            return Err(TensorError::Dimension {
                op: "conv1d",
                msg: format!("length {in_len} too short for kernel {kernel}"),
            });
        }
        let out_len = in_len + 2 * padding + 1 - kernel;
        let (w, b) = (self.data(weight), self.data(bias));
        let cols = im2col(self.data(input), batch, in_ch, in_len, kernel, padding, out_len);
        let q = in_ch * kernel;
        let mut y = vec![T::zero(); batch * out_ch * out_len];
        for n in 0..batch {
            for t in 0..out_len {
                let col = &cols[(n * out_len + t) * q..(n * out_len + t + 1) * q];
                for o in 0..out_ch {
                    let wrow = &w[o * q..(o + 1) * q];
                    y[(n * out_ch + o) * out_len + t] = b[o] + dot(col, wrow);
                }
            }
        }
        let tape = Conv1dTape {
            input,
            weight,
            bias,
            batch,
            in_ch,
            out_ch,
            kernel,
            padding,
            in_len,
            out_len,
        };
        Ok(self.push(vec![batch, out_ch, out_len], y, Op::Conv1d(tape), &[input, weight, bias]))
    }

    /// Per-channel normalization using the statistics of this batch.
    ///
    /// Statistics are taken over the batch and length axes. Returns the output
    /// and the batch statistics for the caller's running averages.
    pub fn batch_norm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> TensorResult<(Var, BatchStats<T>)> {
        let (batch, channels, len) = expect_3d(self.shape(input), "batch_norm")?;
        self.check_affine(input, gamma, beta, channels)?;
        let count = batch * len;
        if count < 2 {
            return Err(TensorError::DegenerateBatch(count));
        }
        let x = self.data(input);
        let nf = T::from_usize_lossy(count);
        let mut mean = vec![T::zero(); channels];
        let mut var = vec![T::zero(); channels];
        for n in 0..batch {
            for c in 0..channels {
                let row = &x[(n * channels + c) * len..(n * channels + c + 1) * len];
                mean[c] += row.iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        for n in 0..batch {
            for c in 0..channels {
                let row = &x[(n * channels + c) * len..(n * channels + c + 1) * len];
                var[c] += row.iter().map(|v| (*v - mean[c]) * (*v - mean[c])).sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v /= nf);
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let stats = BatchStats { mean: mean.clone(), var, count };
        let out = self.normalize(input, gamma, beta, &mean, inv_std, (batch, channels, len), true);
        Ok((out, stats))
    }

    /// Per-channel normalization with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> TensorResult<Var> {
        let (batch, channels, len) = expect_3d(self.shape(input), "batch_norm")?;
        self.check_affine(input, gamma, beta, channels)?;
        if running_mean.len() != channels || running_var.len() != channels {
            return Err(shape_err("batch_norm running stats", &[channels], &[running_mean.len()]));
        }
        let inv_std = running_var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        Ok(self.normalize(input, gamma, beta, running_mean, inv_std, (batch, channels, len), false))
    }

    fn check_affine(&self, input: Var, gamma: Var, beta: Var, channels: usize) -> TensorResult<()> {
        if self.shape(gamma) != [channels] || self.shape(beta) != [channels] {
            return Err(shape_err("batch_norm", self.shape(input), self.shape(gamma)));
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: Vec<T>,
        (batch, channels, len): (usize, usize, usize),
        train: bool,
    ) -> Var {
        let (x, gm, bt) = (self.data(input), self.data(gamma), self.data(beta));
        let mut xhat = Vec::with_capacity(x.len());
        let mut y = Vec::with_capacity(x.len());
        for n in 0..batch {
            for c in 0..channels {
                for v in &x[(n * channels + c) * len..(n * channels + c + 1) * len] {
                    let h = (*v - mean[c]) * inv_std[c];
                    xhat.push(h);
                    y.push(h * gm[c] + bt[c]);
                }
            }
        }
        let tape = BatchNormTape {
            input,
            gamma,
            beta,
            xhat,
            inv_std,
            batch,
            channels,
            len,
            train,
        };
        self.push(vec![batch, channels, len], y, Op::BatchNorm(tape), &[input, gamma, beta])
    }

    /// Non-overlapping max pooling with window 2, stride 2.
    ///
    /// Odd lengths drop the trailing element. Ties route the gradient to the
    /// first position of the window.
    pub fn max_pool2(&mut self, input: Var) -> TensorResult<Var> {
        let (batch, channels, len) = expect_3d(self.shape(input), "max_pool")?;
        if len < 2 {
            return Err(TensorError::Dimension {
                op: "max_pool",
                msg: format!("length {len} is shorter than the window 2"),
            });
        }
        let out_len = len / 2;
        let x = self.data(input);
        let mut y = Vec::with_capacity(batch * channels * out_len);
        let mut argmax = Vec::with_capacity(batch * channels * out_len);
        for row in 0..batch * channels {
            for t in 0..out_len {
                let i = row * len + 2 * t;
                let pick = if x[i + 1] > x[i] { i + 1 } else { i };
                y.push(x[pick]);
                argmax.push(pick);
            }
        }
        Ok(self.push(
            vec![batch, channels, out_len],
            y,
            Op::MaxPool { a: input, argmax },
            &[input],
        ))
    }
}

pub(super) fn conv1d_backward<T: Scalar>(graph: &Graph<T>, t: &Conv1dTape, g: &[T], grads: &mut Grads<T>) {
    let w = graph.data(t.weight);
    let Conv1dTape {
        batch,
        in_ch,
        out_ch,
        kernel,
        padding,
        in_len,
        out_len,
        ..
    } = *t;
    let q = in_ch * kernel;
    let gat = |n: usize, o: usize, tt: usize| g[(n * out_ch + o) * out_len + tt];
    graph.accumulate(grads, t.input, || {
        let mut dcol = vec![T::zero(); q];
        let mut d = vec![T::zero(); batch * in_ch * in_len];
        for n in 0..batch {
            for tt in 0..out_len {
                dcol.iter_mut().for_each(|v| *v = T::zero());
                for o in 0..out_ch {
                    axpy(&mut dcol, gat(n, o, tt), &w[o * q..(o + 1) * q]);
                }
                for c in 0..in_ch {
                    for j in 0..kernel {
                        let pos = tt + j;
                        if pos >= padding && pos - padding < in_len {
                            d[(n * in_ch + c) * in_len + pos - padding] += dcol[c * kernel + j];
                        }
                    }
                }
            }
        }
        d
    });
    graph.accumulate(grads, t.weight, || {
        let cols = im2col(graph.data(t.input), batch, in_ch, in_len, kernel, padding, out_len);
        let mut d = vec![T::zero(); out_ch * q];
        for n in 0..batch {
            for tt in 0..out_len {
                let col = &cols[(n * out_len + tt) * q..(n * out_len + tt + 1) * q];
                for o in 0..out_ch {
                    axpy(&mut d[o * q..(o + 1) * q], gat(n, o, tt), col);
                }
            }
        }
        d
    });
    graph.accumulate(grads, t.bias, || {
        let mut d = vec![T::zero(); out_ch];
        for n in 0..batch {
            for (o, dv) in d.iter_mut().enumerate() {
                *dv += g[(n * out_ch + o) * out_len..(n * out_ch + o + 1) * out_len].iter().copied().sum::<T>();
            }
        }
        d
    });
}

pub(super) fn batchnorm_backward<T: Scalar>(
    graph: &Graph<T>,
    t: &BatchNormTape<T>,
    g: &[T],
    grads: &mut Grads<T>,
) {
    let (batch, channels, len) = (t.batch, t.channels, t.len);
    let gamma = graph.data(t.gamma);
    let mut sum_g = vec![T::zero(); channels];
    let mut sum_gx = vec![T::zero(); channels];
    for n in 0..batch {
        for c in 0..channels {
            let base = (n * channels + c) * len;
            for i in base..base + len {
                sum_g[c] += g[i];
                sum_gx[c] += g[i] * t.xhat[i];
            }
        }
    }
    graph.accumulate(grads, t.input, || {
        let mut d = vec![T::zero(); g.len()];
        let count = T::from_usize_lossy(batch * len);
        for n in 0..batch {
            for c in 0..channels {
                let base = (n * channels + c) * len;
                let k = gamma[c] * t.inv_std[c];
                for i in base..base + len {
                    d[i] = if t.train {
                        k / count * (count * g[i] - sum_g[c] - t.xhat[i] * sum_gx[c])
                    } else {
                        k * g[i]
                    };
                }
            }
        }
        d
    });
    graph.accumulate(grads, t.gamma, || sum_gx.clone());
    graph.accumulate(grads, t.beta, || sum_g.clone());
}
