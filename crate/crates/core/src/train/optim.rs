use crate::nn::ParamStore;
use crate::scalar::Scalar;

use super::config::AdamConfig;

/// Adam with bias correction. Parameters without a gradient this step
/// (unrouted experts) are skipped and keep their moments.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: Vec<u32>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = store.entries().iter().map(|e| vec![T::zero(); e.tensor.numel()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: vec![0; store.len()],
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>) {
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for (i, entry) in store.entries_mut().iter_mut().enumerate() {
            if !entry.trainable {
                continue;
            }
            let Some(grad) = entry.tensor.grad.take() else { continue };
            self.t[i] += 1;
            let t = self.t[i] as i32;
            let c1 = T::one() - b1.powi(t);
            let c2 = T::one() - b2.powi(t);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in entry.tensor.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
