use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, CV_EPS};
use crate::data::EncodedSample;
use crate::nn::{Forward, Mode};
use crate::scalar::Scalar;

use super::model::{batch_tensor, Head, Model};
use super::TrainError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertUsage {
    pub expert: usize,
    /// Total gate mass over the samples.
    pub importance: f64,
    /// Samples that kept this expert in their top k.
    pub selections: usize,
    /// Sum over samples of the probability of being selected under fresh noise.
    pub load: f64,
}

/// Per-expert utilization on a dataset, with the squared coefficient of
/// variation of each column (the quantities the balancing losses penalize).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingReport {
    pub n_experts: usize,
    pub top_k: usize,
    pub samples: usize,
    pub experts: Vec<ExpertUsage>,
    pub cv2_importance: f64,
    pub cv2_selections: f64,
    pub cv2_load: f64,
}

/// Population variance over `(mean + eps)²`.
pub fn cv_squared(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var / ((mean + CV_EPS) * (mean + CV_EPS))
}

/// Routes `samples` on clean logits (eval mode). The load column uses the
/// learned noise scale around the clean logits.
pub fn gating_report<T: Scalar>(model: &Model<T>, samples: &[EncodedSample], batch_size: usize) -> Result<GatingReport, TrainError> {
    let Head::Moe(moe) = &model.head else {
        return Err(TrainError::NoExperts);
    };
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (n, k) = (moe.config.n_experts, moe.config.top_k);
    let mut importance = vec![0.0; n];
    let mut selections = vec![0usize; n];
    let mut load = vec![0.0; n];
    for chunk in samples.chunks(batch_size.max(1)) {
        let mut g = Graph::new();
        let x = g.constant(batch_tensor::<T>(chunk));
        let mut f = Forward::new(&mut g, Mode::Eval);
        let out = model.forward(&mut f, x, None)?;
        let d = out.decision.expect("mixture head reports its routing");
        let p = f.graph.load_probability(d.clean_logits, d.noise_std, d.clean_logits, k)?;
        for (row, sel) in f.graph.data(d.gates).chunks(n).zip(&d.selected) {
            for (i, v) in row.iter().enumerate() {
                importance[i] += v.as_f64();
            }
            for &i in sel {
                selections[i] += 1;
            }
        }
        for row in f.graph.data(p).chunks(n) {
            for (i, v) in row.iter().enumerate() {
                load[i] += v.as_f64();
            }
        }
    }
    let counts: Vec<f64> = selections.iter().map(|c| *c as f64).collect();
    Ok(GatingReport {
        n_experts: n,
        top_k: k,
        samples: samples.len(),
        cv2_importance: cv_squared(&importance),
        cv2_selections: cv_squared(&counts),
        cv2_load: cv_squared(&load),
        experts: (0..n)
            .map(|i| ExpertUsage {
                expert: i,
                importance: importance[i],
                selections: selections[i],
                load: load[i],
            })
            .collect(),
    })
}
