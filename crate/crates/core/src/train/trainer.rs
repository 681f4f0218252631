use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::EncodedSample;
use crate::nn::{Forward, Mode};
use crate::rng::{streams, RngState};
use crate::scalar::Scalar;

use super::config::TrainConfig;
use super::loss::total_loss;
use super::model::{argmax, batch_tensor, Model};
use super::optim::Adam;
use super::TrainError;

/// Epoch means over training batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub cross_entropy: f64,
    pub importance_loss: f64,
    pub load_loss: f64,
    pub train_accuracy: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

fn check_finite<T: Scalar>(g: &Graph<T>, v: Option<Var>, component: &'static str, epoch: usize, step: usize) -> Result<f64, TrainError> {
    let Some(v) = v else { return Ok(0.0) };
    let x = g.scalar(v).as_f64();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(TrainError::NonFinite {
            component,
            value: x,
            epoch,
            step,
        })
    }
}

/// Mini-batch Adam on the total objective for `config.max_epochs` epochs.
///
/// The training set is reshuffled every epoch from the `SHUFFLE` stream;
/// gating noise comes from the `NOISE` stream. When the model has batch norm,
/// a trailing batch of a single row is dropped.
pub fn train<T: Scalar>(model: &mut Model<T>, samples: &[EncodedSample], config: &TrainConfig) -> Result<History, TrainError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut shuffle_rng = RngState::stream(config.seed, streams::SHUFFLE);
    let mut noise_rng = RngState::stream(config.seed, streams::NOISE);
    let mut adam = Adam::new(config.optimizer, &model.store);
    let min_batch = if model.needs_batch_stats() { 2 } else { 1 };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = History::default();

    for epoch in 1..=config.max_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut sums = [0.0f64; 4];
        let (mut correct, mut seen, mut batches) = (0usize, 0usize, 0usize);
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            if idx.len() < min_batch {
                debug!("epoch {epoch}: dropping trailing batch of {} row(s)", idx.len());
                continue;
            }
            let batch: Vec<EncodedSample> = idx.iter().map(|&i| samples[i].clone()).collect();
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            let mut g = Graph::new();
            let x = g.constant(batch_tensor::<T>(&batch));
            let mut f = Forward::new(&mut g, Mode::Train);
            let out = model.forward(&mut f, x, Some(&mut noise_rng))?;
            let parts = total_loss(f.graph, out.logits, &labels, out.importance_loss, out.load_loss, config.alpha)?;

            let g_ref: &Graph<T> = f.graph;
            let step_no = step + 1;
            let ce = check_finite(g_ref, Some(parts.cross_entropy), "cross-entropy", epoch, step_no)?;
            let imp = check_finite(g_ref, parts.importance, "importance loss", epoch, step_no)?;
            let load = check_finite(g_ref, parts.load, "load loss", epoch, step_no)?;
            let total = check_finite(g_ref, Some(parts.total), "total loss", epoch, step_no)?;
            correct += g_ref
                .data(out.logits)
                .chunks(crate::data::N_CLASSES)
                .zip(&labels)
                .filter(|(row, l)| argmax(row) == **l)
                .count();
            seen += labels.len();

            f.graph.backward(parts.total)?;
            f.write_grads(&mut model.store);
            f.commit_running_stats(&mut model.store);
            adam.step(&mut model.store);
            for (s, v) in sums.iter_mut().zip([total, ce, imp, load]) {
                *s += v;
            }
            batches += 1;
        }
        if batches == 0 {
            return Err(TrainError::EmptyDataset);
        }
        let n = batches as f64;
        let rec = EpochRecord {
            epoch,
            total_loss: sums[0] / n,
            cross_entropy: sums[1] / n,
            importance_loss: sums[2] / n,
            load_loss: sums[3] / n,
            train_accuracy: correct as f64 / seen as f64,
            batches,
        };
        info!(
            "epoch {epoch}: loss {:.5} (ce {:.5}, importance {:.5}, load {:.5}) train acc {:.4}",
            rec.total_loss, rec.cross_entropy, rec.importance_loss, rec.load_loss, rec.train_accuracy
        );
        history.epochs.push(rec);
    }
    Ok(history)
}
