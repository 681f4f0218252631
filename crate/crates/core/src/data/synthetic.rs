use serde::{Deserialize, Serialize};

use super::encode::EncodedSample;
use super::schema::{ENCODED_WIDTH, N_CLASSES};
use crate::rng::{streams, RngState};

/// Isotropic Gaussian clusters in the 78-value encoded space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobConfig {
    pub n_samples: usize,
    pub n_classes: usize,
    /// Per-coordinate noise around each center.
    pub spread: f64,
    pub seed: u64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            n_classes: N_CLASSES,
            spread: 0.05,
            seed: 0,
        }
    }
}

/// Class centers are drawn uniformly from `[0.2, 0.8]^78`; with the default
/// spread the expected center distance is about 40 noise deviations, so the
/// classes are linearly separable. Labels cycle through the classes, then the
/// sample order is shuffled.
pub fn gaussian_blobs(cfg: &BlobConfig) -> Vec<EncodedSample> {
    let mut rng = RngState::stream(cfg.seed, streams::SYNTHETIC);
    let centers: Vec<Vec<f64>> = (0..cfg.n_classes)
        .map(|_| (0..ENCODED_WIDTH).map(|_| rng.uniform(0.2, 0.8)).collect())
        .collect();
    let mut samples: Vec<EncodedSample> = (0..cfg.n_samples)
        .map(|i| {
            let label = i % cfg.n_classes;
            let features = centers[label]
                .iter()
                .map(|c| (c + cfg.spread * rng.normal()).clamp(0.0, 1.0))
                .collect();
            EncodedSample { features, label }
        })
        .collect();
    rng.shuffle(&mut samples);
    samples
}
