use log::warn;
use serde::{Deserialize, Serialize};

use super::flows::FlowRecord;
use super::impute::ImputationTable;
use super::schema::{FeatureKind, FlowSchema, ENCODED_WIDTH, MATRIX_COLS, MATRIX_ROWS};
use super::DataError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    /// `(v - min) / (max - min)`, or 0 for a zero-width range.
    pub fn scale(&self, v: f64) -> f64 {
        let width = self.max - self.min;
        if width > 0.0 {
            (v - self.min) / width
        } else {
            0.0
        }
    }
}

/// Everything fitted on the training split that encoding needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub schema: FlowSchema,
    pub schema_hash: String,
    /// Per schema feature; `Some` for numeric features.
    pub ranges: Vec<Option<MinMax>>,
    /// Per schema feature; categories in first-seen order, element 0 is the dropped level.
    pub vocabularies: Vec<Option<Vec<String>>>,
    pub imputation: ImputationTable,
    pub fitted_on: usize,
}

/// One model-ready sample: the 78 encoded values and the class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl EncodedSample {
    /// Element `(row, col)` of the row-major `6 × 13` view.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.features[row * MATRIX_COLS + col]
    }

    pub fn matrix<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            vec![MATRIX_ROWS, MATRIX_COLS],
            self.features.iter().map(|v| T::from_f64_lossy(*v)).collect(),
        )
        .expect("encoded samples carry 78 values")
    }
}

impl PipelineStats {
    /// Fits min/max ranges and category vocabularies on imputed training records.
    pub fn fit(records: &[FlowRecord], imputation: ImputationTable, schema: &FlowSchema) -> Result<Self, DataError> {
        let n = schema.features.len();
        let mut ranges = vec![None; n];
        let mut vocabularies = vec![None; n];
        for (i, spec) in schema.features.iter().enumerate() {
            match spec.kind {
                FeatureKind::Numeric => {
                    let mut mm: Option<MinMax> = None;
                    for r in records {
                        let v = r.numeric[i].ok_or_else(|| DataError::Unimputed {
                            feature: spec.name.clone(),
                            line: r.line,
                        })?;
                        mm = Some(match mm {
                            None => MinMax { min: v, max: v },
                            Some(m) => MinMax {
                                min: m.min.min(v),
                                max: m.max.max(v),
                            },
                        });
                    }
                    ranges[i] = Some(mm.unwrap_or(MinMax { min: 0.0, max: 0.0 }));
                }
                FeatureKind::Categorical { .. } => {
                    let mut vocab: Vec<String> = Vec::new();
                    for r in records {
                        let v = r.categorical[i].as_ref().ok_or_else(|| DataError::Unimputed {
                            feature: spec.name.clone(),
                            line: r.line,
                        })?;
                        if !vocab.contains(v) {
                            vocab.push(v.clone());
                        }
                    }
                    vocabularies[i] = Some(vocab);
                }
            }
        }
        let stats = Self {
            schema: schema.clone(),
            schema_hash: schema.hash(),
            ranges,
            vocabularies,
            imputation,
            fitted_on: records.len(),
        };
        stats.validate()?;
        for ((name, w), spec) in stats.observed_widths().iter().zip(&schema.features) {
            if *w < spec.kind.width() {
                warn!("{name}: {} of {} one-hot levels observed in training data", w, spec.kind.width());
            }
        }
        Ok(stats)
    }

    /// Observed one-hot width per feature (`levels - 1`; 1 for numeric features).
    pub fn observed_widths(&self) -> Vec<(String, usize)> {
        self.schema
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let w = match f.kind {
                    FeatureKind::Numeric => 1,
                    FeatureKind::Categorical { .. } => {
                        self.vocabularies[i].as_ref().map_or(0, |v| v.len().saturating_sub(1))
                    }
                };
                (f.name.clone(), w)
            })
            .collect()
    }

    /// Rejects a schema that does not encode to 78 values, or a vocabulary
    /// with more levels than its one-hot block holds.
    ///
    /// A vocabulary with fewer levels is accepted: the block keeps its schema
    /// width and the unused trailing columns stay 0.
    pub fn validate(&self) -> Result<(), DataError> {
        let observed = self.observed_widths();
        let overflow = self
            .schema
            .features
            .iter()
            .zip(&observed)
            .any(|(spec, (_, w))| *w > spec.kind.width());
        if overflow || self.schema.encoded_width() != ENCODED_WIDTH {
            let widths: Vec<(String, usize)> = self
                .schema
                .features
                .iter()
                .zip(observed)
                .map(|(spec, (name, w))| (name, w.max(spec.kind.width())))
                .collect();
            return Err(DataError::SchemaConsistency {
                expected: ENCODED_WIDTH,
                actual: widths.iter().map(|(_, w)| w).sum(),
                widths,
            });
        }
        Ok(())
    }

    /// Min-max scaling, drop-first one-hot, concatenated in schema order.
    ///
    /// Categories unseen at fit time encode as an all-zero block.
    pub fn encode(&self, records: &[FlowRecord]) -> Result<Vec<EncodedSample>, DataError> {
        self.validate()?;
        records
            .iter()
            .map(|r| {
                let mut features = Vec::with_capacity(ENCODED_WIDTH);
                for (i, spec) in self.schema.features.iter().enumerate() {
                    match spec.kind {
                        FeatureKind::Numeric => {
                            let v = r.numeric[i].ok_or_else(|| DataError::Unimputed {
                                feature: spec.name.clone(),
                                line: r.line,
                            })?;
                            let range = self.ranges[i].expect("validated numeric range");
                            features.push(range.scale(v));
                        }
                        FeatureKind::Categorical { width } => {
                            let v = r.categorical[i].as_ref().ok_or_else(|| DataError::Unimputed {
                                feature: spec.name.clone(),
                                line: r.line,
                            })?;
                            let vocab = self.vocabularies[i].as_ref().expect("validated vocabulary");
                            let start = features.len();
                            features.resize(start + width, 0.0);
                            if let Some(pos) = vocab.iter().position(|c| c == v) {
                                if pos > 0 {
                                    features[start + pos - 1] = 1.0;
                                }
                            }
                        }
                    }
                }
                debug_assert_eq!(features.len(), ENCODED_WIDTH);
                Ok(EncodedSample {
                    features,
                    label: r.label,
                })
            })
            .collect()
    }
}
