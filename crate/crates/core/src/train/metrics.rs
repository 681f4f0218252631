use serde::{Deserialize, Serialize};

use crate::data::{CLASS_NAMES, N_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// No sample was predicted as this class; precision is reported as 0.
    pub no_predictions: bool,
}

/// One-vs-rest metrics from a confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Rows in fixed class order, Benign first.
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub weighted_f1: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("cannot evaluate an empty test set")]
    Empty,
    #[error("{0} labels but {1} predictions")]
    Length(usize, usize),
    #[error("class index {0} out of range")]
    Class(usize),
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `Σ support_c · F1_c / Σ support_c`, or 0 without support.
pub fn weighted_f1(classes: &[ClassMetrics]) -> f64 {
    let total: usize = classes.iter().map(|m| m.support).sum();
    if total == 0 {
        return 0.0;
    }
    classes.iter().map(|m| m.support as f64 * m.f1).sum::<f64>() / total as f64
}

impl EvalReport {
    pub fn from_predictions(labels: &[usize], predictions: &[usize]) -> Result<Self, MetricsError> {
        if labels.len() != predictions.len() {
            return Err(MetricsError::Length(labels.len(), predictions.len()));
        }
        if labels.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut confusion = vec![vec![0usize; N_CLASSES]; N_CLASSES];
        for (&t, &p) in labels.iter().zip(predictions) {
            if t >= N_CLASSES || p >= N_CLASSES {
                return Err(MetricsError::Class(t.max(p)));
            }
            confusion[t][p] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let n = confusion.len();
        let total: usize = confusion.iter().flatten().sum();
        let trace: usize = (0..n).map(|c| confusion[c][c]).sum();
        let classes: Vec<ClassMetrics> = (0..n)
            .map(|c| {
                let tp = confusion[c][c];
                let support: usize = confusion[c].iter().sum();
                let predicted: usize = confusion.iter().map(|row| row[c]).sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics {
                    class: CLASS_NAMES.get(c).map_or_else(|| format!("class {c}"), |s| s.to_string()),
                    precision,
                    recall,
                    f1,
                    support,
                    no_predictions: predicted == 0,
                }
            })
            .collect();
        Self {
            weighted_f1: weighted_f1(&classes),
            classes,
            accuracy: ratio(trace, total),
            confusion,
            samples: total,
        }
    }

    /// Plain-text table: one row per class, then accuracy and weighted F1.
    pub fn render(&self) -> String {
        let mut s = format!("{:<18} {:>9} {:>9} {:>9} {:>9}\n", "class", "precision", "recall", "f1", "support");
        for m in &self.classes {
            let flag = if m.no_predictions { "  (no predictions)" } else { "" };
            s.push_str(&format!(
                "{:<18} {:>9.5} {:>9.5} {:>9.5} {:>9}{flag}\n",
                m.class, m.precision, m.recall, m.f1, m.support
            ));
        }
        s.push_str(&format!("accuracy     {:.5}\nweighted f1  {:.5}\n", self.accuracy, self.weighted_f1));
        s
    }
}
