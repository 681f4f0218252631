use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::encode::{EncodedSample, PipelineStats};
use super::flows::FlowRecord;
use super::impute::{apply_imputers, fit_imputers};
use super::schema::{FeatureKind, FlowSchema, N_CLASSES};
use super::split::stratified_split;
use super::DataError;

/// Where imputation statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputationProtocol {
    /// Per-class imputation fitted on the whole file before splitting.
    /// Test rows see statistics that used their own labels.
    Verbatim,
    /// Split first; per-class imputation fitted on train, label-free global
    /// fill on test.
    #[default]
    LeakFree,
}

impl fmt::Display for ImputationProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Verbatim => "verbatim",
            Self::LeakFree => "leak-free",
        })
    }
}

impl FromStr for ImputationProtocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "verbatim" => Ok(Self::Verbatim),
            "leak-free" | "leakfree" | "leak_free" => Ok(Self::LeakFree),
            other => Err(format!("unknown imputation protocol {other:?} (expected verbatim or leak-free)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodedSplit {
    pub train: Vec<EncodedSample>,
    pub test: Vec<EncodedSample>,
}

fn pick(records: &[FlowRecord], idx: &[usize]) -> Vec<FlowRecord> {
    idx.iter().map(|&i| records[i].clone()).collect()
}

/// Imputes, splits, fits scaling and vocabularies on the train split and
/// encodes both splits.
pub fn prepare(
    records: &[FlowRecord],
    schema: &FlowSchema,
    protocol: ImputationProtocol,
    train_fraction: f64,
    seed: u64,
) -> Result<(EncodedSplit, PipelineStats), DataError> {
    if records.is_empty() {
        return Err(DataError::Empty);
    }
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let (train_idx, test_idx) = stratified_split(&labels, train_fraction, seed)?;
    let (train, test, table) = match protocol {
        ImputationProtocol::Verbatim => {
            let table = fit_imputers(records, schema)?;
            let filled = apply_imputers(records, &table, true);
            (pick(&filled, &train_idx), pick(&filled, &test_idx), table)
        }
        ImputationProtocol::LeakFree => {
            let train = pick(records, &train_idx);
            let table = fit_imputers(&train, schema)?;
            let train = apply_imputers(&train, &table, true);
            let test = apply_imputers(&pick(records, &test_idx), &table, false);
            (train, test, table)
        }
    };
    let stats = PipelineStats::fit(&train, table, schema)?;
    let split = EncodedSplit {
        train: stats.encode(&train)?,
        test: stats.encode(&test)?,
    };
    Ok((split, stats))
}

pub fn class_counts(labels: impl IntoIterator<Item = usize>) -> [usize; N_CLASSES] {
    let mut counts = [0; N_CLASSES];
    for l in labels {
        counts[l] += 1;
    }
    counts
}

/// Missing cells per schema feature, before imputation.
pub fn missing_counts(records: &[FlowRecord], schema: &FlowSchema) -> Vec<(String, usize)> {
    schema
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let n = records
                .iter()
                .filter(|r| match f.kind {
                    FeatureKind::Numeric => r.numeric[i].is_none(),
                    FeatureKind::Categorical { .. } => r.categorical[i].is_none(),
                })
                .count();
            (f.name.clone(), n)
        })
        .collect()
}
