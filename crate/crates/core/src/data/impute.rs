use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::flows::FlowRecord;
use super::schema::{FlowSchema, N_CLASSES};
use super::DataError;

/// Fill values for missing cells: per class, plus a label-free fallback.
///
/// Indexed by schema feature position; slots of the other kind are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationTable {
    pub numeric_by_class: Vec<Vec<Option<f64>>>,
    pub numeric_global: Vec<Option<f64>>,
    pub categorical_by_class: Vec<Vec<Option<String>>>,
    pub categorical_global: Vec<Option<String>>,
    /// `(class, feature)` pairs with no observed value that use the global fill.
    pub fallbacks: Vec<(usize, String)>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Most frequent value; ties go to the lexicographically smallest.
fn mode(values: &[&str]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (v, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((v, c));
        }
    }
    best.map(|(v, _)| v.to_string())
}

/// Per-class means (numeric) and modes (categorical) with global fallbacks.
pub fn fit_imputers(records: &[FlowRecord], schema: &FlowSchema) -> Result<ImputationTable, DataError> {
    let n = schema.features.len();
    let mut table = ImputationTable {
        numeric_by_class: vec![vec![None; n]; N_CLASSES],
        numeric_global: vec![None; n],
        categorical_by_class: vec![vec![None; n]; N_CLASSES],
        categorical_global: vec![None; n],
        fallbacks: Vec::new(),
    };
    let present: Vec<bool> = (0..N_CLASSES).map(|c| records.iter().any(|r| r.label == c)).collect();

    for i in schema.numeric_indices() {
        let all: Vec<f64> = records.iter().filter_map(|r| r.numeric[i]).collect();
        table.numeric_global[i] = mean(&all);
        if table.numeric_global[i].is_none() && !records.is_empty() {
            return Err(DataError::NoObservations(schema.features[i].name.clone()));
        }
        for c in (0..N_CLASSES).filter(|c| present[*c]) {
            let vals: Vec<f64> = records.iter().filter(|r| r.label == c).filter_map(|r| r.numeric[i]).collect();
            table.numeric_by_class[c][i] = mean(&vals);
            if vals.is_empty() {
                table.fallbacks.push((c, schema.features[i].name.clone()));
            }
        }
    }
    for i in schema.categorical_indices() {
        let all: Vec<&str> = records.iter().filter_map(|r| r.categorical[i].as_deref()).collect();
        table.categorical_global[i] = mode(&all);
        if table.categorical_global[i].is_none() && !records.is_empty() {
            return Err(DataError::NoObservations(schema.features[i].name.clone()));
        }
        for c in (0..N_CLASSES).filter(|c| present[*c]) {
            let vals: Vec<&str> = records
                .iter()
                .filter(|r| r.label == c)
                .filter_map(|r| r.categorical[i].as_deref())
                .collect();
            table.categorical_by_class[c][i] = mode(&vals);
            if vals.is_empty() {
                table.fallbacks.push((c, schema.features[i].name.clone()));
            }
        }
    }
    for (c, feature) in &table.fallbacks {
        warn!("class {c} has no observed {feature}; imputing with the global statistic");
    }
    Ok(table)
}

/// Fills missing cells.
///
/// `use_labels` picks the record's own class statistic (training rows);
/// otherwise the label-free global statistic is used (held-out rows).
pub fn apply_imputers(records: &[FlowRecord], table: &ImputationTable, use_labels: bool) -> Vec<FlowRecord> {
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            let c = r.label;
            for (i, slot) in r.numeric.iter_mut().enumerate() {
                if slot.is_none() {
                    let by_class = if use_labels { table.numeric_by_class[c][i] } else { None };
                    *slot = by_class.or(table.numeric_global[i]);
                }
            }
            for (i, slot) in r.categorical.iter_mut().enumerate() {
                if slot.is_none() {
                    let by_class = if use_labels { table.categorical_by_class[c][i].clone() } else { None };
                    *slot = by_class.or_else(|| table.categorical_global[i].clone());
                }
            }
            r
        })
        .collect()
}
