use std::io::Read;
use std::path::Path;

use log::warn;

use super::schema::{class_index, FeatureKind, FlowSchema};
use super::DataError;

/// One parsed flow row. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    /// One slot per schema feature, in schema order; only numeric slots are used.
    pub numeric: Vec<Option<f64>>,
    /// One slot per schema feature, in schema order; only categorical slots are used.
    pub categorical: Vec<Option<String>>,
    pub label: usize,
    /// 1-based line in the source file (header is line 1).
    pub line: u64,
}

impl FlowRecord {
    pub fn missing_count(&self, schema: &FlowSchema) -> usize {
        schema
            .features
            .iter()
            .enumerate()
            .filter(|(i, f)| match f.kind {
                FeatureKind::Numeric => self.numeric[*i].is_none(),
                FeatureKind::Categorical { .. } => self.categorical[*i].is_none(),
            })
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: u64,
    pub column: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedFlows {
    pub records: Vec<FlowRecord>,
    /// Rows dropped for unparseable cells or unknown labels.
    pub skipped: Vec<RowError>,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || ["nan", "na", "null", "none"].iter().any(|m| c.eq_ignore_ascii_case(m))
}

fn parse_number(cell: &str) -> Option<f64> {
    let c = cell.trim();
    if let Some(hex) = c.strip_prefix("0x").or_else(|| c.strip_prefix("0X")) {
        return u64::from_str_radix(hex, 16).ok().map(|v| v as f64);
    }
    c.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn parse_flow_csv(path: impl AsRef<Path>, schema: &FlowSchema) -> Result<ParsedFlows, DataError> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| DataError::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_flow_reader(file, schema)
}

/// Parses comma-separated flow rows with a header line.
///
/// Columns not in the schema are ignored. A missing schema or label column is
/// a hard error; a bad cell drops only its row.
pub fn parse_flow_reader(reader: impl Read, schema: &FlowSchema) -> Result<ParsedFlows, DataError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Csv(e.to_string()))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let columns: Vec<usize> = schema
        .features
        .iter()
        .map(|f| find(&f.name))
        .collect::<Result<_, _>>()?;
    let label_col = find(&schema.label_column)?;

    let n = schema.features.len();
    let mut out = ParsedFlows::default();
    for (row_no, row) in rdr.records().enumerate() {
        let line = row_no as u64 + 2;
        let row = row.map_err(|e| DataError::Csv(format!("line {line}: {e}")))?;
        match parse_row(&row, schema, &columns, label_col, line, n) {
            Ok(r) => out.records.push(r),
            Err(e) => {
                warn!("skipping line {}: column {}: {}", e.line, e.column, e.message);
                out.skipped.push(e);
            }
        }
    }
    Ok(out)
}

fn parse_row(
    row: &csv::StringRecord,
    schema: &FlowSchema,
    columns: &[usize],
    label_col: usize,
    line: u64,
    n: usize,
) -> Result<FlowRecord, RowError> {
    let cell = |i: usize| row.get(i).unwrap_or("");
    let label_text = cell(label_col).trim();
    let label = class_index(label_text).ok_or_else(|| RowError {
        line,
        column: schema.label_column.clone(),
        message: format!("unknown class {label_text:?}"),
    })?;
    let mut numeric = vec![None; n];
    let mut categorical = vec![None; n];
    for (i, (spec, &col)) in schema.features.iter().zip(columns).enumerate() {
        let raw = cell(col);
        if is_missing(raw) {
            continue;
        }
        match spec.kind {
            FeatureKind::Numeric => {
                numeric[i] = Some(parse_number(raw).ok_or_else(|| RowError {
                    line,
                    column: spec.name.clone(),
                    message: format!("not a number: {raw:?}"),
                })?);
            }
            FeatureKind::Categorical { .. } => categorical[i] = Some(raw.trim().to_string()),
        }
    }
    Ok(FlowRecord {
        numeric,
        categorical,
        label,
        line,
    })
}
