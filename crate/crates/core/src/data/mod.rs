//! Flow CSV ingestion: parse, impute, scale, one-hot encode, split and cache.

mod cache;
mod encode;
mod flows;
mod impute;
mod pipeline;
mod schema;
mod split;
mod synthetic;

pub use cache::{input_key, read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use encode::{EncodedSample, MinMax, PipelineStats};
pub use flows::{parse_flow_csv, parse_flow_reader, FlowRecord, ParsedFlows, RowError};
pub use impute::{apply_imputers, fit_imputers, ImputationTable};
pub use pipeline::{class_counts, missing_counts, prepare, EncodedSplit, ImputationProtocol};
pub use schema::{
    class_index, FeatureKind, FeatureSpec, FlowSchema, CLASS_NAMES, DEFAULT_LABEL_COLUMN, ENCODED_WIDTH,
    MATRIX_COLS, MATRIX_ROWS, N_CLASSES,
};
pub use split::stratified_split;
pub use synthetic::{gaussian_blobs, BlobConfig};

pub(crate) use schema::hex;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("schema error: required column {0:?} not found in header")]
    MissingColumn(String),
    #[error("stratification error: class {class} has {count} sample(s), need at least 2")]
    Stratification { class: usize, count: usize },
    #[error("schema-consistency error: encoded width {actual}, expected {expected}; per-feature widths {widths:?}")]
    SchemaConsistency {
        expected: usize,
        actual: usize,
        widths: Vec<(String, usize)>,
    },
    #[error("feature {0:?} has no observed values")]
    NoObservations(String),
    #[error("feature {feature:?} is missing at line {line} after imputation")]
    Unimputed { feature: String, line: u64 },
    #[error("empty dataset")]
    Empty,
    #[error("cache error: {0}")]
    Cache(String),
}
