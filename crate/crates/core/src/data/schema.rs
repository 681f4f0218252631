use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Encoded feature-vector width.
pub const ENCODED_WIDTH: usize = 78;
/// The 78-vector is reshaped row-major into this many rows (CNN channels) ...
pub const MATRIX_ROWS: usize = 6;
/// ... of this many columns (sequence length).
pub const MATRIX_COLS: usize = 13;

pub const N_CLASSES: usize = 9;

/// Class names in label-index order.
pub const CLASS_NAMES: [&str; N_CLASSES] = [
    "Benign",
    "SYN Scan",
    "TCP Connect Scan",
    "UDP Scan",
    "ICPM flood",
    "UDP flood",
    "SYN flood",
    "HTTP flood",
    "Slow rate DoS",
];

pub const DEFAULT_LABEL_COLUMN: &str = "Attack Type";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Numeric,
    /// Drop-first one-hot block of the given width.
    Categorical { width: usize },
}

impl FeatureKind {
    pub fn width(self) -> usize {
        match self {
            FeatureKind::Numeric => 1,
            FeatureKind::Categorical { width } => width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

const NUMERIC: FeatureKind = FeatureKind::Numeric;

const fn cat(width: usize) -> FeatureKind {
    FeatureKind::Categorical { width }
}

/// Flow-record feature table, in encoding order.
const FLOW_FEATURES: [(&str, FeatureKind); 48] = [
    ("Seq", NUMERIC),
    ("Dur", NUMERIC),
    ("RunTime", NUMERIC),
    ("Mean", NUMERIC),
    ("Sum", NUMERIC),
    ("Min", NUMERIC),
    ("Max", NUMERIC),
    ("Proto", cat(7)),
    ("sTos", NUMERIC),
    ("dTos", NUMERIC),
    ("sDSb", cat(11)),
    ("dDSb", cat(5)),
    ("sTtl", NUMERIC),
    ("dTtl", NUMERIC),
    ("sHops", NUMERIC),
    ("dHops", NUMERIC),
    ("Cause", cat(2)),
    ("TotPkts", NUMERIC),
    ("SrcPkts", NUMERIC),
    ("DstPkts", NUMERIC),
    ("TotBytes", NUMERIC),
    ("SrcBytes", NUMERIC),
    ("DstBytes", NUMERIC),
    ("Offset", NUMERIC),
    ("sMeanPktSz", NUMERIC),
    ("dMeanPktSz", NUMERIC),
    ("Load", NUMERIC),
    ("SrcLoad", NUMERIC),
    ("DstLoad", NUMERIC),
    ("Loss", NUMERIC),
    ("SrcLoss", NUMERIC),
    ("DstLoss", NUMERIC),
    ("pLoss", NUMERIC),
    ("SrcGap", NUMERIC),
    ("DstGap", NUMERIC),
    ("Rate", NUMERIC),
    ("SrcRate", NUMERIC),
    ("DstRate", NUMERIC),
    ("State", cat(10)),
    ("SrcWin", NUMERIC),
    ("DstWin", NUMERIC),
    ("sVid", NUMERIC),
    ("dVid", NUMERIC),
    ("SrcTCPBase", NUMERIC),
    ("DstTCPBase", NUMERIC),
    ("TcpRtt", NUMERIC),
    ("SynAck", NUMERIC),
    ("AckDat", NUMERIC),
];

/// Ordered feature descriptors plus the label column name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSchema {
    pub features: Vec<FeatureSpec>,
    pub label_column: String,
}

impl Default for FlowSchema {
    fn default() -> Self {
        Self::flow_features(DEFAULT_LABEL_COLUMN)
    }
}

impl FlowSchema {
    /// The 43 numeric + 5 categorical flow features, encoding to 78 values.
    pub fn flow_features(label_column: &str) -> Self {
        Self {
            features: FLOW_FEATURES
                .iter()
                .map(|(name, kind)| FeatureSpec {
                    name: (*name).to_string(),
                    kind: *kind,
                })
                .collect(),
            label_column: label_column.to_string(),
        }
    }

    pub fn encoded_width(&self) -> usize {
        self.features.iter().map(|f| f.kind.width()).sum()
    }

    /// Positions (within `features`) of numeric features.
    pub fn numeric_indices(&self) -> Vec<usize> {
        self.indices(|k| k == FeatureKind::Numeric)
    }

    pub fn categorical_indices(&self) -> Vec<usize> {
        self.indices(|k| k != FeatureKind::Numeric)
    }

    fn indices(&self, keep: impl Fn(FeatureKind) -> bool) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| keep(f.kind))
            .map(|(i, _)| i)
            .collect()
    }

    /// Hex SHA-256 over feature names, kinds, widths, class list and reshape.
    ///
    /// The label column name is excluded: it only affects parsing.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for f in &self.features {
            h.update(format!("{}:{:?};", f.name, f.kind).as_bytes());
        }
        for c in CLASS_NAMES {
            h.update(format!("class:{c};").as_bytes());
        }
        h.update(format!("reshape:{MATRIX_ROWS}x{MATRIX_COLS}").as_bytes());
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn normalize(s: &str) -> String {
    s.chars()
        .filter(char::is_ascii_alphanumeric)
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Maps a label string to its class index, ignoring case, spaces and punctuation.
///
/// `ICMP flood` is accepted as a spelling of `ICPM flood`.
pub fn class_index(label: &str) -> Option<usize> {
    let key = normalize(label);
    if key == "icmpflood" {
        return Some(4);
    }
    CLASS_NAMES.iter().position(|c| normalize(c) == key)
}
