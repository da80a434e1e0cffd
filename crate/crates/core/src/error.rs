use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header field `{field}`: {reason}")]
    MalformedHeader { field: &'static str, reason: String },

    #[error("unsupported datatype code {code} in field `datatype`")]
    UnsupportedDatatype { code: i32 },

    #[error("dimension mismatch in `{field}`: image {image:?} vs mask {mask:?}")]
    DimensionMismatch {
        field: &'static str,
        image: [usize; 3],
        mask: [usize; 3],
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid label {label} in mask: {reason}")]
    InvalidLabel { label: i64, reason: String },

    #[error("statistics are empty")]
    EmptyStats,

    #[error("histogram binning mismatch: {0}")]
    BinningMismatch(String),

    #[error("volume `{source_id}` class {label} already accumulated")]
    DuplicateVolume { source_id: String, label: u8 },

    #[error("degenerate window: lower {lower} HU, upper {upper} HU")]
    DegenerateWindow { lower: f64, upper: f64 },

    #[error("need at least {required} per-volume medians, found {found}")]
    TooFewMedians { found: usize, required: usize },

    #[error("class {0} has no per-volume medians")]
    ClassAbsent(u8),

    #[error("foreground standard deviation is zero")]
    ZeroStd,

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("stage contract violated: {stage} expects {expected}, found {value}")]
    StageContract {
        stage: &'static str,
        expected: &'static str,
        value: f64,
    },

    #[error("phase order violated: {0}")]
    PhaseOrder(String),

    #[error("crop of {height}x{width} pixels is smaller than one pixel")]
    CropTooSmall { width: usize, height: usize },

    #[error("infeasible phantom geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("schema version {found} not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Data(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
