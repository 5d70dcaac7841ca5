//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("template is missing the `{{variable}}` placeholder")]
    BadTemplate,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    #[error("stale cache for variable `{variable}`: stored prompt hash no longer matches")]
    StaleCache { variable: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown ablation variant `{0}`")]
    UnknownVariant(String),

    #[error("series too short: need at least {need} rows, got {got}")]
    TooShort { need: usize, got: usize },

    #[error("training diverged at step {step}: loss is not finite")]
    Divergence { step: usize },

    #[error("empty evaluation set")]
    EmptySet,

    #[error("bad synthetic spec: {0}")]
    BadSpec(String),

    #[error("embedding service error: {0}")]
    Service(String),

    #[error("checkpoint incompatible with config: {0}")]
    IncompatibleCheckpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            details: details.into(),
        }
    }

    /// Stable machine-readable tag for this error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownNode(_) => "unknown_node",
            Error::BadTemplate => "bad_template",
            Error::Parse { .. } => "parse_error",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::StaleCache { .. } => "stale_cache",
            Error::Config(_) => "config_error",
            Error::UnknownVariant(_) => "unknown_variant",
            Error::TooShort { .. } => "too_short",
            Error::Divergence { .. } => "divergence",
            Error::EmptySet => "empty_set",
            Error::BadSpec(_) => "bad_spec",
            Error::Service(_) => "service_error",
            Error::IncompatibleCheckpoint(_) => "incompatible_checkpoint",
            Error::Io(_) => "io_error",
            Error::Csv(_) => "csv_error",
        }
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
