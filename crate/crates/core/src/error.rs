use thiserror::Error;

use crate::condition::ConditionKind;

pub type Result<T> = std::result::Result<T, Error>;

/// A point on an attainable operating frontier, reported when a calibration
/// policy cannot be met.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FrontierPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub false_positives: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("condition {condition} is {actual}, operation requires {expected}")]
    WrongTask {
        condition: ConditionKind,
        expected: &'static str,
        actual: &'static str,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("corrupt parameters: {0}")]
    CorruptParams(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("parse error in record {record}, field `{field}`: {message}")]
    Parse {
        record: String,
        field: String,
        message: String,
    },

    #[error("cannot split: {0}")]
    CannotSplit(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("infeasible policy: {reason} (attainable frontier has {} points)", frontier.len())]
    InfeasiblePolicy {
        reason: String,
        frontier: Vec<FrontierPoint>,
    },

    #[error("missing priors: {0}")]
    MissingPriors(String),

    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Stable machine-readable category, used by the CLI and HTTP layers.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidGeometry(_) => "invalid_geometry",
            Error::WrongTask { .. } => "wrong_task",
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::CorruptParams(_) => "corrupt_params",
            Error::Numeric(_) => "numeric",
            Error::Parse { .. } => "parse",
            Error::CannotSplit(_) => "cannot_split",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::InfeasiblePolicy { .. } => "infeasible_policy",
            Error::MissingPriors(_) => "missing_priors",
            Error::Validation { .. } => "validation",
            Error::Io { .. } => "io",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
        }
    }
}
