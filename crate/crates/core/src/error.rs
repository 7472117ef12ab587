use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{key}`: {message}")]
    InvalidConfig { key: String, message: String },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("landmark {index} at ({x}, {y}) lies outside the {width}x{height} grid")]
    OutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("landmark {index} at ({x}, {y}) is closer than {margin} px to the grid border")]
    TooCloseToBorder {
        index: usize,
        x: f64,
        y: f64,
        margin: f64,
    },

    #[error("heatmap has no mass left after thresholding at {threshold}")]
    DegenerateHeatmap { threshold: f64 },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("non-finite loss at epoch {epoch}, sequence {sequence}")]
    NumericalFailure { epoch: usize, sequence: usize },

    #[error("malformed {format} data: {message}")]
    Format {
        format: &'static str,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True for errors caused by bad input or configuration rather than numerics or I/O.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig { .. }
                | Error::ShapeMismatch { .. }
                | Error::OutOfBounds { .. }
                | Error::TooCloseToBorder { .. }
                | Error::Empty(_)
                | Error::Format { .. }
        )
    }
}

pub(crate) fn ensure_non_negative(key: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be finite and >= 0, got {value}")))
    }
}

pub(crate) fn ensure_positive(key: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be finite and > 0, got {value}")))
    }
}
