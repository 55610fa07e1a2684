use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IspError {
    #[error("invalid ISP parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite {0}")]
    NonFinite(&'static str),

    #[error("non-finite value at pixel (row {row}, col {col})")]
    NonFinitePixel { row: usize, col: usize },

    #[error("shape mismatch: {what} is {got_h}x{got_w}, expected {want_h}x{want_w}")]
    ShapeMismatch {
        what: &'static str,
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },

    #[error("image dimensions {height}x{width} invalid: {reason}")]
    BadDimensions {
        height: usize,
        width: usize,
        reason: String,
    },

    #[error("Bayer pattern mismatch: raw frame is {raw}, requested {requested}")]
    PatternMismatch { raw: String, requested: String },

    #[error("normal equations not positive definite at pixel (row {row}, col {col}); use beta > 0")]
    SingularNormalEquations { row: usize, col: usize },

    #[error("color correction matrix is singular or ill-conditioned (condition number {condition:e})")]
    SingularCcm { condition: f64 },

    #[error("white-balance gain for channel {channel} is not positive ({gain})")]
    ZeroGain { channel: usize, gain: f64 },

    #[error("S_b disagrees with the forward render of L_b at {count} pixel(s) (max deviation {max_dev:e})")]
    InconsistentBaseRender { count: usize, max_dev: f64 },

    #[error("{0}")]
    InsufficientSamples(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = IspError> = std::result::Result<T, E>;

impl IspError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IspError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        IspError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
