use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("joint {joint} ({name}) has depth {z} below z_min {z_min}")]
    DepthViolation {
        joint: usize,
        name: String,
        z: f64,
        z_min: f64,
    },

    #[error("bone {bone} is degenerate (length {length:e} m)")]
    DegenerateBone { bone: usize, length: f64 },

    #[error("activation {0} has no analytic input gradient")]
    UnsupportedActivation(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("topology mismatch: expected {expected}, found {found}")]
    TopologyMismatch { expected: String, found: String },

    #[error("non-finite loss at epoch {epoch}, step {step}: {snapshot}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        snapshot: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// Errors caused by bad input data rather than bad usage.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidArgument(_))
    }
}
