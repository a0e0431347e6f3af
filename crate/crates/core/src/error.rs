use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, scene {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{what}: version mismatch (found {found}, expected {expected})")]
    VersionMismatch {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("{0}: bad magic bytes")]
    BadMagic(&'static str),

    #[error("{0}: truncated input")]
    Truncated(&'static str),

    #[error("{what}: checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum {
        what: &'static str,
        stored: u32,
        computed: u32,
    },

    #[error("scene spec infeasible: {0}")]
    InfeasibleSpec(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidShape { .. } => "invalid_shape",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonFiniteGradient(_) => "non_finite_gradient",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::BadMagic(_) => "bad_magic",
            Error::Truncated(_) => "truncated",
            Error::Checksum { .. } => "checksum",
            Error::InfeasibleSpec(_) => "infeasible_spec",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}
