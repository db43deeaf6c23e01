use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Reasons a PGM file can be rejected.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PgmError {
    #[error("bad magic number (expected P5)")]
    BadMagic,
    #[error("unsupported depth: maxval {0}")]
    UnsupportedDepth(u32),
    #[error("truncated sample data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("malformed header: {0}")]
    Malformed(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("{op}: {detail}")]
    Incompatible { op: &'static str, detail: String },

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("negative activation {value} at flat index {index}; code must be post-ReLU")]
    NegativeActivation { index: usize, value: f64 },

    #[error("pool index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("missing intermediate: {0}")]
    MissingIntermediate(&'static str),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Pgm {
        path: PathBuf,
        #[source]
        source: PgmError,
    },

    #[error("manifest {}: {detail}", path.display())]
    Manifest { path: PathBuf, detail: String },

    #[error("patch too large: inscribed square side {side} < patch {patch}")]
    PatchTooLarge { side: usize, patch: usize },

    #[error("checkpoint: bad magic")]
    CheckpointMagic,

    #[error("checkpoint: version {found} unsupported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint: checksum mismatch (file truncated or corrupted)")]
    CheckpointChecksum,

    #[error("checkpoint: {0}")]
    CheckpointFormat(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("report image sets differ: only in A {only_a:?}, only in B {only_b:?}")]
    ImageSetMismatch {
        only_a: Vec<String>,
        only_b: Vec<String>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn incompatible(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Incompatible {
            op,
            detail: detail.into(),
        }
    }
}
