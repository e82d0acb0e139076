use std::path::PathBuf;

use crate::volume::VolumeGrid;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid intensity window: lo ({lo}) must be below hi ({hi})")]
    InvalidWindow { lo: f64, hi: f64 },

    #[error("invalid meshgrid resolution {0}; need at least 2")]
    InvalidResolution(usize),

    #[error("mask has no foreground voxels")]
    NoForeground,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("expected a {expected} volume, got {found}")]
    KindMismatch { expected: &'static str, found: &'static str },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dice band unreachable after {attempts} attempts (best dice {best_dice:.4})")]
    BandUnreachable {
        attempts: usize,
        best_dice: f64,
        best_mask: Box<VolumeGrid>,
    },

    #[error("non-finite values in tensor `{0}`")]
    NonFinite(String),

    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss {
        epoch: usize,
        last_good: Option<Box<crate::checkpoint::Checkpoint>>,
    },

    #[error("unknown case id `{0}`")]
    UnknownCase(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("experiment phase `{phase}` failed: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
