//! Error type shared by every subsystem.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A physical or algorithmic parameter violates its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// A dynamics input contained NaN or infinity.
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("integration failed: {0}")]
    Integration(String),

    /// Series or iteration failed to reach its tolerance.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("qp solver: {0}")]
    Solver(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("episode already finished")]
    EpisodeFinished,

    /// Non-finite loss or gradient during training.
    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
