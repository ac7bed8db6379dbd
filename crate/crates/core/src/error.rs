use std::io;
use std::path::PathBuf;

use crate::channel::CodecError;
use crate::data::IdxError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on {axis} axis (expected {expected}, got {got})")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("{0} produced a non-finite value")]
    NonFinite(&'static str),

    #[error("class index {index} out of range for {classes} classes")]
    ClassIndex { index: usize, classes: usize },

    #[error("batch of {0} samples is too small; distance correlation needs at least 2")]
    BatchSize(usize),

    #[error("invalid dataset split: {0}")]
    Split(String),

    #[error("training diverged (epoch {epoch}, batch {batch}): loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing data file {}: {hint}", path.display())]
    MissingData { path: PathBuf, hint: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("attack: {0}")]
    Attack(String),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error(transparent)]
    Codec(#[from] CodecError),

    #[error("channel closed")]
    Closed,

    #[error(transparent)]
    Io(#[from] io::Error),
}
