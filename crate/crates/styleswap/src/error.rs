//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by any public operation in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape {shape:?}: every extent must be at least 1")]
    InvalidShape { shape: Vec<usize> },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("invalid range: lo ({lo}) must be strictly below hi ({hi})")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("channel mismatch: input has {input} channels, expected {expected}")]
    ChannelMismatch { input: usize, expected: usize },

    #[error("{filter}x{filter} filter exceeds padded input extent {padded_h}x{padded_w}")]
    FilterTooLarge {
        filter: usize,
        padded_h: usize,
        padded_w: usize,
    },

    #[error("invalid layer configuration: {reason}")]
    InvalidLayer { reason: String },

    #[error("input {h}x{w} is too small for this operation (needs at least {min}x{min})")]
    InputTooSmall { h: usize, w: usize, min: usize },

    #[error("instance norm needs at least 2 spatial cells per channel, got {cells}")]
    DegenerateChannel { cells: usize },

    #[error("invalid swap config: {reason}")]
    InvalidConfig { reason: String },

    #[error("patch size {patch} exceeds activation extents {h}x{w}")]
    PatchTooLarge { patch: usize, h: usize, w: usize },

    #[error("output shape {out_h}x{out_w} is inconsistent with a {grid_h}x{grid_w} patch grid")]
    GridMismatch {
        out_h: usize,
        out_w: usize,
        grid_h: usize,
        grid_w: usize,
    },

    #[error("activation trace does not match encoder '{expected}' (trace was built by '{got}')")]
    MismatchedTrace { expected: String, got: String },

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: usize },

    #[error("training diverged at step {step}{}", last_checkpoint.as_ref().map(|p| format!("; last good checkpoint: {}", p.display())).unwrap_or_default())]
    TrainDiverged {
        step: usize,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("inverse net '{net}' is paired with encoder '{expected}', not '{got}'")]
    PairingMismatch {
        net: String,
        expected: String,
        got: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("unsupported image format: {path}")]
    UnsupportedFormat { path: PathBuf },

    #[error("malformed weight data: {reason}")]
    WeightFormat { reason: String },

    #[error("unsupported weight file version {got} (this build reads version {supported})")]
    UnsupportedVersion { got: u32, supported: u32 },

    #[error("empty dataset pool: {path}")]
    EmptyPool { path: PathBuf },

    #[error("dataset pool has {available} images but the batch needs {needed}")]
    PoolExhausted { available: usize, needed: usize },
}

impl Error {
    /// True for failures of the numerics (NaN/Inf abort) rather than usage or input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::TrainDiverged { .. })
    }
}
