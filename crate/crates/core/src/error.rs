//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by stream, simulation, detection, and evaluation code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("non-finite value {value} at sample {t}, channel {channel}")]
    NonFinite { t: usize, channel: usize, value: f64 },

    #[error("missing cell at sample {t}, channel {channel}")]
    MissingCell { t: usize, channel: usize },

    #[error("duplicate cell at sample {t}, channel {channel}")]
    DuplicateCell { t: usize, channel: usize },

    #[error("inconsistent channel count: sample {t} has {got} channels, expected {expected}")]
    InconsistentChannels { t: usize, got: usize, expected: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("measurement Jacobian is rank deficient: rank {rank} < {p} states")]
    RankDeficient { rank: usize, p: usize },

    #[error("circle fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),

    #[error("degenerate circle fit: points are collinear or coincident")]
    DegenerateFit,

    #[error("training stream too short: {got} samples, need at least {need}")]
    TrainingTooShort { got: usize, need: usize },

    #[error("attack plan has an empty target set")]
    EmptyTargets,

    #[error("attack class intervals [{a_start}, {a_end}) and [{b_start}, {b_end}) overlap")]
    OverlappingIntervals { a_start: usize, a_end: usize, b_start: usize, b_end: usize },

    #[error("unknown attack class id {0} (valid: 1..=8)")]
    UnknownClass(u8),

    #[error("empty candidate grid for gamma calibration")]
    EmptyGrid,

    #[error("pattern length mismatch: {a} vs {b}")]
    PatternLength { a: usize, b: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("attack schedule exceeds stream length: interval ends at {end}, stream has {n} samples")]
    ScheduleOutOfRange { end: usize, n: usize },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
