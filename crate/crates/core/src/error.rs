use std::path::PathBuf;

/// Errors produced by the entity-bank engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("syntax error: {0}")]
    Syntax(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("mask selects no latent patch")]
    EmptyMask,

    #[error("patch coordinate ({x}, {y}) in slot {slot} is outside the layout")]
    CoordinateOutOfRange { slot: usize, x: u32, y: u32 },

    #[error("duplicate patch at slot {slot}, coordinate ({x}, {y})")]
    DuplicateCoordinate { slot: usize, x: u32, y: u32 },

    #[error("length mismatch: expected {expected}, got {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("count mismatch: expected {expected} predictions, got {found}")]
    CountMismatch { expected: usize, found: usize },

    #[error("pair set is empty")]
    EmptyPairSet,

    #[error("invalid smoothstep edges: {lower} >= {upper}")]
    InvalidEdges { lower: f64, upper: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid keyframe count {k} for {available} frames")]
    InvalidK { k: usize, available: usize },

    #[error("edit removes every patch of the entry")]
    EmptyResult,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shot {shot}, stage {stage}: {source}")]
    Stage {
        shot: u32,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// Wraps this error with the shot and pipeline stage it came from.
    pub fn at_stage(self, shot: u32, stage: &'static str) -> Self {
        Error::Stage {
            shot,
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
