use alloc::string::String;

/// Errors raised by the simulator, the reward stack and the optimizer.
///
/// Protocol parsing has its own [`crate::protocol::ParseError`] because the
/// training loop treats every parse failure as a scored outcome rather than a
/// fault.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): need finite x1 < x2 and y1 < y2")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("box ({x1}, {y1}, {x2}, {y2}) does not fit a {width}x{height} grid")]
    BoxOutsideGrid {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        width: usize,
        height: usize,
    },
    #[error("mask dimensions differ: {expected:?} vs {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("mask of {width}x{height} needs {expected} cells, got {found}")]
    BadMaskSize {
        width: usize,
        height: usize,
        expected: usize,
        found: usize,
    },
    #[error("cost matrix is empty")]
    EmptyMatrix,
    #[error("non-finite cost at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },
    #[error("frame has no ground-truth boxes")]
    EmptyGroundTruth,
    #[error("no keyframes to score")]
    NoKeyframes,
    #[error("empty keyframe selection")]
    EmptySelection,
    #[error("frame {frame} outside episode of {frames} frames")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("target has zero area on every frame")]
    DegenerateSaliency,
    #[error("invalid config `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },
    #[error("group of {0} rollouts; need at least 2")]
    GroupTooSmall(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("action infeasible: {0}")]
    InfeasibleAction(String),
    #[error("shape mismatch in `{field}`: expected {expected}, found {found}")]
    ShapeMismatch {
        field: String,
        expected: usize,
        found: usize,
    },
    #[error("episode generation failed to produce a solvable query (seed {seed})")]
    Unsolvable { seed: u64 },
    #[error("evaluation corpus is empty")]
    EmptyCorpus,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn config(key: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
