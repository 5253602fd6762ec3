use thiserror::Error;

/// Errors produced anywhere in the fitting pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not a rotation (orthogonality defect {defect:.3e})")]
    NotARotation { defect: f64 },

    #[error("matrix is degenerate (rank < 2)")]
    DegenerateMatrix,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("non-finite value produced by node {node} (`{op}`)")]
    NonFiniteValue { node: usize, op: &'static str },

    #[error("objective is not a scalar: shape {0:?}")]
    NotScalar((usize, usize)),

    #[error("point {index} is behind the camera (depth {depth:.3e})")]
    BehindCamera { index: usize, depth: f64 },

    #[error("unknown Euler convention `{0}`")]
    UnknownConvention(String),

    #[error("Euler convention mismatch for joint `{joint}`: {expected} vs {got}")]
    ConventionMismatch { joint: String, expected: String, got: String },

    #[error("prior kind mismatch: expected {expected}, got {got}")]
    KindMismatch { expected: String, got: String },

    #[error("region mismatch: {0}")]
    RegionMismatch(String),

    #[error("training diverged at step {step}")]
    DivergedTraining { step: usize },

    #[error("line search failed after {evaluations} evaluations")]
    LineSearchFailed { evaluations: usize },

    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { expected: u32, found: u32 },

    #[error("io: {0}")]
    Io(String),

    #[error("json: {0}")]
    Json(String),
}

impl Error {
    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteValue { .. } | Error::DivergedTraining { .. } | Error::LineSearchFailed { .. } | Error::DegenerateMatrix
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
