use thiserror::Error;

/// Errors raised anywhere in the stress-analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("tree is disconnected: node {0} is unreachable from node 0")]
    DisconnectedGraph(usize),
    #[error("node {node} has degree {degree}, at most 4 segments may meet at a node")]
    DegreeExceeded { node: usize, degree: usize },
    #[error("segment {segment}: declared length {declared_m} m but node distance is {measured_m} m")]
    GeometryMismatch {
        segment: usize,
        declared_m: f64,
        measured_m: f64,
    },
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("invalid {field}: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("value {value} out of range {range}")]
    OutOfRange { value: f64, range: String },
    #[error("invalid random tree spec: {0}")]
    InvalidSpec(String),

    #[error("temperature must be positive, got {0} K")]
    NonpositiveTemperature(f64),
    #[error("time {t} s outside tabulated temperature range [{first}, {last}] s")]
    OutOfTable { t: f64, first: f64, last: f64 },

    #[error("Gauss-Legendre order {0} outside [1, 64]")]
    OrderOutOfRange(usize),
    #[error("node {0} has zero total incident width")]
    ZeroTotalWidth(usize),
    #[error("node of degree {degree} expects {expected} derivative inputs, got {got}")]
    DegreeMismatch {
        degree: usize,
        expected: usize,
        got: usize,
    },
    #[error("trial function queried outside its domain: {0}")]
    OutOfDomain(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("checkpoint architecture {found:?} does not match configured {expected:?}")]
    ArchitectureMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("line search failed after {0} evaluations")]
    LineSearchFailed(usize),

    #[error("singular linear system at t = {0} s")]
    SingularSystem(f64),
    #[error("time step too large at t = {t} s (residual {residual:e})")]
    StepTooLarge { t: f64, residual: f64 },
    #[error("stress fields do not share sample key {0}")]
    KeyMismatch(String),

    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors that come from invalid input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DisconnectedGraph(_)
                | Error::DegreeExceeded { .. }
                | Error::GeometryMismatch { .. }
                | Error::DanglingReference(_)
                | Error::InvalidField { .. }
                | Error::OutOfRange { .. }
                | Error::InvalidSpec(_)
                | Error::OrderOutOfRange(_)
                | Error::InvalidArchitecture(_)
                | Error::ArchitectureMismatch { .. }
                | Error::Config(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
