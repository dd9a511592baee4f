use std::fmt;

/// One violated configuration constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {}", join(.0))]
    InvalidConfig(Vec<Violation>),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error("degenerate scene: {0}")]
    DegenerateScene(String),
    #[error("empty cell set: {0}")]
    EmptyCellSet(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("transport plan row {0} has zero mass")]
    ZeroRow(usize),
    #[error("non-finite gradient in loss term {term}")]
    NonFiniteGradient { term: String },
    #[error("unknown suite `{0}` (expected one of: smoke, ablation, divergence)")]
    UnknownSuite(String),
    #[error("unknown loss term `{0}` (valid names: sup, c, f, b, knn)")]
    UnknownLossTerm(String),
    #[error("no ground truth available")]
    MissingGroundTruth,
    #[error("config json: {0}")]
    Json(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
