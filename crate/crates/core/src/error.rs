use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("polynomial error: {0}")]
    Poly(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("model validation failed with {} violation(s); first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Validation(Vec<Violation>),
    #[error("automaton error: {0}")]
    Automaton(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("step size error: {0}")]
    StepSize(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("synthesis failed after {iterations} iteration(s): {reason}")]
    SynthesisFailed { iterations: usize, reason: String },
    #[error("LP solver failure: {0}")]
    Solver(String),
    #[error("gain extraction failed: {0}")]
    GainExtraction(String),
    #[error("small-gain condition violated: spectral radius {spectral_radius:.6} >= 1")]
    SmallGainViolated { spectral_radius: f64 },
    #[error("composition failed: {0}")]
    Composition(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Template(_) | Error::SynthesisFailed { .. } | Error::Solver(_) => 3,
            Error::GainExtraction(_) | Error::SmallGainViolated { .. } | Error::Composition(_) => 4,
            Error::Numeric(_) | Error::StepSize(_) => 5,
            _ => 2,
        }
    }
}
