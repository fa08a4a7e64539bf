use thiserror::Error;

/// Errors raised across the certification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },

    #[error("matrix is not Hermitian (max drift {0:e})")]
    NotHermitian(f64),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("invalid observable: {0}")]
    InvalidObservable(String),

    #[error("invalid behavior: {0}")]
    InvalidBehavior(String),

    #[error("behavior is signaling beyond tolerance {tol:e} (max discrepancy {found:e})")]
    Signaling { found: f64, tol: f64 },

    #[error("parameter `{name}` out of range: {value} not in {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: String,
    },

    #[error("malformed SDP: {0}")]
    MalformedSdp(String),

    #[error("SDP solve did not reach optimality: {0}")]
    SolverFailure(String),

    #[error("certificate misuse: {0}")]
    Certificate(String),

    #[error("tomography: {0}")]
    Tomography(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn out_of_range(name: &'static str, value: f64, range: &str) -> Error {
    Error::OutOfRange {
        name,
        value,
        range: range.to_string(),
    }
}
