use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// The mapped element degenerated at a quadrature point.
    #[error("non-positive Jacobian determinant {det:e} at reference point ({x:.6}, {y:.6}) for t = {t}")]
    Geometry { t: f64, x: f64, y: f64, det: f64 },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("requested {requested} nonzero eigenvalues, only {available} available")]
    NotEnoughEigenvalues { requested: usize, available: usize },

    #[error("snapshot set has numerical rank {achievable}, cannot extract {requested} basis vectors")]
    RankDeficient { requested: usize, achievable: usize },

    #[error("spectral gap undefined: all reduced eigenvalues lie in one cluster")]
    GapUndefined,

    /// Raised by the bordered derivative solve when the eigenvalue is (numerically) multiple.
    #[error("bordered derivative system singular at lambda = {lambda}: {diagnosis}")]
    SingularBordered { lambda: f64, diagnosis: String },

    #[error("cannot normalize a vector with zero mass norm")]
    ZeroVector,

    #[error("tracking aborted at t = {t}: {reason}")]
    Tracking { t: f64, reason: String },

    #[error("at t = {t}: {source}")]
    AtParameter {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("structural check failed: {0}")]
    CheckFailed(String),

    #[error("pipeline stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps the error with the parameter value it occurred at (once).
    pub fn at(self, t: f64) -> Error {
        match self {
            e @ Error::AtParameter { .. } => e,
            e => Error::AtParameter {
                t,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by bad user input rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidInput(_)
            | Error::DimensionMismatch { .. }
            | Error::Config(_)
            | Error::Parse(_) => true,
            Error::AtParameter { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 2,
            e if e.is_validation() => 2,
            _ => 3,
        }
    }
}
