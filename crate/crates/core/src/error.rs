use thiserror::Error;

/// Errors raised by the lattice, band, reduction, spectral and ensemble layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("vertex {0:?} is not part of the cube")]
    UnknownVertex(Vec<i64>),

    #[error("edge is not part of the cube")]
    UnknownEdge,

    #[error("energy {energy} lies within {distance:e} of the Dirichlet spectrum (threshold {threshold:e})")]
    DirichletProximity {
        energy: f64,
        distance: f64,
        threshold: f64,
    },

    #[error("interval [{lo}, {hi}] meets the forbidden set")]
    IntervalMeetsDelta { lo: f64, hi: f64 },

    #[error("root bracketing failed: {0}")]
    Bracketing(String),

    #[error("eigenvalue branches are ambiguous near E = {energy} (grid step {step:e})")]
    BranchAmbiguity { energy: f64, step: f64 },

    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),

    #[error("degenerate localization fit: {0}")]
    DegenerateFit(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
