use thiserror::Error;

/// Errors raised by the estimation, planning and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("visibility {0} outside (0, 1]")]
    Visibility(f64),
    #[error("resource multiplier must be at least 1, got {0}")]
    Multiplier(u32),
    #[error("invalid ladder: {0}")]
    Ladder(String),
    #[error("empty measurement batch: both bases need at least one count")]
    EmptyBatch,
    #[error("photon count {n} at stage {stage} must be even and at least {min}")]
    PhotonCount { stage: usize, n: u64, min: u64 },
    #[error("infeasible schedule: {0}")]
    Infeasible(String),
    #[error("budget N = {budget} cannot fund {required} resources needed by the minimum allocation")]
    Budget { budget: u64, required: u64 },
    #[error("degenerate fit: {0}")]
    Fit(String),
    #[error("invalid configuration: {0}")]
    Config(String),
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
