use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not Hermitian (max |H - H^dag| = {deviation:e})")]
    NonHermitian { deviation: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("fit diverged: {0}")]
    FitDiverged(String),

    #[error("optimizer stalled: best objective {best:.6} below {threshold}")]
    Stalled { best: f64, threshold: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// Numerical failures map to a different CLI exit code than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::FitDiverged(_) | Error::Stalled { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
