use thiserror::Error;

/// Errors raised anywhere in the simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, dimensions or subsystem bookkeeping do not line up.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:e} below -{clip:e}")]
    Positivity { eigenvalue: f64, clip: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate geometry: {0}")]
    Geometry(String),

    /// Missing or malformed external data (tabulated backend, rate sets).
    #[error("data error: {0}")]
    Data(String),

    /// A caller broke a documented precondition.
    #[error("contract violated: {0}")]
    Contract(String),

    #[error("stationary manifold of {context} has dimension {dimension}, expected 1")]
    Degeneracy { context: String, dimension: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Name of the pipeline stage an error is attributed to in row-level reports.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Structural(_) | Error::Positivity { .. } => "linalg",
            Error::Geometry(_) => "geometry",
            Error::Data(_) => "environment",
            Error::Contract(_) => "model",
            Error::Degeneracy { .. } => "dynamics",
            Error::Parameter(_) => "parameters",
            Error::Config(_) => "harness",
            Error::Io(_) => "io",
        }
    }
}
