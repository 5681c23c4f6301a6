use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("underdetermined least-squares problem: n = {n} < basis size {cols}")]
    Underdetermined { n: usize, cols: usize },
    #[error("ill-posed fit: information matrix has numerical rank {rank} < {cols}")]
    IllPosedFit { rank: usize, cols: usize },
    #[error("degenerate leave-one-out: a hat-diagonal equals 1 (interpolation regime)")]
    DegenerateLoo,
    #[error("degenerate model: {0}")]
    DegenerateModel(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),
    #[error("trend error: {0}")]
    Trend(String),
    #[error("mechanism error: singular stiffness matrix")]
    Mechanism,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialization(String),
    #[error("run failed: {0}")]
    Run(String),
}

impl Error {
    /// Stable machine-readable category used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Domain(_) => "domain",
            Error::Underdetermined { .. } => "underdetermined",
            Error::IllPosedFit { .. } => "ill_posed_fit",
            Error::DegenerateLoo => "degenerate_loo",
            Error::DegenerateModel(_) => "degenerate_model",
            Error::NumericalBreakdown(_) => "numerical_breakdown",
            Error::ResourceLimit(_) => "resource_limit",
            Error::Trend(_) => "trend",
            Error::Mechanism => "mechanism",
            Error::Io(_) => "io",
            Error::Serialization(_) => "serialization",
            Error::Run(_) => "run",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
