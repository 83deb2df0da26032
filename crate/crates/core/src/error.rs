use thiserror::Error;

/// Errors raised anywhere in the toolkit. The variant name is what the CLI
/// prints on standard error, see [`Error::name`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric positive definite: {0}")]
    NonSpdMatrix(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("missing field: {0}")]
    MissingField(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("matrix exponential overflowed")]
    Overflow,
    #[error("eigenvalue iteration did not converge")]
    ConvergenceFailure,
    #[error("unsupported potential: {0}")]
    UnsupportedPotential(String),
    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),
    #[error("polynomial root finding failed: {0}")]
    RootFindingFailure(String),
    #[error("singular covariance: {0}")]
    SingularCovariance(String),
    #[error("non-finite particle state at t = {time}")]
    NonFiniteState { time: f64 },
    #[error("need at least 2 particles, got {0}")]
    InsufficientParticles(usize),
    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("stiffness budget exceeded: {steps} steps requested, cap is {cap}")]
    StiffnessBudgetExceeded { steps: u64, cap: u64 },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonSpdMatrix(_) => "NonSPDMatrix",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::MissingField(_) => "MissingField",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Overflow => "Overflow",
            Error::ConvergenceFailure => "ConvergenceFailure",
            Error::UnsupportedPotential(_) => "UnsupportedPotential",
            Error::UnsupportedDimension(_) => "UnsupportedDimension",
            Error::RootFindingFailure(_) => "RootFindingFailure",
            Error::SingularCovariance(_) => "SingularCovariance",
            Error::NonFiniteState { .. } => "NonFiniteState",
            Error::InsufficientParticles(_) => "InsufficientParticles",
            Error::QuadratureFailure(_) => "QuadratureFailure",
            Error::GridTooCoarse(_) => "GridTooCoarse",
            Error::StiffnessBudgetExceeded { .. } => "StiffnessBudgetExceeded",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
