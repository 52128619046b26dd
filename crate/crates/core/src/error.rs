use alloc::string::String;

/// Errors raised by the sampler and its supporting routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("user function failed: {0}")]
    UserFunctionFailure(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("prior precision is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("dilation factor must be positive, got {0}")]
    InvalidDilation(f64),
    #[error("Gauss-Newton proposal precision is singular")]
    SingularProposal,
    #[error("initial guess is outside the model domain")]
    InitialGuessOutsideDomain,
    #[error("invalid back-off policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("cannot burn {requested} samples from a chain of {available}")]
    BurnTooLarge { requested: usize, available: usize },
    #[error("could not find a test point inside the model domain after {0} attempts")]
    PointOutsideDomain(usize),
    #[error("chain is empty")]
    EmptyChain,
    #[error("series of length {len} is too short (need at least {min})")]
    SeriesTooShort { len: usize, min: usize },
    #[error("no self-consistent autocorrelation window below lag {0}")]
    NonConvergentWindow(usize),
    #[error("lag {lag} too large for series of length {len}")]
    LagTooLarge { lag: usize, len: usize },
    #[error("density is not finite on the quadrature grid")]
    NonFiniteDensity,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
