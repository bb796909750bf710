//! Error type shared across the library.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by callers (notably the CLI) to map
/// errors onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments or unparseable/invalid input data.
    Input,
    /// A calibration or inversion problem is infeasible for the given data.
    Calibration,
    /// A verification step ran but the model failed it.
    Verification,
    /// A bug or numeric breakdown inside the library.
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("arbitrage in chain: {0}")]
    Arbitrage(String),

    #[error("transform inconsistent with a lognormal mixture: {0}")]
    TransformResidue(String),

    #[error("analytic continuation not computable: {0}")]
    ContinuationOutOfRange(String),

    #[error("inversion failed: {0}")]
    InversionFailed(String),

    #[error("calendar arbitrage: {0}")]
    CalendarArbitrage(String),

    #[error("non-invertible CDF: {0}")]
    FlatCdf(String),

    #[error("infeasible coupling: {0}")]
    InfeasibleCoupling(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("simulation left the surface grid: {0}")]
    GridEscape(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Domain(_) | InvalidInput(_) | Parse(_) => ErrorClass::Input,
            GridTooCoarse(_) | Arbitrage(_) | TransformResidue(_)
            | ContinuationOutOfRange(_) | InversionFailed(_) | CalendarArbitrage(_)
            | FlatCdf(_) | InfeasibleCoupling(_) => ErrorClass::Calibration,
            Verification(_) | GridEscape(_) => ErrorClass::Verification,
            Internal(_) => ErrorClass::Internal,
        }
    }
}
