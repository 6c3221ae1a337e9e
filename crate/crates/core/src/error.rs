use thiserror::Error;

/// Failures raised by model construction and the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("heavy mean claim: the claim size has infinite mean")]
    HeavyMeanClaim,

    #[error("infinite second moment: {0}")]
    InfiniteSecondMoment(String),

    #[error("moment of order {order} of {which} is infinite")]
    MissingMoment { which: &'static str, order: u32 },

    #[error("operation requires a critical rate family, got {0}")]
    UnsupportedRate(&'static str),

    #[error("recurrent: psi = 1 (outer integral diverges)")]
    Recurrent,

    #[error("recurrent or critical: rho = {0} is not positive")]
    NotTransient(f64),

    #[error("no ruin observed")]
    NoRuinObserved,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("light-tail regime: use lyapunov_bounds")]
    LightTail,

    #[error("rejection acceptance below 1e-3 at level {0}")]
    LowAcceptance(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True when the error stems from the user's model or parameters rather
    /// than from a numerical routine.
    pub fn is_config_error(&self) -> bool {
        !matches!(
            self,
            Error::Recurrent | Error::NoRuinObserved | Error::Numerical(_) | Error::LowAcceptance(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
