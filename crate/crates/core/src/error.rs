use thiserror::Error;

/// Errors produced by the simulation and estimation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("lattice mismatch: {0}")]
    LatticeMismatch(String),

    #[error("state became non-finite at step {step}")]
    Explosion { step: usize },

    #[error("reverse weight overflowed at step {step}")]
    WeightOverflow { step: usize },

    #[error("path {index} failed: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient overlap: {0}")]
    InsufficientOverlap(String),

    #[error("iteration did not converge after {iterations} iterations (last increment {last_increment:.3e})")]
    NotConverged {
        iterations: usize,
        last_increment: f64,
    },

    #[error("pathological envelope: acceptance rate {rate:.3e} below 1e-4")]
    PathologicalEnvelope { rate: f64 },

    #[error("model does not provide {0}")]
    Unsupported(&'static str),
}

impl Error {
    pub(crate) fn at_index(self, index: usize) -> Self {
        Error::Sample {
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err($crate::error::Error::$variant(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
