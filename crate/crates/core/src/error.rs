use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    /// The Riccati solution left the representable range while integrating
    /// backward; `time` is the first node where the guard tripped.
    #[error("finite escape at t = {time:.6}: entry magnitude {magnitude:.3e}")]
    FiniteEscape { time: f64, magnitude: f64 },

    #[error("non-finite state in trial {trial} at t = {time:.6}")]
    NonFiniteState { trial: u64, time: f64 },

    #[error("no interior optimum for N = {count}: {reason}")]
    NoInteriorOptimum { count: usize, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::FiniteEscape { .. } | Error::NonFiniteState { .. } | Error::NoInteriorOptimum { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
