use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("hypotheses infeasible: {0}")]
    Infeasible(String),

    #[error("SGD diverged at step {step}: |w| = {value:e}")]
    Diverged { step: usize, value: f64 },

    #[error("too few rounds: got {got}, need at least {need}")]
    TooFewRounds { got: usize, need: usize },

    #[error("oscillation detected at step {step} in a run expected to stay on one side")]
    OscillationDetected { step: usize },

    #[error("enumeration budget exceeded: k = {k} > {max}")]
    BudgetExceeded { k: usize, max: usize },

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("batch normalization needs a batch of at least 2 in training mode, got {0}")]
    BatchTooSmall(usize),

    #[error("empty group mask")]
    EmptyMask,

    #[error("no tau fixpoint within {0} iterations")]
    NoTauFixpoint(usize),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn ensure_finite(value: f64, what: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(what))
    }
}
