use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("sampler error: {0}")]
    Sampler(String),

    /// Every filter weight underflowed to zero at time `t`.
    #[error("weight collapse at t = {t}: all emission weights are zero")]
    WeightCollapse { t: usize },

    /// The backward kernel for target particle `i` has a zero normalizer.
    #[error("degenerate backward kernel at t = {t}, particle {i}")]
    BackwardDegenerate { t: usize, i: usize },

    #[error("non-finite {what} at t = {t}, particle {i}")]
    NonFinite { what: &'static str, t: usize, i: usize },

    #[error("non-finite parameter update at t = {t}: theta = {theta:?}, zeta = {zeta:?}")]
    NonFiniteUpdate { t: usize, theta: Vec<f64>, zeta: Vec<f64> },

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }

    /// True for the recoverable degeneracy events the RML driver may skip.
    pub fn is_degeneracy(&self) -> bool {
        matches!(self, Error::WeightCollapse { .. } | Error::BackwardDegenerate { .. })
    }
}
