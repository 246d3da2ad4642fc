use nalgebra::DVector;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Last finite phase point before an update blew up.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub pi: DVector<f64>,
    pub w: DVector<f64>,
    pub step: u64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("numerical failure after {iterations} iterations: {reason}")]
    NumericalFailure { reason: String, iterations: usize },

    #[error("function evaluation produced a non-finite value at component {index}")]
    Evaluation { index: usize },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("diverged at step {}", last_finite.step)]
    Divergence { last_finite: Box<PhasePoint> },

    #[error("projection onto the zero-loss manifold failed after {steps} steps (loss {loss:e})")]
    ProjectionFailure { steps: usize, loss: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fitted slope {slope:e} is too close to zero for a finite timescale")]
    UnboundedTimescale { slope: f64 },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("spectrum is unstable for eigenvalues {offending:?}")]
    Unstable { offending: Vec<f64> },

    #[error("drift integration failed at t = {t}: {reason}")]
    IntegrationFailure {
        t: f64,
        reason: String,
        partial: Vec<(f64, DVector<f64>)>,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::ContractViolation(msg.into())
    }
}
