//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Drift or diffusion blow-up detected during simulation.
    #[error("non-finite state at step {step}, path {path}: {detail}")]
    BlowUp {
        step: usize,
        path: usize,
        detail: String,
    },

    #[error("covariance not positive definite at t = {t}{context}")]
    NotPositiveDefinite { t: f64, context: String },

    #[error("non-finite loss term at interval {interval}, path {path}")]
    NonFiniteLoss { interval: usize, path: usize },

    #[error("non-finite importance weight for path {path}: {detail}")]
    NonFiniteWeight { path: usize, detail: String },

    #[error("endpoint mismatch: {0}")]
    EndpointMismatch(String),

    /// Loss exceeded 1e6 times its initial value; the per-iteration record up
    /// to the failure is attached.
    #[error("training diverged at iteration {iteration}: loss {loss:.3e} vs initial {initial:.3e}")]
    TrainingDiverged {
        iteration: usize,
        loss: f64,
        initial: f64,
        losses: Vec<f64>,
    },

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("root search failed: {0}")]
    RootSearch(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid network file: {0}")]
    InvalidFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;
