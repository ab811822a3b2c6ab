//! Diffusion bridge simulation with learned score approximations.
//!
//! A diffusion dX_t = f(t, X_t) dt + σ(t, X_t) dW_t conditioned to start at
//! x0 and end at xT can be sampled backwards in time: initialize at xT and
//! run the time-reversal of the unconditioned process, whose drift needs the
//! transition score ∇ log p(t, x | 0, x0). That score is intractable, but a
//! neural approximation can be fit by denoising score matching on cheap
//! unconditioned forward paths. This crate implements the whole pipeline:
//!
//! * [`sde`] — diffusion models, Euler–Maruyama simulation, and the
//!   discretized Gaussian transition density with its score;
//! * [`nn`] — a small feed-forward score network with sinusoidal time
//!   encoding, hand-rolled reverse-mode gradients, and Adam;
//! * [`score`] — the stage-one (transition score) and stage-two
//!   (bridge-marginal score) matching losses and training loops;
//! * [`bridge`] — pinned proposal bridge processes: the learned backward and
//!   forward bridges plus three classical baselines, all with evaluable
//!   transition densities;
//! * [`montecarlo`] — importance weights, effective sample size, transition
//!   density estimation, independent Metropolis–Hastings and its particle
//!   variant, and run diagnostics;
//! * [`models`] — three benchmark diffusions with closed-form ground truth
//!   (Ornstein–Uhlenbeck, a Bessel-based interest-rate model, a two-gene
//!   cell differentiation model).
//!
//! The numerical core is generic over the floating-point type through
//! [`Scalar`]; the type aliases at the crate root fix `f64`, which all
//! documented tolerances assume.

#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]

pub mod bridge;
pub mod error;
pub mod linalg;
pub mod models;
pub mod montecarlo;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod score;
pub mod sde;

pub use error::{Error, Result};
pub use rng::{Prng, RngSource, RNG_ALGORITHM};
pub use scalar::Scalar;

/// `f64` instantiations of the main types.
pub type TimeGrid64 = sde::TimeGrid<f64>;
pub type PathEnsemble64 = sde::PathEnsemble<f64>;
pub type ScoreNet64 = nn::ScoreNet<f64>;
pub type AdamParams64 = nn::AdamParams<f64>;
pub type TrainConfig64 = score::TrainConfig<f64>;
pub type TrainReport64 = score::TrainReport<f64>;
pub type WeightedEnsemble64 = montecarlo::WeightedEnsemble<f64>;
pub type OrnsteinUhlenbeck64 = models::OrnsteinUhlenbeck<f64>;
pub type InterestRateModel64 = models::InterestRateModel<f64>;
pub type CellModel64 = models::CellModel<f64>;
