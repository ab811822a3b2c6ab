//! Benchmark diffusions with closed-form ground truth, and the special
//! functions they rely on. These closed forms are the oracles the rest of
//! the crate is tested against.

pub mod cell;
pub mod interest_rate;
pub mod ou;
pub mod special;

pub use cell::CellModel;
pub use interest_rate::{sample_gamma_5_2, InterestRateModel, IrTransitionScore, STATE_FLOOR};
pub use ou::{OrnsteinUhlenbeck, OuBridgeMarginalScore, OuTransitionScore};
pub use special::{bessel_i, bessel_i_dx, bessel_i_dx_over_i, bessel_i_log, ln_gamma};
