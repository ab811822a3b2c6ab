//! Scalar interest-rate diffusion dX_t = (θ/X_t − X_t) dt + dW_t on (0, ∞).
//!
//! The transition density is known in terms of the modified Bessel function
//! I_{θ−1/2}, which makes the model a second closed-form oracle: the
//! transition score and the conditioning gradient are evaluated through the
//! Bessel ratio J/I. Euler–Maruyama steps can cross zero even though the
//! true process cannot, so simulation clamps states at a small floor and
//! counts the events.

use rand::Rng;

use crate::error::{Error, Result};
use crate::models::special::{bessel_i_dx_over_i, bessel_i_log};
use crate::nn::ScoreFunction;
use crate::scalar::Scalar;
use crate::sde::DiffusionModel;

/// Lower clamp applied after each simulation step.
pub const STATE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct InterestRateModel<F> {
    pub theta: F,
}

impl<F: Scalar> InterestRateModel<F> {
    /// Requires θ > 1/2 so the Bessel order θ − 1/2 is nonnegative and the
    /// process stays positive.
    pub fn new(theta: F) -> Result<Self> {
        if !(theta > F::cast(0.5)) {
            return Err(Error::InvalidInput(format!(
                "theta must exceed 1/2, got {theta}"
            )));
        }
        Ok(Self { theta })
    }

    fn order(&self) -> F {
        self.theta - F::cast(0.5)
    }

    fn check_state(x: F) -> Result<()> {
        if !(x > F::zero()) {
            return Err(Error::InvalidInput(format!(
                "interest-rate states must be positive, got {x}"
            )));
        }
        Ok(())
    }

    /// Exact log transition density log p(t, x_t | s, x_s).
    pub fn log_transition(&self, s: F, x_s: F, t: F, x_t: F) -> Result<F> {
        if !(t > s) || s < F::zero() {
            return Err(Error::InvalidInput(format!(
                "need 0 <= s < t, got s = {s}, t = {t}"
            )));
        }
        Self::check_state(x_s)?;
        Self::check_state(x_t)?;
        let tau = t - s;
        let half = F::cast(0.5);
        let theta = self.theta;
        let sinh_tau = tau.sinh();
        let expm = ((tau + tau).exp()) - F::one();
        let bessel = bessel_i_log(self.order(), x_t * x_s / sinh_tau)?;
        Ok(theta * (x_t / x_s).ln() + half * (x_t * x_s).ln() - x_t * x_t
            + (theta + half) * tau
            - sinh_tau.ln()
            - (x_t * x_t + x_s * x_s) / expm
            + bessel)
    }

    /// Score of the transition density started at x0, ∂/∂x log p(t, x | 0, x0).
    pub fn transition_score(&self, t: F, x: F, x0: F) -> Result<F> {
        if !(t > F::zero()) {
            return Err(Error::InvalidInput(format!(
                "transition score undefined at t = {t}"
            )));
        }
        Self::check_state(x)?;
        Self::check_state(x0)?;
        let half = F::cast(0.5);
        let two = F::cast(2.0);
        let sinh_t = t.sinh();
        let ratio = bessel_i_dx_over_i(self.order(), x * x0 / sinh_t)?;
        Ok(self.theta / x + half / x - two * x - two * x / ((t + t).exp() - F::one())
            + ratio * x0 / sinh_t)
    }

    /// Gradient of the log conditioning function toward x_terminal at horizon.
    pub fn doob_gradient(&self, t: F, x: F, x_terminal: F, horizon: F) -> Result<F> {
        let remaining = horizon - t;
        if !(remaining > F::zero()) {
            return Err(Error::InvalidInput(format!(
                "conditioning gradient undefined at t = {t} with horizon {horizon}"
            )));
        }
        Self::check_state(x)?;
        Self::check_state(x_terminal)?;
        let half = F::cast(0.5);
        let two = F::cast(2.0);
        let sinh_r = remaining.sinh();
        let ratio = bessel_i_dx_over_i(self.order(), x_terminal * x / sinh_r)?;
        Ok(-self.theta / x + half / x - two * x / ((remaining + remaining).exp() - F::one())
            + ratio * x_terminal / sinh_r)
    }
}

impl<F: Scalar> DiffusionModel<F> for InterestRateModel<F> {
    fn dim(&self) -> usize {
        1
    }

    fn name(&self) -> &str {
        "interest_rates"
    }

    fn drift(&self, _t: F, x: &[F], out: &mut [F]) {
        out[0] = self.theta / x[0] - x[0];
    }

    fn sigma(&self, _t: F, _x: &[F], out: &mut [F]) {
        out[0] = F::one();
    }

    fn sigma_sq(&self, _t: F, _x: &[F], out: &mut [F]) {
        out[0] = F::one();
    }

    fn project_state(&self, x: &mut [F]) -> bool {
        let floor = F::cast(STATE_FLOOR);
        if x[0] < floor {
            x[0] = floor;
            true
        } else {
            false
        }
    }
}

/// Exact transition score pinned to one initial state.
pub struct IrTransitionScore<'a, F> {
    pub model: &'a InterestRateModel<F>,
    pub x0: F,
}

impl<F: Scalar> ScoreFunction<F> for IrTransitionScore<'_, F> {
    fn score(&self, t: F, x: &[F], out: &mut [F]) {
        out[0] = self
            .model
            .transition_score(t, x[0], self.x0)
            .expect("transition score evaluated outside (0, T)");
    }
}

/// One draw from the gamma distribution with shape 5 and rate 2, as a sum of
/// five exponentials.
pub fn sample_gamma_5_2<F: Scalar, R: Rng + ?Sized>(rng: &mut R) -> F {
    let rate = F::cast(2.0);
    let mut acc = F::zero();
    for _ in 0..5 {
        let u = F::uniform_unit(rng);
        acc = acc - (F::one() - u).ln() / rate;
    }
    acc
}
