//! Ornstein–Uhlenbeck process with identity diffusion coefficient:
//! dX_t = (α − βX_t) dt + dW_t on R^d. Fully tractable: Gaussian transition
//! density, transition score and the gradient of the conditioned drift
//! correction are all closed-form, so this model doubles as the primary
//! ground-truth oracle of the test suite.

use crate::error::{Error, Result};
use crate::nn::ScoreFunction;
use crate::scalar::Scalar;
use crate::sde::DiffusionModel;

#[derive(Clone, Debug)]
pub struct OrnsteinUhlenbeck<F> {
    pub alpha: F,
    pub beta: F,
    pub dim: usize,
}

impl<F: Scalar> OrnsteinUhlenbeck<F> {
    pub fn new(alpha: F, beta: F, dim: usize) -> Result<Self> {
        if !(beta > F::zero()) {
            return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
        }
        if dim == 0 {
            return Err(Error::InvalidInput("dim must be positive".into()));
        }
        Ok(Self { alpha, beta, dim })
    }

    fn stationary_mean(&self) -> F {
        self.alpha / self.beta
    }

    /// Transition mean m(dt, x) = α/β + (x − α/β) e^{−β dt} per component and
    /// the shared scalar variance v(dt) = (1 − e^{−2β dt}) / (2β).
    pub fn mean_var(&self, dt: F, x_from: &[F]) -> (Vec<F>, F) {
        let decay = (-self.beta * dt).exp();
        let mu = self.stationary_mean();
        let mean = x_from.iter().map(|x| mu + (*x - mu) * decay).collect();
        let two_beta = self.beta + self.beta;
        let var = (F::one() - (-two_beta * dt).exp()) / two_beta;
        (mean, var)
    }

    /// Score of the transition density started at x0:
    /// s(t, x) = {m(t, x0) − x} / v(t). t = 0 is a singularity.
    pub fn transition_score(&self, t: F, x: &[F], x0: &[F]) -> Result<Vec<F>> {
        if !(t > F::zero()) {
            return Err(Error::InvalidInput(format!(
                "transition score undefined at t = {t}"
            )));
        }
        let (mean, var) = self.mean_var(t, x0);
        Ok(mean.iter().zip(x).map(|(m, xi)| (*m - *xi) / var).collect())
    }

    /// Gradient of the log conditioning function:
    /// e^{−β(T−t)} / v(T−t) · {xT − m(T−t, x)}.
    pub fn doob_gradient(&self, t: F, x: &[F], x_terminal: &[F], horizon: F) -> Result<Vec<F>> {
        let remaining = horizon - t;
        if !(remaining > F::zero()) {
            return Err(Error::InvalidInput(format!(
                "conditioning gradient undefined at t = {t} with horizon {horizon}"
            )));
        }
        let (mean, var) = self.mean_var(remaining, x);
        let scale = (-self.beta * remaining).exp() / var;
        Ok(x_terminal
            .iter()
            .zip(&mean)
            .map(|(xt, m)| scale * (*xt - *m))
            .collect())
    }

    /// Exact log transition density over an elapsed time dt.
    pub fn log_transition(&self, dt: F, x_from: &[F], x_to: &[F]) -> F {
        let (mean, var) = self.mean_var(dt, x_from);
        let ln_two_pi_v = (F::cast(core::f64::consts::TAU) * var).ln();
        let half = F::cast(0.5);
        let mut acc = F::zero();
        for (m, x) in mean.iter().zip(x_to) {
            let z = *x - *m;
            acc = acc - half * (ln_two_pi_v + z * z / var);
        }
        acc
    }
}

impl<F: Scalar> DiffusionModel<F> for OrnsteinUhlenbeck<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> &str {
        "ou"
    }

    fn drift(&self, _t: F, x: &[F], out: &mut [F]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.alpha - self.beta * *xi;
        }
    }

    fn sigma(&self, _t: F, _x: &[F], out: &mut [F]) {
        out.fill(F::zero());
        for i in 0..self.dim {
            out[i * self.dim + i] = F::one();
        }
    }

    fn sigma_sq(&self, t: F, x: &[F], out: &mut [F]) {
        self.sigma(t, x, out);
    }
}

/// Closed-form transition score pinned to one initial state, for injecting
/// the exact score into a bridge proposal.
pub struct OuTransitionScore<'a, F> {
    pub model: &'a OrnsteinUhlenbeck<F>,
    pub x0: Vec<F>,
}

impl<F: Scalar> ScoreFunction<F> for OuTransitionScore<'_, F> {
    fn score(&self, t: F, x: &[F], out: &mut [F]) {
        let s = self
            .model
            .transition_score(t, x, &self.x0)
            .expect("transition score evaluated at t = 0");
        out.copy_from_slice(&s);
    }
}

/// Closed-form score of the conditioned-process marginal,
/// s*(t, x) = s(t, x) + ∇ log h(t, x); the exact target of the second
/// (forward) learning stage.
pub struct OuBridgeMarginalScore<'a, F> {
    pub model: &'a OrnsteinUhlenbeck<F>,
    pub x0: Vec<F>,
    pub x_terminal: Vec<F>,
    pub horizon: F,
}

impl<F: Scalar> ScoreFunction<F> for OuBridgeMarginalScore<'_, F> {
    fn score(&self, t: F, x: &[F], out: &mut [F]) {
        let s = self
            .model
            .transition_score(t, x, &self.x0)
            .expect("bridge marginal score evaluated at t = 0");
        let g = self
            .model
            .doob_gradient(t, x, &self.x_terminal, self.horizon)
            .expect("bridge marginal score evaluated at t = T");
        for (o, (a, b)) in out.iter_mut().zip(s.iter().zip(&g)) {
            *o = *a + *b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn benchmark() -> OrnsteinUhlenbeck<f64> {
        OrnsteinUhlenbeck::new(0.0, 2.0, 1).unwrap()
    }

    #[test]
    fn mean_var_hand_values() {
        let m = benchmark();
        let (mean, var) = m.mean_var(1.0, &[1.0]);
        assert_relative_eq!(mean[0], (-2.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(var, (1.0 - (-4.0f64).exp()) / 4.0, max_relative = 1e-12);
    }

    #[test]
    fn long_horizon_reaches_stationary_limits() {
        let m = OrnsteinUhlenbeck::new(1.0, 2.0, 1).unwrap();
        let (mean, var) = m.mean_var(50.0, &[7.3]);
        assert_relative_eq!(mean[0], 0.5, epsilon = 1e-10);
        assert_relative_eq!(var, 0.25, epsilon = 1e-10);
    }

    #[test]
    fn stationary_mean_is_fixed_point() {
        let m = OrnsteinUhlenbeck::new(3.0, 1.5, 1).unwrap();
        for &dt in &[0.01, 0.5, 4.0] {
            let (mean, _) = m.mean_var(dt, &[2.0]);
            assert_relative_eq!(mean[0], 2.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn score_zero_at_transition_mean() {
        let m = benchmark();
        let (mean, _) = m.mean_var(0.7, &[1.0]);
        let s = m.transition_score(0.7, &mean, &[1.0]).unwrap();
        assert_relative_eq!(s[0], 0.0, epsilon = 1e-13);
    }

    #[test]
    fn score_hand_value() {
        let m = benchmark();
        let s = m.transition_score(1.0, &[0.0], &[1.0]).unwrap();
        let expect = (-2.0f64).exp() / ((1.0 - (-4.0f64).exp()) / 4.0);
        assert_relative_eq!(s[0], expect, max_relative = 1e-12);
        assert_relative_eq!(s[0], 0.551_44, max_relative = 1e-4);
    }

    #[test]
    fn score_matches_log_density_gradient() {
        let m = OrnsteinUhlenbeck::new(0.5, 2.0, 1).unwrap();
        let x0 = [1.0];
        for &x in &[0.2, 0.9, 1.7] {
            let s = m.transition_score(0.8, &[x], &x0).unwrap();
            let h = 1e-6;
            let fd = (m.log_transition(0.8, &x0, &[x + h]) - m.log_transition(0.8, &x0, &[x - h]))
                / (2.0 * h);
            assert_relative_eq!(s[0], fd, max_relative = 1e-8);
        }
    }

    #[test]
    fn doob_gradient_zero_when_terminal_is_mean() {
        let m = benchmark();
        let x = [0.4];
        let (mean, _) = m.mean_var(0.6, &x);
        let g = m.doob_gradient(0.4, &x, &mean, 1.0).unwrap();
        assert_relative_eq!(g[0], 0.0, epsilon = 1e-13);
    }

    #[test]
    fn doob_gradient_hand_value() {
        let m = benchmark();
        let g = m.doob_gradient(0.0, &[0.0], &[1.0], 1.0).unwrap();
        let v = (1.0 - (-4.0f64).exp()) / 4.0;
        assert_relative_eq!(g[0], (-2.0f64).exp() / v, max_relative = 1e-12);
        assert_relative_eq!(g[0], 0.551_44, max_relative = 1e-4);
    }

    #[test]
    fn bridge_marginal_score_matches_product_density_gradient() {
        // s + ∇log h is the gradient of log{p(t,x|0,x0) h(t,x)}.
        let m = benchmark();
        let (x0, xt, horizon, t) = ([1.0], [1.0], 1.0, 0.35);
        for &x in &[0.4, 1.0, 1.6] {
            let s = m.transition_score(t, &[x], &x0).unwrap()[0];
            let g = m.doob_gradient(t, &[x], &xt, horizon).unwrap()[0];
            let log_prod = |y: f64| {
                m.log_transition(t, &x0, &[y]) + m.log_transition(horizon - t, &[y], &xt)
            };
            let h = 1e-6;
            let fd = (log_prod(x + h) - log_prod(x - h)) / (2.0 * h);
            assert_relative_eq!(s + g, fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn singular_times_rejected() {
        let m = benchmark();
        assert!(m.transition_score(0.0, &[1.0], &[1.0]).is_err());
        assert!(m.doob_gradient(1.0, &[1.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn sigma_sq_is_sigma_times_sigma_transpose() {
        let m = OrnsteinUhlenbeck::new(0.0, 2.0, 3).unwrap();
        let x = [0.3, -0.4, 2.0];
        let sig = {
            let mut s = vec![0.0f64; 9];
            m.sigma(0.2, &x, &mut s);
            s
        };
        let mut prod = vec![0.0f64; 9];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    prod[i * 3 + j] += sig[i * 3 + k] * sig[j * 3 + k];
                }
            }
        }
        let ssq = m.sigma_sq_vec(0.2, &x);
        for (a, b) in prod.iter().zip(&ssq) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
