//! Diffusion models, time grids and Euler–Maruyama simulation.
//!
//! A model supplies the drift f(t,x), the diffusion coefficient σ(t,x), the
//! squared coefficient Σ = σσᵀ and the divergence ∇·Σ of the SDE
//! dX_t = f dt + σ dW_t. The one-step scheme
//! `X' = X + δt f(t,X) + σ(t,X) ΔW` induces the Gaussian transition density
//! N(x'; x + δt f, δt Σ) whose log and state-gradient (score) are evaluated
//! here; they are the targets of the score-matching losses.

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::rng::{Prng, RngSource};
use crate::scalar::Scalar;

/// A time-homogeneous or time-dependent diffusion on R^d.
///
/// `sigma_sq` must equal `sigma · sigmaᵀ` and be symmetric positive definite
/// wherever it is evaluated. `div_sigma_sq` defaults to the zero vector,
/// which is exact whenever σ does not depend on the state.
pub trait DiffusionModel<F: Scalar> {
    fn dim(&self) -> usize;

    fn name(&self) -> &str {
        "diffusion"
    }

    /// Drift f(t, x); `out` has length `dim`.
    fn drift(&self, t: F, x: &[F], out: &mut [F]);

    /// Diffusion coefficient σ(t, x), row-major `dim × dim`.
    fn sigma(&self, t: F, x: &[F], out: &mut [F]);

    /// Σ(t, x) = σσᵀ(t, x), row-major `dim × dim`.
    fn sigma_sq(&self, t: F, x: &[F], out: &mut [F]);

    /// Divergence of Σ, component i = Σ_j ∂_{x_j} Σ^{i,j}(t, x).
    fn div_sigma_sq(&self, _t: F, _x: &[F], out: &mut [F]) {
        for v in out.iter_mut() {
            *v = F::zero();
        }
    }

    /// Optional state-space projection applied after every simulation step
    /// (e.g. clamping a positive process away from zero). Returns true when
    /// the state was modified so callers can count projection events.
    fn project_state(&self, _x: &mut [F]) -> bool {
        false
    }

    fn drift_vec(&self, t: F, x: &[F]) -> Vec<F> {
        let mut out = vec![F::zero(); self.dim()];
        self.drift(t, x, &mut out);
        out
    }

    fn sigma_sq_vec(&self, t: F, x: &[F]) -> Vec<F> {
        let mut out = vec![F::zero(); self.dim() * self.dim()];
        self.sigma_sq(t, x, &mut out);
        out
    }

    fn div_sigma_sq_vec(&self, t: F, x: &[F]) -> Vec<F> {
        let mut out = vec![F::zero(); self.dim()];
        self.div_sigma_sq(t, x, &mut out);
        out
    }
}

/// Uniform partition 0 = t_0 < t_1 < … < t_M = T with spacing δt = T/M.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid<F> {
    horizon: F,
    steps: usize,
    times: Vec<F>,
}

impl<F: Scalar> TimeGrid<F> {
    pub fn uniform(horizon: F, steps: usize) -> Result<Self> {
        if !(horizon > F::zero()) || !horizon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "horizon must be positive and finite, got {}",
                horizon
            )));
        }
        if steps < 2 {
            return Err(Error::InvalidInput(format!(
                "grid needs more than one step, got {}",
                steps
            )));
        }
        // t_m = T·(m/M) puts t_M exactly at T.
        let m_f = F::cast(steps);
        let times = (0..=steps)
            .map(|m| horizon * (F::cast(m) / m_f))
            .collect();
        Ok(Self {
            horizon,
            steps,
            times,
        })
    }

    pub fn horizon(&self) -> F {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> F {
        self.horizon / F::cast(self.steps)
    }

    pub fn time(&self, m: usize) -> F {
        self.times[m]
    }

    pub fn times(&self) -> &[F] {
        &self.times
    }
}

/// Whether path index m sits at time t_m or at T − t_m.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// A batch of discretized trajectories on a shared grid.
///
/// States are stored flat as `[path][index][component]`.
#[derive(Clone, Debug)]
pub struct PathEnsemble<F> {
    grid: TimeGrid<F>,
    dim: usize,
    n_paths: usize,
    direction: Direction,
    states: Vec<F>,
    projection_events: usize,
}

impl<F: Scalar> PathEnsemble<F> {
    pub(crate) fn zeroed(
        grid: TimeGrid<F>,
        dim: usize,
        n_paths: usize,
        direction: Direction,
    ) -> Self {
        let len = n_paths * (grid.steps() + 1) * dim;
        Self {
            grid,
            dim,
            n_paths,
            direction,
            states: vec![F::zero(); len],
            projection_events: 0,
        }
    }

    pub fn grid(&self) -> &TimeGrid<F> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Number of times the model's state projection fired during simulation.
    pub fn projection_events(&self) -> usize {
        self.projection_events
    }

    pub(crate) fn add_projection_events(&mut self, n: usize) {
        self.projection_events += n;
    }

    #[inline]
    fn offset(&self, path: usize, index: usize) -> usize {
        (path * (self.grid.steps() + 1) + index) * self.dim
    }

    #[inline]
    pub fn state(&self, path: usize, index: usize) -> &[F] {
        let o = self.offset(path, index);
        &self.states[o..o + self.dim]
    }

    #[inline]
    pub fn state_mut(&mut self, path: usize, index: usize) -> &mut [F] {
        let o = self.offset(path, index);
        let d = self.dim;
        &mut self.states[o..o + d]
    }

    /// Copy the states at `index` of every path into `out` (`n_paths × dim`).
    pub fn gather(&self, index: usize, out: &mut [F]) {
        debug_assert_eq!(out.len(), self.n_paths * self.dim);
        for p in 0..self.n_paths {
            out[p * self.dim..(p + 1) * self.dim].copy_from_slice(self.state(p, index));
        }
    }

    /// Flat copy of one path's states, (M+1) × dim.
    pub fn path_states(&self, path: usize) -> Vec<F> {
        let o = self.offset(path, 0);
        let len = (self.grid.steps() + 1) * self.dim;
        self.states[o..o + len].to_vec()
    }

    /// A one-path ensemble holding a copy of the given path.
    pub fn single_path(&self, path: usize) -> crate::error::Result<Self> {
        if path >= self.n_paths {
            return Err(crate::error::Error::InvalidInput(format!(
                "path index {} out of range ({} paths)",
                path, self.n_paths
            )));
        }
        Ok(Self {
            grid: self.grid.clone(),
            dim: self.dim,
            n_paths: 1,
            direction: self.direction,
            states: self.path_states(path),
            projection_events: 0,
        })
    }

    /// Same ensemble with index order flipped and the direction toggled, so a
    /// backward ensemble becomes a forward-time one.
    pub fn reversed(&self) -> Self {
        let mut rev = Self::zeroed(
            self.grid.clone(),
            self.dim,
            self.n_paths,
            match self.direction {
                Direction::Forward => Direction::Backward,
                Direction::Backward => Direction::Forward,
            },
        );
        let last = self.grid.steps();
        for p in 0..self.n_paths {
            for m in 0..=last {
                rev.state_mut(p, m).copy_from_slice(self.state(p, last - m));
            }
        }
        rev.projection_events = self.projection_events;
        rev
    }
}

/// One Euler–Maruyama step: x + dt·f(t,x) + σ(t,x)·dw.
///
/// `dw` is the caller-supplied Brownian increment, typically N(0, dt·I).
/// Blow-up detection is the simulation loop's job; this is pure arithmetic.
pub fn em_step<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    model: &M,
    t: F,
    x: &[F],
    dt: F,
    dw: &[F],
) -> Vec<F> {
    let d = model.dim();
    debug_assert!(dt > F::zero());
    debug_assert_eq!(x.len(), d);
    debug_assert_eq!(dw.len(), d);
    let mut drift = vec![F::zero(); d];
    model.drift(t, x, &mut drift);
    let mut sig = vec![F::zero(); d * d];
    model.sigma(t, x, &mut sig);
    let mut noise = vec![F::zero(); d];
    linalg::mat_vec(&sig, dw, d, &mut noise);
    (0..d).map(|i| x[i] + dt * drift[i] + noise[i]).collect()
}

fn check_finite<F: Scalar>(x: &[F], step: usize, path: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::BlowUp {
            step,
            path,
            detail: format!("{:?}", x.iter().map(|v| v.as_f64()).collect::<Vec<_>>()),
        })
    }
}

/// Simulate `n_paths` unconditioned trajectories started at `x0`.
///
/// Path `i` draws from stream `i` of `src`: the result depends only on
/// (seed, n_paths, grid), never on scheduling.
pub fn simulate_forward<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    model: &M,
    x0: &[F],
    grid: &TimeGrid<F>,
    n_paths: usize,
    src: RngSource,
) -> Result<PathEnsemble<F>> {
    let d = model.dim();
    if x0.len() != d {
        return Err(Error::InvalidInput(format!(
            "x0 has dimension {}, model {}",
            x0.len(),
            d
        )));
    }
    let x0s: Vec<F> = (0..n_paths).flat_map(|_| x0.iter().copied()).collect();
    simulate_forward_from(model, &x0s, grid, src)
}

/// As [`simulate_forward`] but with one starting state per path
/// (`x0s` is `n_paths × dim`), used by amortized training.
pub fn simulate_forward_from<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    model: &M,
    x0s: &[F],
    grid: &TimeGrid<F>,
    src: RngSource,
) -> Result<PathEnsemble<F>> {
    let d = model.dim();
    let n_paths = x0s.len() / d;
    if n_paths == 0 || x0s.len() != n_paths * d {
        return Err(Error::InvalidInput("need at least one starting state".into()));
    }
    let mut ens = PathEnsemble::zeroed(grid.clone(), d, n_paths, Direction::Forward);
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut drift = vec![F::zero(); d];
    let mut sig = vec![F::zero(); d * d];
    let mut dw = vec![F::zero(); d];
    let mut noise = vec![F::zero(); d];
    let mut projections = 0usize;
    for p in 0..n_paths {
        let mut rng: Prng = src.stream(p as u64);
        ens.state_mut(p, 0).copy_from_slice(&x0s[p * d..(p + 1) * d]);
        for m in 1..=grid.steps() {
            let t_prev = grid.time(m - 1);
            let prev = ens.state(p, m - 1).to_vec();
            model.drift(t_prev, &prev, &mut drift);
            model.sigma(t_prev, &prev, &mut sig);
            for w in dw.iter_mut() {
                *w = sqrt_dt * F::standard_normal(&mut rng);
            }
            linalg::mat_vec(&sig, &dw, d, &mut noise);
            let next = ens.state_mut(p, m);
            for i in 0..d {
                next[i] = prev[i] + dt * drift[i] + noise[i];
            }
            if model.project_state(next) {
                projections += 1;
            }
            check_finite(ens.state(p, m), m, p)?;
        }
    }
    ens.add_projection_events(projections);
    Ok(ens)
}

/// Log of the Euler–Maruyama transition density
/// N{x; x_prev + δt f(t_prev, x_prev), δt Σ(t_prev, x_prev)} with δt = t − t_prev.
pub fn em_log_transition<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    model: &M,
    t_prev: F,
    x_prev: &[F],
    t: F,
    x: &[F],
) -> Result<F> {
    let d = model.dim();
    let dt = t - t_prev;
    if !(dt > F::zero()) {
        return Err(Error::InvalidInput(format!(
            "transition needs t > t_prev, got dt = {}",
            dt
        )));
    }
    let mut drift = vec![F::zero(); d];
    model.drift(t_prev, x_prev, &mut drift);
    let sig_sq = model.sigma_sq_vec(t_prev, x_prev);
    let factor = SpdFactor::new(&sig_sq, d).map_err(|e| at_time(e, t_prev))?;
    let centered: Vec<F> = (0..d).map(|i| x[i] - x_prev[i] - dt * drift[i]).collect();
    Ok(linalg::gaussian_log_density(&factor, dt, &centered))
}

/// Gradient in `x` of [`em_log_transition`]:
/// −(δt)⁻¹ Σ(t_prev, x_prev)⁻¹ {x − x_prev − δt f(t_prev, x_prev)}.
pub fn em_transition_score<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    model: &M,
    t_prev: F,
    x_prev: &[F],
    t: F,
    x: &[F],
) -> Result<Vec<F>> {
    let d = model.dim();
    let dt = t - t_prev;
    if !(dt > F::zero()) {
        return Err(Error::InvalidInput(format!(
            "transition needs t > t_prev, got dt = {}",
            dt
        )));
    }
    let mut drift = vec![F::zero(); d];
    model.drift(t_prev, x_prev, &mut drift);
    let sig_sq = model.sigma_sq_vec(t_prev, x_prev);
    let factor = SpdFactor::new(&sig_sq, d).map_err(|e| at_time(e, t_prev))?;
    let mut residual: Vec<F> = (0..d).map(|i| x[i] - x_prev[i] - dt * drift[i]).collect();
    factor.solve(&mut residual);
    for r in residual.iter_mut() {
        *r = -*r / dt;
    }
    Ok(residual)
}

fn at_time<F: Scalar>(err: Error, t: F) -> Error {
    match err {
        Error::NotPositiveDefinite { context, .. } => Error::NotPositiveDefinite {
            t: t.as_f64(),
            context,
        },
        other => other,
    }
}
