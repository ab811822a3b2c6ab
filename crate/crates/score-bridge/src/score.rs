//! Score-matching objectives and training loops.
//!
//! Stage one fits s_φ(t, x) to the score of the transition density along
//! unconditioned forward paths: the loss is
//! (δt/2) Σ_m E ‖s_φ(t_m, X_m) − g_M(t_{m−1}, X_{m−1}, t_m, X_m)‖²_{Σ(t_m, X_m)},
//! where g_M is the Gaussian one-step transition score. Its parameter
//! gradient, δt Σ_m E[(∇_φ s_φᵀ Σ)(s_φ − g_M)], is what reverse-mode
//! differentiation yields when the path states are held constant, and is
//! estimated unbiasedly from freshly simulated paths every iteration.
//!
//! Stage two fits the bridge-marginal score ŝ*_φ on paths of the backward
//! proposal bridge: same quadratic form, but the target is the score of the
//! modified-EM backward transition (noise covariance carries the
//! (T−t_m)/(T−t_{m−1}) multiplier) and the candidate is read at reversed
//! time ŝ*_φ(T−t, Ẑ_t). The final backward transition has a vanishing
//! multiplier and is excluded; that endpoint is pinned anyway.

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::bridge::{self, BridgeProposal};
use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::nn::{self, adam_step, AdamParams, AdamState, Arch, ScoreFunction, ScoreNet};
use crate::rng::{Prng, RngSource};
use crate::scalar::Scalar;
use crate::sde::{self, DiffusionModel, Direction, PathEnsemble, TimeGrid};

/// Where training trajectories start.
pub enum InitialState<F: Scalar> {
    /// Every path starts at the same state.
    Fixed(Vec<F>),
    /// Starts are drawn per path; the net must be conditioned on x0.
    /// With `pool = Some(k)`, each iteration draws only k distinct starts
    /// and assigns them to paths round-robin.
    Sampled {
        sampler: Arc<dyn Fn(&mut Prng) -> Vec<F> + Send + Sync>,
        pool: Option<usize>,
    },
}

impl<F: Scalar> Clone for InitialState<F> {
    fn clone(&self) -> Self {
        match self {
            Self::Fixed(x) => Self::Fixed(x.clone()),
            Self::Sampled { sampler, pool } => Self::Sampled {
                sampler: Arc::clone(sampler),
                pool: *pool,
            },
        }
    }
}

impl<F: Scalar> std::fmt::Debug for InitialState<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Fixed(x) => f.debug_tuple("Fixed").field(x).finish(),
            Self::Sampled { pool, .. } => f.debug_struct("Sampled").field("pool", pool).finish(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig<F: Scalar> {
    pub iterations: usize,
    pub paths_per_iter: usize,
    pub grid: TimeGrid<F>,
    pub x0: InitialState<F>,
    pub seed: RngSource,
    pub adam: AdamParams<F>,
    pub arch: Arch,
}

/// Per-iteration loss record of one training run.
#[derive(Clone, Debug)]
pub struct TrainReport<F> {
    pub losses: Vec<F>,
    pub wall_clock: Duration,
    pub params_checksum: u64,
}

impl<F: Scalar> TrainReport<F> {
    /// Two-column CSV: iteration, loss.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "iteration,loss")?;
        for (i, loss) in self.losses.iter().enumerate() {
            writeln!(w, "{},{}", i, loss)?;
        }
        Ok(())
    }
}

fn params_checksum<F: Scalar>(params: &[F]) -> u64 {
    // FNV-1a over the f64 bit patterns
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for p in params {
        for byte in p.as_f64().to_bits().to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x1000_0000_01b3);
        }
    }
    hash
}

struct LossAccumulator<'a, F: Scalar> {
    net: &'a ScoreNet<F>,
    grad: Option<&'a mut [F]>,
    loss: F,
    trace: nn::ForwardTrace<F>,
    residual: Vec<F>,
    weighted: Vec<F>,
}

impl<'a, F: Scalar> LossAccumulator<'a, F> {
    fn new(net: &'a ScoreNet<F>, grad: Option<&'a mut [F]>) -> Self {
        Self {
            net,
            grad,
            loss: F::zero(),
            trace: nn::ForwardTrace::new(),
            residual: Vec::new(),
            weighted: Vec::new(),
        }
    }

    /// Add one grid interval's mean weighted residual: the candidate net is
    /// evaluated at `candidate_time` on `states`, compared against `targets`,
    /// and the squared norm is weighted by the per-path matrices `weights`.
    fn add_interval(
        &mut self,
        interval: usize,
        dt: F,
        candidate_time: F,
        states: &[F],
        x0s: Option<&[F]>,
        targets: &[F],
        weights: &[F],
        dim: usize,
    ) -> Result<()> {
        let Self {
            net,
            grad,
            loss,
            trace,
            residual,
            weighted,
        } = self;
        let n = states.len() / dim;
        let n_f = F::cast(n);
        let half = F::cast(0.5);
        residual.resize(n * dim, F::zero());
        weighted.resize(n * dim, F::zero());
        let out = net.forward_traced(trace, candidate_time, states, x0s)?;
        for p in 0..n {
            for i in 0..dim {
                residual[p * dim + i] = out[p * dim + i] - targets[p * dim + i];
            }
            linalg::mat_vec(
                &weights[p * dim * dim..(p + 1) * dim * dim],
                &residual[p * dim..(p + 1) * dim],
                dim,
                &mut weighted[p * dim..(p + 1) * dim],
            );
            let contrib = linalg::dot(
                &residual[p * dim..(p + 1) * dim],
                &weighted[p * dim..(p + 1) * dim],
            );
            if !contrib.is_finite() {
                return Err(Error::NonFiniteLoss { interval, path: p });
            }
            *loss += dt * half * contrib / n_f;
        }
        if let Some(grad) = grad.as_deref_mut() {
            // d loss / d s_φ = (δt/n) Σ (s_φ − g); Σ is symmetric
            let scale = dt / n_f;
            for v in weighted.iter_mut() {
                *v *= scale;
            }
            net.backward(trace, weighted, grad);
        }
        Ok(())
    }
}

fn backward_loss_impl<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    net: &ScoreNet<F>,
    ensemble: &PathEnsemble<F>,
    model: &M,
    grad: Option<&mut [F]>,
) -> Result<F> {
    if ensemble.direction() != Direction::Forward {
        return Err(Error::InvalidInput(
            "stage-one loss needs forward-time ensembles".into(),
        ));
    }
    let d = model.dim();
    let n = ensemble.n_paths();
    let grid = ensemble.grid().clone();
    let dt = grid.dt();
    let x0s: Option<Vec<F>> = net.arch().conditioned_on_x0.then(|| {
        let mut buf = vec![F::zero(); n * d];
        ensemble.gather(0, &mut buf);
        buf
    });
    let mut acc = LossAccumulator::new(net, grad);
    let mut prev = vec![F::zero(); n * d];
    let mut cur = vec![F::zero(); n * d];
    let mut targets = vec![F::zero(); n * d];
    let mut weights = vec![F::zero(); n * d * d];
    let mut drift = vec![F::zero(); d];
    for m in 1..=grid.steps() {
        let t_prev = grid.time(m - 1);
        let t = grid.time(m);
        ensemble.gather(m - 1, &mut prev);
        ensemble.gather(m, &mut cur);
        for p in 0..n {
            let x_prev = &prev[p * d..(p + 1) * d];
            let x = &cur[p * d..(p + 1) * d];
            model.drift(t_prev, x_prev, &mut drift);
            let sig_sq = model.sigma_sq_vec(t_prev, x_prev);
            let factor = SpdFactor::new(&sig_sq, d)?;
            let g = &mut targets[p * d..(p + 1) * d];
            for i in 0..d {
                g[i] = x[i] - x_prev[i] - dt * drift[i];
            }
            factor.solve(g);
            for gi in g.iter_mut() {
                *gi = -*gi / dt;
            }
            model.sigma_sq(t, x, &mut weights[p * d * d..(p + 1) * d * d]);
        }
        acc.add_interval(m, dt, t, &cur, x0s.as_deref(), &targets, &weights, d)?;
    }
    Ok(acc.loss)
}

/// Empirical stage-one loss of a forward ensemble.
pub fn backward_loss_batch<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    net: &ScoreNet<F>,
    ensemble: &PathEnsemble<F>,
    model: &M,
) -> Result<F> {
    backward_loss_impl(net, ensemble, model, None)
}

/// Stage-one loss and its reverse-mode parameter gradient.
pub fn backward_loss_gradient<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    net: &ScoreNet<F>,
    ensemble: &PathEnsemble<F>,
    model: &M,
) -> Result<(F, Vec<F>)> {
    let mut grad = vec![F::zero(); net.params().len()];
    let loss = backward_loss_impl(net, ensemble, model, Some(&mut grad))?;
    Ok((loss, grad))
}

fn forward_loss_impl<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    net: &ScoreNet<F>,
    ensemble: &PathEnsemble<F>,
    model: &M,
    backward: &dyn ScoreFunction<F>,
    grad: Option<&mut [F]>,
) -> Result<F> {
    if ensemble.direction() != Direction::Backward {
        return Err(Error::InvalidInput(
            "stage-two loss needs backward-bridge ensembles".into(),
        ));
    }
    if net.arch().conditioned_on_x0 {
        return Err(Error::InvalidInput(
            "the stage-two net is not conditioned on x0".into(),
        ));
    }
    let d = model.dim();
    let n = ensemble.n_paths();
    let grid = ensemble.grid().clone();
    let horizon = grid.horizon();
    let dt = grid.dt();
    let mut acc = LossAccumulator::new(net, grad);
    let mut prev = vec![F::zero(); n * d];
    let mut cur = vec![F::zero(); n * d];
    let mut scores = vec![F::zero(); n * d];
    let mut targets = vec![F::zero(); n * d];
    let mut weights = vec![F::zero(); n * d * d];
    let mut f = vec![F::zero(); d];
    let mut div = vec![F::zero(); d];
    let mut sigma_s = vec![F::zero(); d];
    // The final transition (m = M) has multiplier 0 and no density; the
    // endpoint it would fit is pinned.
    for m in 1..grid.steps() {
        let t_prev = grid.time(m - 1);
        let t = grid.time(m);
        let fwd_t_prev = horizon - t_prev;
        let fwd_t = horizon - t;
        let multiplier = (horizon - t) / (horizon - t_prev);
        let scale = dt * multiplier;
        ensemble.gather(m - 1, &mut prev);
        ensemble.gather(m, &mut cur);
        backward.score_batch(fwd_t_prev, &prev, d, &mut scores);
        for p in 0..n {
            let z_prev = &prev[p * d..(p + 1) * d];
            let z = &cur[p * d..(p + 1) * d];
            model.drift(fwd_t_prev, z_prev, &mut f);
            let sig_sq_prev = model.sigma_sq_vec(fwd_t_prev, z_prev);
            model.div_sigma_sq(fwd_t_prev, z_prev, &mut div);
            linalg::mat_vec(&sig_sq_prev, &scores[p * d..(p + 1) * d], d, &mut sigma_s);
            let factor = SpdFactor::new(&sig_sq_prev, d)?;
            let g = &mut targets[p * d..(p + 1) * d];
            for i in 0..d {
                let b = -f[i] + sigma_s[i] + div[i];
                g[i] = z[i] - z_prev[i] - dt * b;
            }
            factor.solve(g);
            for gi in g.iter_mut() {
                *gi = -*gi / scale;
            }
            model.sigma_sq(t, z, &mut weights[p * d * d..(p + 1) * d * d]);
        }
        acc.add_interval(m, dt, fwd_t, &cur, None, &targets, &weights, d)?;
    }
    Ok(acc.loss)
}

/// Empirical stage-two loss of a backward-bridge ensemble.
pub fn forward_loss_batch<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    net: &ScoreNet<F>,
    ensemble: &PathEnsemble<F>,
    model: &M,
    backward: &dyn ScoreFunction<F>,
) -> Result<F> {
    forward_loss_impl(net, ensemble, model, backward, None)
}

/// Stage-two loss and its reverse-mode parameter gradient.
pub fn forward_loss_gradient<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    net: &ScoreNet<F>,
    ensemble: &PathEnsemble<F>,
    model: &M,
    backward: &dyn ScoreFunction<F>,
) -> Result<(F, Vec<F>)> {
    let mut grad = vec![F::zero(); net.params().len()];
    let loss = forward_loss_impl(net, ensemble, model, backward, Some(&mut grad))?;
    Ok((loss, grad))
}

const DIVERGENCE_FACTOR: f64 = 1e6;

struct TrainLoop<F: Scalar> {
    net: ScoreNet<F>,
    adam: AdamState<F>,
    losses: Vec<F>,
    initial: Option<F>,
    started: Instant,
}

impl<F: Scalar> TrainLoop<F> {
    fn new(config: &TrainConfig<F>) -> Result<Self> {
        let net = ScoreNet::init(config.arch.clone(), config.seed.child(0).seed())?;
        let adam = AdamState::new(net.params().len(), config.adam);
        Ok(Self {
            net,
            adam,
            losses: Vec::with_capacity(config.iterations),
            initial: None,
            started: Instant::now(),
        })
    }

    fn step(&mut self, iteration: usize, loss: F, grad: &[F]) -> Result<()> {
        let initial = *self.initial.get_or_insert(loss);
        if loss > initial * F::cast(DIVERGENCE_FACTOR) {
            return Err(Error::TrainingDiverged {
                iteration,
                loss: loss.as_f64(),
                initial: initial.as_f64(),
                losses: self.losses.iter().map(|l| l.as_f64()).collect(),
            });
        }
        self.losses.push(loss);
        adam_step(self.net.params_mut(), grad, &mut self.adam);
        Ok(())
    }

    fn finish(self) -> (ScoreNet<F>, TrainReport<F>) {
        let checksum = params_checksum(self.net.params());
        let report = TrainReport {
            losses: self.losses,
            wall_clock: self.started.elapsed(),
            params_checksum: checksum,
        };
        (self.net, report)
    }
}

fn draw_starts<F: Scalar>(
    x0: &InitialState<F>,
    dim: usize,
    n_paths: usize,
    src: RngSource,
) -> Result<Vec<F>> {
    match x0 {
        InitialState::Fixed(state) => {
            if state.len() != dim {
                return Err(Error::InvalidInput("x0 dimension mismatch".into()));
            }
            Ok((0..n_paths).flat_map(|_| state.iter().copied()).collect())
        }
        InitialState::Sampled { sampler, pool } => {
            let mut rng = src.stream(0);
            let distinct = pool.unwrap_or(n_paths).min(n_paths).max(1);
            let states: Vec<Vec<F>> = (0..distinct).map(|_| sampler(&mut rng)).collect();
            for s in &states {
                if s.len() != dim {
                    return Err(Error::InvalidInput("sampled x0 dimension mismatch".into()));
                }
            }
            let mut out = Vec::with_capacity(n_paths * dim);
            for p in 0..n_paths {
                out.extend_from_slice(&states[p % distinct]);
            }
            Ok(out)
        }
    }
}

/// Learn the transition score by simulating fresh forward ensembles and
/// descending the stage-one loss. With a sampled x0 source the net is
/// amortized: x0 is drawn per path and fed to the net as a side input.
pub fn train_backward_score<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    model: &M,
    config: &TrainConfig<F>,
) -> Result<(ScoreNet<F>, TrainReport<F>)> {
    if config.paths_per_iter == 0 {
        return Err(Error::InvalidInput("paths_per_iter must be positive".into()));
    }
    if config.arch.dim != model.dim() {
        return Err(Error::InvalidInput(format!(
            "arch dim {} does not match model dim {}",
            config.arch.dim,
            model.dim()
        )));
    }
    let amortized = matches!(config.x0, InitialState::Sampled { .. });
    if amortized != config.arch.conditioned_on_x0 {
        return Err(Error::InvalidInput(
            "a sampled x0 source requires (exactly then) a net conditioned on x0".into(),
        ));
    }
    let mut run = TrainLoop::new(config)?;
    for it in 0..config.iterations {
        let src = config.seed.child(1 + it as u64);
        let starts = draw_starts(&config.x0, model.dim(), config.paths_per_iter, src.child(1))?;
        let ensemble = sde::simulate_forward_from(model, &starts, &config.grid, src.child(0))?;
        let (loss, grad) = backward_loss_gradient(&run.net, &ensemble, model)?;
        run.step(it, loss, &grad)?;
    }
    Ok(run.finish())
}

/// Learn the bridge-marginal score on top of a trained (or exact) backward
/// score, by simulating the backward proposal bridge between `x0` and
/// `x_terminal` and descending the stage-two loss. `config.x0` is unused
/// here; the endpoints come from the arguments.
pub fn train_forward_score<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    model: &M,
    backward: &dyn ScoreFunction<F>,
    x0: &[F],
    x_terminal: &[F],
    config: &TrainConfig<F>,
) -> Result<(ScoreNet<F>, TrainReport<F>)> {
    if config.paths_per_iter == 0 {
        return Err(Error::InvalidInput("paths_per_iter must be positive".into()));
    }
    if config.arch.conditioned_on_x0 {
        return Err(Error::InvalidInput(
            "the stage-two net is not conditioned on x0".into(),
        ));
    }
    let proposal = BridgeProposal::backward(
        model,
        config.grid.clone(),
        x0.to_vec(),
        x_terminal.to_vec(),
        backward,
    )?;
    let mut run = TrainLoop::new(config)?;
    for it in 0..config.iterations {
        let src = config.seed.child(1 + it as u64);
        let ensemble = bridge::simulate_backward_bridge(&proposal, config.paths_per_iter, src)?;
        let (loss, grad) = forward_loss_gradient(&run.net, &ensemble, model, backward)?;
        run.step(it, loss, &grad)?;
    }
    Ok(run.finish())
}
