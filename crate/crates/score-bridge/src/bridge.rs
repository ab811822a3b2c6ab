//! Proposal bridge processes pinned at x0 and xT.
//!
//! Two score-driven proposals and three classical baselines:
//!
//! * `LearnedBackward` — starts at xT and runs the time-reversal of the
//!   unconditioned diffusion, with drift
//!   b(t, z) = −f(T−t, z) + Σ(T−t, z) s(T−t, z) + ∇·Σ(T−t, z) built from a
//!   (learned or exact) transition score s.
//! * `LearnedForward` — runs forward with the reconstructed conditioned
//!   drift f + Σ(s* − s), where s* is a second-stage score of the bridge
//!   marginal.
//! * `ForwardDiffusion` — the unconditioned drift f; the endpoint stays free
//!   and is absorbed by the importance weight.
//! * `ModifiedDiffusionBridge` — the Brownian-bridge pull (xT − x)/(T − t).
//! * `ClarkDelyonHu` — f(t, x) + (xT − x)/(T − t).
//!
//! All pinned kinds use the modified Euler–Maruyama scheme: step m scales the
//! usual noise covariance δt·Σ by (T−t_m)/(T−t_{m−1}), which tapers the
//! variance near the pinned endpoint, and the final state is set to the
//! constraint exactly. The baselines share the same scheme so comparisons
//! isolate the drift choice. Transition log-densities of every kind are
//! evaluable, which is what the importance sampler needs.

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::nn::ScoreFunction;
use crate::rng::RngSource;
use crate::scalar::Scalar;
use crate::sde::{DiffusionModel, Direction, PathEnsemble, TimeGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProposalKind {
    LearnedBackward,
    LearnedForward,
    ForwardDiffusion,
    ModifiedDiffusionBridge,
    ClarkDelyonHu,
}

impl ProposalKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::LearnedBackward => "learned_backward",
            Self::LearnedForward => "learned_forward",
            Self::ForwardDiffusion => "forward_diffusion",
            Self::ModifiedDiffusionBridge => "modified_diffusion_bridge",
            Self::ClarkDelyonHu => "clark_delyon_hu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "learned_backward" => Ok(Self::LearnedBackward),
            "learned_forward" => Ok(Self::LearnedForward),
            "forward_diffusion" => Ok(Self::ForwardDiffusion),
            "modified_diffusion_bridge" => Ok(Self::ModifiedDiffusionBridge),
            "clark_delyon_hu" => Ok(Self::ClarkDelyonHu),
            other => Err(Error::InvalidInput(format!("unknown proposal kind '{other}'"))),
        }
    }

    /// Index direction of the paths this proposal simulates.
    pub fn native_direction(&self) -> Direction {
        match self {
            Self::LearnedBackward => Direction::Backward,
            _ => Direction::Forward,
        }
    }

    /// Whether both endpoints are set to the constraints exactly.
    pub fn pins_endpoint(&self) -> bool {
        !matches!(self, Self::ForwardDiffusion)
    }
}

/// A simulatable proposal for the diffusion bridge from x0 to x_terminal.
pub struct BridgeProposal<'a, F: Scalar, M: DiffusionModel<F> + ?Sized> {
    kind: ProposalKind,
    model: &'a M,
    grid: TimeGrid<F>,
    x0: Vec<F>,
    x_terminal: Vec<F>,
    backward_score: Option<&'a dyn ScoreFunction<F>>,
    forward_score: Option<&'a dyn ScoreFunction<F>>,
}

impl<'a, F: Scalar, M: DiffusionModel<F> + ?Sized> BridgeProposal<'a, F, M> {
    fn validate_endpoints(model: &M, x0: &[F], x_terminal: &[F]) -> Result<()> {
        let d = model.dim();
        if x0.len() != d || x_terminal.len() != d {
            return Err(Error::InvalidInput(format!(
                "endpoints must have dimension {d}"
            )));
        }
        if !x0.iter().chain(x_terminal).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("endpoints must be finite".into()));
        }
        Ok(())
    }

    /// A baseline proposal (forward diffusion, MDB or CDH).
    pub fn baseline(
        kind: ProposalKind,
        model: &'a M,
        grid: TimeGrid<F>,
        x0: Vec<F>,
        x_terminal: Vec<F>,
    ) -> Result<Self> {
        if matches!(
            kind,
            ProposalKind::LearnedBackward | ProposalKind::LearnedForward
        ) {
            return Err(Error::InvalidInput(format!(
                "{} needs score functions; use the dedicated constructor",
                kind.label()
            )));
        }
        Self::validate_endpoints(model, &x0, &x_terminal)?;
        Ok(Self {
            kind,
            model,
            grid,
            x0,
            x_terminal,
            backward_score: None,
            forward_score: None,
        })
    }

    /// Backward bridge driven by a transition-score approximation.
    pub fn backward(
        model: &'a M,
        grid: TimeGrid<F>,
        x0: Vec<F>,
        x_terminal: Vec<F>,
        score: &'a dyn ScoreFunction<F>,
    ) -> Result<Self> {
        Self::validate_endpoints(model, &x0, &x_terminal)?;
        Ok(Self {
            kind: ProposalKind::LearnedBackward,
            model,
            grid,
            x0,
            x_terminal,
            backward_score: Some(score),
            forward_score: None,
        })
    }

    /// Forward bridge driven by both learning stages.
    pub fn forward(
        model: &'a M,
        grid: TimeGrid<F>,
        x0: Vec<F>,
        x_terminal: Vec<F>,
        backward_score: &'a dyn ScoreFunction<F>,
        forward_score: &'a dyn ScoreFunction<F>,
    ) -> Result<Self> {
        Self::validate_endpoints(model, &x0, &x_terminal)?;
        Ok(Self {
            kind: ProposalKind::LearnedForward,
            model,
            grid,
            x0,
            x_terminal,
            backward_score: Some(backward_score),
            forward_score: Some(forward_score),
        })
    }

    pub fn kind(&self) -> ProposalKind {
        self.kind
    }

    pub fn model(&self) -> &'a M {
        self.model
    }

    pub fn grid(&self) -> &TimeGrid<F> {
        &self.grid
    }

    pub fn x0(&self) -> &[F] {
        &self.x0
    }

    pub fn x_terminal(&self) -> &[F] {
        &self.x_terminal
    }

    /// Drift of this proposal in its native time direction, evaluated for a
    /// whole batch of states at once (`states` and `out` are n × d).
    /// For `LearnedBackward` the time argument is the backward clock.
    fn drift_batch(&self, t: F, states: &[F], out: &mut [F]) -> Result<()> {
        let d = self.model.dim();
        let n = states.len() / d;
        let horizon = self.grid.horizon();
        match self.kind {
            ProposalKind::LearnedBackward => {
                let score = self.backward_score.expect("validated at construction");
                let fwd_t = horizon - t;
                let mut s = vec![F::zero(); n * d];
                score.score_batch(fwd_t, states, d, &mut s);
                let mut f = vec![F::zero(); d];
                let mut sig_sq = vec![F::zero(); d * d];
                let mut div = vec![F::zero(); d];
                let mut sigma_s = vec![F::zero(); d];
                for p in 0..n {
                    let z = &states[p * d..(p + 1) * d];
                    self.model.drift(fwd_t, z, &mut f);
                    self.model.sigma_sq(fwd_t, z, &mut sig_sq);
                    self.model.div_sigma_sq(fwd_t, z, &mut div);
                    linalg::mat_vec(&sig_sq, &s[p * d..(p + 1) * d], d, &mut sigma_s);
                    let o = &mut out[p * d..(p + 1) * d];
                    for i in 0..d {
                        o[i] = -f[i] + sigma_s[i] + div[i];
                    }
                }
            }
            ProposalKind::LearnedForward => {
                let backward = self.backward_score.expect("validated at construction");
                let forward = self.forward_score.expect("validated at construction");
                let mut s_bwd = vec![F::zero(); n * d];
                let mut s_fwd = vec![F::zero(); n * d];
                backward.score_batch(t, states, d, &mut s_bwd);
                forward.score_batch(t, states, d, &mut s_fwd);
                let mut f = vec![F::zero(); d];
                let mut sig_sq = vec![F::zero(); d * d];
                let mut diff = vec![F::zero(); d];
                let mut sigma_diff = vec![F::zero(); d];
                for p in 0..n {
                    let x = &states[p * d..(p + 1) * d];
                    self.model.drift(t, x, &mut f);
                    self.model.sigma_sq(t, x, &mut sig_sq);
                    for i in 0..d {
                        diff[i] = s_fwd[p * d + i] - s_bwd[p * d + i];
                    }
                    linalg::mat_vec(&sig_sq, &diff, d, &mut sigma_diff);
                    let o = &mut out[p * d..(p + 1) * d];
                    for i in 0..d {
                        o[i] = f[i] + sigma_diff[i];
                    }
                }
            }
            ProposalKind::ForwardDiffusion => {
                for p in 0..n {
                    let x = &states[p * d..(p + 1) * d];
                    self.model.drift(t, x, &mut out[p * d..(p + 1) * d]);
                }
            }
            ProposalKind::ModifiedDiffusionBridge | ProposalKind::ClarkDelyonHu => {
                let remaining = horizon - t;
                if !(remaining > F::zero()) {
                    return Err(Error::InvalidInput(format!(
                        "bridge drift singular at t = {t}"
                    )));
                }
                let mut f = vec![F::zero(); d];
                let with_f = self.kind == ProposalKind::ClarkDelyonHu;
                for p in 0..n {
                    let x = &states[p * d..(p + 1) * d];
                    if with_f {
                        self.model.drift(t, x, &mut f);
                    }
                    let o = &mut out[p * d..(p + 1) * d];
                    for i in 0..d {
                        let pull = (self.x_terminal[i] - x[i]) / remaining;
                        o[i] = if with_f { f[i] + pull } else { pull };
                    }
                }
            }
        }
        Ok(())
    }

    /// Noise covariance multiplier at step m, (T − t_m)/(T − t_{m−1});
    /// 1 for the free-endpoint forward diffusion.
    fn step_multiplier(&self, m: usize) -> F {
        if self.kind == ProposalKind::ForwardDiffusion {
            return F::one();
        }
        let horizon = self.grid.horizon();
        (horizon - self.grid.time(m)) / (horizon - self.grid.time(m - 1))
    }

    /// Time at which σ and Σ are evaluated for the step leaving index m−1.
    fn coefficient_time(&self, t_prev: F) -> F {
        match self.kind.native_direction() {
            Direction::Forward => t_prev,
            Direction::Backward => self.grid.horizon() - t_prev,
        }
    }
}

/// Drift of the time-reversed process built from a transition score:
/// −f(T−t, z) + Σ(T−t, z) s(T−t, z) + ∇·Σ(T−t, z).
pub fn backward_drift<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    score: &dyn ScoreFunction<F>,
    model: &M,
    horizon: F,
    t: F,
    z: &[F],
) -> Vec<F> {
    let d = model.dim();
    let fwd_t = horizon - t;
    let mut s = vec![F::zero(); d];
    score.score(fwd_t, z, &mut s);
    let mut f = vec![F::zero(); d];
    model.drift(fwd_t, z, &mut f);
    let sig_sq = model.sigma_sq_vec(fwd_t, z);
    let mut sigma_s = vec![F::zero(); d];
    linalg::mat_vec(&sig_sq, &s, d, &mut sigma_s);
    let div = model.div_sigma_sq_vec(fwd_t, z);
    (0..d).map(|i| -f[i] + sigma_s[i] + div[i]).collect()
}

/// Drift of the reconstructed forward bridge,
/// −b(T−t, x) + Σ(t, x) s*(t, x) + ∇·Σ(t, x), where b is the backward drift
/// of the first learning stage. Algebraically equal to
/// f(t, x) + Σ(t, x){s*(t, x) − s(t, x)}.
pub fn forward_bridge_drift<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    forward_score: &dyn ScoreFunction<F>,
    backward_score: &dyn ScoreFunction<F>,
    model: &M,
    horizon: F,
    t: F,
    x: &[F],
) -> Vec<F> {
    let d = model.dim();
    let b = backward_drift(backward_score, model, horizon, horizon - t, x);
    let mut s_star = vec![F::zero(); d];
    forward_score.score(t, x, &mut s_star);
    let sig_sq = model.sigma_sq_vec(t, x);
    let mut sigma_s = vec![F::zero(); d];
    linalg::mat_vec(&sig_sq, &s_star, d, &mut sigma_s);
    let div = model.div_sigma_sq_vec(t, x);
    (0..d).map(|i| -b[i] + sigma_s[i] + div[i]).collect()
}

/// Drift of a classical proposal at (t, x).
pub fn baseline_drift<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    kind: ProposalKind,
    model: &M,
    t: F,
    x: &[F],
    x_terminal: &[F],
    horizon: F,
) -> Result<Vec<F>> {
    let d = model.dim();
    match kind {
        ProposalKind::ForwardDiffusion => Ok(model.drift_vec(t, x)),
        ProposalKind::ModifiedDiffusionBridge | ProposalKind::ClarkDelyonHu => {
            let remaining = horizon - t;
            if !(remaining > F::zero()) {
                return Err(Error::InvalidInput(format!(
                    "bridge drift singular at t = {t} (horizon {horizon})"
                )));
            }
            let mut out = vec![F::zero(); d];
            if kind == ProposalKind::ClarkDelyonHu {
                model.drift(t, x, &mut out);
            }
            for i in 0..d {
                out[i] += (x_terminal[i] - x[i]) / remaining;
            }
            Ok(out)
        }
        other => Err(Error::InvalidInput(format!(
            "{} is not a baseline",
            other.label()
        ))),
    }
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

fn simulate_scheme<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    prop: &BridgeProposal<'_, F, M>,
    n_paths: usize,
    src: RngSource,
    first_stream: u64,
) -> Result<PathEnsemble<F>> {
    if n_paths == 0 {
        return Err(Error::InvalidInput("need at least one path".into()));
    }
    let model = prop.model;
    let d = model.dim();
    let grid = &prop.grid;
    let steps = grid.steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let direction = prop.kind.native_direction();
    let (start, end) = match direction {
        Direction::Forward => (&prop.x0, &prop.x_terminal),
        Direction::Backward => (&prop.x_terminal, &prop.x0),
    };
    let mut ens = PathEnsemble::zeroed(grid.clone(), d, n_paths, direction);
    for p in 0..n_paths {
        ens.state_mut(p, 0).copy_from_slice(start);
    }
    let mut rngs: Vec<_> = (0..n_paths)
        .map(|p| src.stream(first_stream + p as u64))
        .collect();
    let mut prev = vec![F::zero(); n_paths * d];
    let mut drifts = vec![F::zero(); n_paths * d];
    let mut sig = vec![F::zero(); d * d];
    let mut dw = vec![F::zero(); d];
    let mut noise = vec![F::zero(); d];
    let mut projections = 0usize;
    // Pinned kinds simulate indices 1..M−1; the forward diffusion runs the
    // plain scheme over the same indices with its endpoint left free.
    for m in 1..steps {
        let t_prev = grid.time(m - 1);
        ens.gather(m - 1, &mut prev);
        prop.drift_batch(t_prev, &prev, &mut drifts)?;
        let root_mult = prop.step_multiplier(m).sqrt();
        let coeff_t = prop.coefficient_time(t_prev);
        for p in 0..n_paths {
            let x = &prev[p * d..(p + 1) * d];
            model.sigma(coeff_t, x, &mut sig);
            for w in dw.iter_mut() {
                *w = sqrt_dt * F::standard_normal(&mut rngs[p]);
            }
            linalg::mat_vec(&sig, &dw, d, &mut noise);
            let next = ens.state_mut(p, m);
            for i in 0..d {
                next[i] = x[i] + dt * drifts[p * d + i] + root_mult * noise[i];
            }
            if model.project_state(next) {
                projections += 1;
            }
            check_finite(ens.state(p, m), m, p)?;
        }
    }
    // Final index: the pinned constraint, or the target endpoint for the
    // free-endpoint proposal (its last transition lives in the weight).
    for p in 0..n_paths {
        ens.state_mut(p, steps).copy_from_slice(end);
    }
    ens.add_projection_events(projections);
    Ok(ens)
}

/// Simulate the backward score-driven bridge: Ẑ_0 = xT, modified EM steps
/// for m = 1..M−1, and Ẑ_T = x0 exactly.
pub fn simulate_backward_bridge<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    prop: &BridgeProposal<'_, F, M>,
    n_paths: usize,
    src: RngSource,
) -> Result<PathEnsemble<F>> {
    if prop.kind != ProposalKind::LearnedBackward {
        return Err(Error::InvalidInput(format!(
            "simulate_backward_bridge needs a learned_backward proposal, got {}",
            prop.kind.label()
        )));
    }
    simulate_scheme(prop, n_paths, src, 0)
}

/// Simulate any proposal kind in its native direction.
pub fn simulate_proposal<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    prop: &BridgeProposal<'_, F, M>,
    n_paths: usize,
    src: RngSource,
) -> Result<PathEnsemble<F>> {
    simulate_scheme(prop, n_paths, src, 0)
}

pub(crate) fn simulate_proposal_streams<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    prop: &BridgeProposal<'_, F, M>,
    n_paths: usize,
    src: RngSource,
    first_stream: u64,
) -> Result<PathEnsemble<F>> {
    simulate_scheme(prop, n_paths, src, first_stream)
}

fn expect_states<F: Scalar>(got: &[F], want: &[F], what: &str, path: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::EndpointMismatch(format!(
            "path {path}: {what} is {:?}, expected {:?}",
            got.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
            want.iter().map(|v| v.as_f64()).collect::<Vec<_>>()
        )))
    }
}

/// Batched log proposal densities for a whole ensemble simulated by this
/// proposal: one value per path, summing the m = 1..M−1 transition terms.
pub(crate) fn proposal_log_density_batch<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    prop: &BridgeProposal<'_, F, M>,
    ens: &PathEnsemble<F>,
) -> Result<Vec<F>> {
    let model = prop.model;
    let d = model.dim();
    let grid = &prop.grid;
    if ens.grid() != grid || ens.dim() != d {
        return Err(Error::InvalidInput(
            "ensemble grid or dimension does not match the proposal".into(),
        ));
    }
    if ens.direction() != prop.kind.native_direction() {
        return Err(Error::InvalidInput(format!(
            "{} expects {:?} paths, got {:?}",
            prop.kind.label(),
            prop.kind.native_direction(),
            ens.direction()
        )));
    }
    let steps = grid.steps();
    let dt = grid.dt();
    let n = ens.n_paths();
    let (start, end) = match prop.kind.native_direction() {
        Direction::Forward => (&prop.x0, &prop.x_terminal),
        Direction::Backward => (&prop.x_terminal, &prop.x0),
    };
    for p in 0..n {
        expect_states(ens.state(p, 0), start, "initial state", p)?;
        if prop.kind.pins_endpoint() {
            expect_states(ens.state(p, steps), end, "final state", p)?;
        }
    }
    let mut log_density = vec![F::zero(); n];
    let mut prev = vec![F::zero(); n * d];
    let mut cur = vec![F::zero(); n * d];
    let mut drifts = vec![F::zero(); n * d];
    let mut centered = vec![F::zero(); d];
    for m in 1..steps {
        let t_prev = grid.time(m - 1);
        ens.gather(m - 1, &mut prev);
        ens.gather(m, &mut cur);
        prop.drift_batch(t_prev, &prev, &mut drifts)?;
        let scale = dt * prop.step_multiplier(m);
        let coeff_t = prop.coefficient_time(t_prev);
        for p in 0..n {
            let x_prev = &prev[p * d..(p + 1) * d];
            let sig_sq = model.sigma_sq_vec(coeff_t, x_prev);
            let factor = SpdFactor::new(&sig_sq, d)?;
            for i in 0..d {
                centered[i] = cur[p * d + i] - x_prev[i] - dt * drifts[p * d + i];
            }
            log_density[p] += linalg::gaussian_log_density(&factor, scale, &centered);
        }
    }
    Ok(log_density)
}

/// Log density of one simulated path under its proposal law.
pub fn proposal_log_density<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    prop: &BridgeProposal<'_, F, M>,
    ens: &PathEnsemble<F>,
    path: usize,
) -> Result<F> {
    let single = ens.single_path(path)?;
    Ok(proposal_log_density_batch(prop, &single)?[0])
}
