//! Importance sampling and Markov chain correction of proposal bridges.
//!
//! The target is the law of the time-discretized bridge: the product of the
//! M Euler–Maruyama transition densities from x0 to xT, normalized by the
//! (unknown) discretized transition density p_M(T, xT | 0, x0). A proposal
//! path carries the unnormalized log weight
//! log ω = Σ log p_M(transitions) − log Q̂(path), the mean of the ω is an
//! unbiased estimator of p_M(T, xT | 0, x0), and the same weights drive an
//! independent Metropolis–Hastings chain (accept with min{1, ω°/ω}) and its
//! particle variant (accept on the ratio of density estimators). Everything
//! stays in log space; weights spanning hundreds of nats are routine.

use crate::bridge::{self, BridgeProposal};
use crate::error::{Error, Result};
use crate::rng::RngSource;
use crate::scalar::Scalar;
use crate::sde::{em_log_transition, DiffusionModel, Direction, PathEnsemble};

/// A forward-time ensemble with per-path unnormalized log weights.
#[derive(Clone, Debug)]
pub struct WeightedEnsemble<F> {
    pub ensemble: PathEnsemble<F>,
    pub log_weights: Vec<F>,
    pub log_target_terms: Vec<F>,
    pub log_proposal_terms: Vec<F>,
}

/// log(mean(exp(values))) with max-shift normalization.
pub fn log_mean_exp<F: Scalar>(values: &[F]) -> F {
    debug_assert!(!values.is_empty());
    let max = values.iter().cloned().fold(F::neg_infinity(), F::max);
    if !max.is_finite() {
        return max;
    }
    let sum: F = values.iter().map(|v| (*v - max).exp()).sum();
    max + (sum / F::cast(values.len())).ln()
}

/// Importance weights of an ensemble simulated by `proposal`.
///
/// Backward ensembles are reversed into forward time first; the returned
/// ensemble is always forward-ordered. Fails when a path does not match the
/// pinned endpoints or a weight is not finite.
pub fn importance_weights<F: Scalar, M: DiffusionModel<F> + ?Sized>(
    proposal: &BridgeProposal<'_, F, M>,
    ensemble: PathEnsemble<F>,
) -> Result<WeightedEnsemble<F>> {
    let log_proposal_terms = bridge::proposal_log_density_batch(proposal, &ensemble)?;
    let forward = match ensemble.direction() {
        Direction::Forward => ensemble,
        Direction::Backward => ensemble.reversed(),
    };
    let model = proposal.model();
    let grid = forward.grid().clone();
    let steps = grid.steps();
    let n = forward.n_paths();
    let mut log_target_terms = vec![F::zero(); n];
    for p in 0..n {
        if forward.state(p, 0) != proposal.x0() {
            return Err(Error::EndpointMismatch(format!(
                "path {p} does not start at x0"
            )));
        }
        if forward.state(p, steps) != proposal.x_terminal() {
            return Err(Error::EndpointMismatch(format!(
                "path {p} does not end at x_terminal"
            )));
        }
        let mut acc = F::zero();
        for m in 1..=steps {
            acc += em_log_transition(
                model,
                grid.time(m - 1),
                forward.state(p, m - 1),
                grid.time(m),
                forward.state(p, m),
            )?;
        }
        log_target_terms[p] = acc;
    }
    let log_weights: Vec<F> = log_target_terms
        .iter()
        .zip(&log_proposal_terms)
        .map(|(t, q)| *t - *q)
        .collect();
    for (p, w) in log_weights.iter().enumerate() {
        if w.is_nan() || *w == F::infinity() {
            return Err(Error::NonFiniteWeight {
                path: p,
                detail: format!(
                    "log target {} − log proposal {}",
                    log_target_terms[p].as_f64(),
                    log_proposal_terms[p].as_f64()
                ),
            });
        }
    }
    Ok(WeightedEnsemble {
        ensemble: forward,
        log_weights,
        log_target_terms,
        log_proposal_terms,
    })
}

/// Normalized effective sample size (Σw)²/(n·Σw²) ∈ (0, 1].
pub fn ess_proportion<F: Scalar>(weighted: &WeightedEnsemble<F>) -> Result<F> {
    ess_proportion_of_log_weights(&weighted.log_weights)
}

pub fn ess_proportion_of_log_weights<F: Scalar>(log_weights: &[F]) -> Result<F> {
    if log_weights.is_empty() {
        return Err(Error::DegenerateWeights("no weights".into()));
    }
    let max = log_weights.iter().cloned().fold(F::neg_infinity(), F::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights(
            "all weights are zero in natural scale".into(),
        ));
    }
    let mut sum = F::zero();
    let mut sum_sq = F::zero();
    for lw in log_weights {
        let w = (*lw - max).exp();
        sum += w;
        sum_sq += w * w;
    }
    Ok(sum * sum / (F::cast(log_weights.len()) * sum_sq))
}

/// Log of the unbiased transition density estimator, log{N⁻¹ Σ ω}.
pub fn estimate_log_transition<F: Scalar>(weighted: &WeightedEnsemble<F>) -> F {
    log_mean_exp(&weighted.log_weights)
}

/// Source of independent weighted proposals, the interface the chains run
/// on. Draw i of a batch must use stream `first_stream + i` of `src` so
/// overlapping batches reproduce the same draws.
pub trait LogWeightedProposal<F: Scalar> {
    type Draw: Clone;

    fn propose_batch(
        &self,
        n: usize,
        src: RngSource,
        first_stream: u64,
    ) -> Result<(Vec<Self::Draw>, Vec<F>)>;
}

impl<F: Scalar, M: DiffusionModel<F> + ?Sized> LogWeightedProposal<F>
    for BridgeProposal<'_, F, M>
{
    /// Forward-ordered flat path states, (M+1) × dim.
    type Draw = Vec<F>;

    fn propose_batch(
        &self,
        n: usize,
        src: RngSource,
        first_stream: u64,
    ) -> Result<(Vec<Vec<F>>, Vec<F>)> {
        let ens = bridge::simulate_proposal_streams(self, n, src, first_stream)?;
        let weighted = importance_weights(self, ens)?;
        let draws = (0..n).map(|p| weighted.ensemble.path_states(p)).collect();
        Ok((draws, weighted.log_weights))
    }
}

/// Trace of an independent MH or particle IMH run.
#[derive(Clone, Debug)]
pub struct ChainResult<D, F> {
    /// Chain state after each iteration (initialization excluded).
    pub states: Vec<D>,
    pub accepted: usize,
    pub iterations: usize,
    pub acceptance_rate: F,
    /// Per-iteration transition density estimate of the current state
    /// (particle chains only).
    pub density_estimates: Option<Vec<F>>,
}

/// Independent Metropolis–Hastings targeting the weighted proposal's target:
/// propose fresh, accept with min{1, ω°/ω}.
pub fn imh_chain<F: Scalar, P: LogWeightedProposal<F>>(
    proposal: &P,
    iterations: usize,
    src: RngSource,
) -> Result<ChainResult<P::Draw, F>> {
    if iterations == 0 {
        return Err(Error::InvalidInput("need at least one iteration".into()));
    }
    let (draws, lws) = proposal.propose_batch(iterations + 1, src.child(0), 0)?;
    let mut accept_rng = src.child(1).stream(0);
    let mut current = draws[0].clone();
    let mut current_lw = lws[0];
    let mut states = Vec::with_capacity(iterations);
    let mut accepted = 0usize;
    for i in 1..=iterations {
        let u = F::uniform_unit(&mut accept_rng);
        if u.ln() < lws[i] - current_lw {
            current = draws[i].clone();
            current_lw = lws[i];
            accepted += 1;
        }
        states.push(current.clone());
    }
    Ok(ChainResult {
        states,
        accepted,
        iterations,
        acceptance_rate: F::cast(accepted) / F::cast(iterations),
        density_estimates: None,
    })
}

/// Particle independent Metropolis–Hastings: each iteration draws
/// `n_particles` proposals, selects one with probability proportional to its
/// weight, and accepts on the ratio of the density estimators. With one
/// particle this is exactly [`imh_chain`].
pub fn pimh_chain<F: Scalar, P: LogWeightedProposal<F>>(
    proposal: &P,
    n_particles: usize,
    iterations: usize,
    src: RngSource,
) -> Result<ChainResult<P::Draw, F>> {
    if iterations == 0 || n_particles == 0 {
        return Err(Error::InvalidInput(
            "need at least one iteration and one particle".into(),
        ));
    }
    let mut accept_rng = src.child(1).stream(0);
    let n = n_particles as u64;
    let batch = |i: usize| -> Result<(Vec<P::Draw>, Vec<F>)> {
        proposal.propose_batch(n_particles, src.child(0), i as u64 * n)
    };
    let (draws, lws) = batch(0)?;
    let (mut current, mut current_log_z) =
        select_particle(&draws, &lws, n_particles, &mut accept_rng);
    let mut states = Vec::with_capacity(iterations);
    let mut estimates = Vec::with_capacity(iterations);
    let mut accepted = 0usize;
    for i in 1..=iterations {
        let (draws, lws) = batch(i)?;
        let (candidate, log_z) = select_particle(&draws, &lws, n_particles, &mut accept_rng);
        let u = F::uniform_unit(&mut accept_rng);
        if u.ln() < log_z - current_log_z {
            current = candidate;
            current_log_z = log_z;
            accepted += 1;
        }
        states.push(current.clone());
        estimates.push(current_log_z);
    }
    Ok(ChainResult {
        states,
        accepted,
        iterations,
        acceptance_rate: F::cast(accepted) / F::cast(iterations),
        density_estimates: Some(estimates),
    })
}

/// Weighted selection among one batch of particles; returns the chosen draw
/// and the batch's log density estimate. A single particle is selected
/// without consuming randomness, which makes the one-particle chain
/// bit-identical to plain IMH.
fn select_particle<D: Clone, F: Scalar>(
    draws: &[D],
    lws: &[F],
    n_particles: usize,
    rng: &mut crate::rng::Prng,
) -> (D, F) {
    let log_z = log_mean_exp(lws);
    if n_particles == 1 {
        return (draws[0].clone(), log_z);
    }
    let max = lws.iter().cloned().fold(F::neg_infinity(), F::max);
    let weights: Vec<F> = lws.iter().map(|lw| (*lw - max).exp()).collect();
    let total: F = weights.iter().cloned().sum();
    let u = F::uniform_unit(rng) * total;
    let mut acc = F::zero();
    let mut chosen = n_particles - 1;
    for (k, w) in weights.iter().enumerate() {
        acc += *w;
        if u < acc {
            chosen = k;
            break;
        }
    }
    (draws[chosen].clone(), log_z)
}

/// Per-repetition diagnostics fed into [`diagnostics`].
#[derive(Clone, Copy, Debug, Default)]
pub struct RepetitionMetrics<F> {
    pub ess_proportion: Option<F>,
    pub acceptance_rate: Option<F>,
    pub log_density: Option<F>,
}

/// Sample mean and (unbiased) variance; the variance is absent with fewer
/// than two observations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanVar<F> {
    pub mean: F,
    pub variance: Option<F>,
    pub count: usize,
}

fn mean_var<F: Scalar>(values: &[F]) -> Option<MeanVar<F>> {
    if values.is_empty() {
        return None;
    }
    let n = F::cast(values.len());
    let mean = values.iter().cloned().sum::<F>() / n;
    let variance = (values.len() >= 2).then(|| {
        values
            .iter()
            .map(|v| {
                let d = *v - mean;
                d * d
            })
            .sum::<F>()
            / (n - F::one())
    });
    Some(MeanVar {
        mean,
        variance,
        count: values.len(),
    })
}

#[derive(Clone, Debug)]
pub struct DiagnosticsSummary<F> {
    pub ess: Option<MeanVar<F>>,
    pub acceptance: Option<MeanVar<F>>,
    pub log_density: Option<MeanVar<F>>,
    /// Mean squared error of the log density estimates against the supplied
    /// ground truth; absent when no truth is given.
    pub mse: Option<F>,
}

/// Summarize repeated runs; `truth` is the closed-form log transition
/// density when the model admits one.
pub fn diagnostics<F: Scalar>(
    repetitions: &[RepetitionMetrics<F>],
    truth: Option<F>,
) -> DiagnosticsSummary<F> {
    let collect = |get: fn(&RepetitionMetrics<F>) -> Option<F>| -> Vec<F> {
        repetitions.iter().filter_map(get).collect()
    };
    let ess_values = collect(|r| r.ess_proportion);
    let acc_values = collect(|r| r.acceptance_rate);
    let log_values = collect(|r| r.log_density);
    let mse = truth.and_then(|t| {
        if log_values.is_empty() {
            None
        } else {
            Some(
                log_values
                    .iter()
                    .map(|v| {
                        let d = *v - t;
                        d * d
                    })
                    .sum::<F>()
                    / F::cast(log_values.len()),
            )
        }
    });
    DiagnosticsSummary {
        ess: mean_var(&ess_values),
        acceptance: mean_var(&acc_values),
        log_density: mean_var(&log_values),
        mse,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ess_hand_values() {
        // equal weights
        let lw = vec![0.3f64; 16];
        assert_eq!(ess_proportion_of_log_weights(&lw).unwrap(), 1.0);
        // weights (1, 1, 2) -> 16/18
        let lw = [0.0f64, 0.0, 2.0f64.ln()];
        assert_relative_eq!(
            ess_proportion_of_log_weights(&lw).unwrap(),
            8.0 / 9.0,
            max_relative = 1e-14
        );
        // one dominant weight among 1024
        let mut lw = vec![0.0f64; 1024];
        lw[17] = 60.0;
        let ess = ess_proportion_of_log_weights(&lw).unwrap();
        assert_relative_eq!(ess, 1.0 / 1024.0, max_relative = 1e-6);
    }

    #[test]
    fn ess_handles_extreme_log_weights() {
        let lw = [700.0f64, -700.0, 0.0];
        let ess = ess_proportion_of_log_weights(&lw).unwrap();
        assert!(ess > 0.0 && ess <= 1.0);
        assert_relative_eq!(ess, 1.0 / 3.0, max_relative = 1e-9);
        assert!(ess_proportion_of_log_weights(&[f64::NEG_INFINITY; 4]).is_err());
    }

    #[test]
    fn log_mean_exp_constant_weights() {
        let lw = [3.25f64; 10];
        assert_relative_eq!(log_mean_exp(&lw), 3.25, max_relative = 1e-14);
    }

    #[test]
    fn diagnostics_hand_values() {
        let reps: Vec<RepetitionMetrics<f64>> = [0.0, 2.0]
            .iter()
            .map(|v| RepetitionMetrics {
                ess_proportion: Some(0.5),
                acceptance_rate: None,
                log_density: Some(*v),
            })
            .collect();
        let summary = diagnostics(&reps, Some(1.0));
        assert_eq!(summary.mse, Some(1.0));
        let ess = summary.ess.unwrap();
        assert_eq!(ess.mean, 0.5);
        assert_eq!(ess.variance, Some(0.0));
        assert!(summary.acceptance.is_none());
        // truth omitted -> no mse
        assert!(diagnostics(&reps, None).mse.is_none());
        // single repetition -> no variance
        let one = diagnostics(&reps[..1], Some(1.0));
        assert!(one.log_density.unwrap().variance.is_none());
    }

    /// Two-atom toy: target mass γ over {0, 1}, proposal q.
    struct TwoAtom {
        log_gamma: [f64; 2],
        q: [f64; 2],
    }

    impl LogWeightedProposal<f64> for TwoAtom {
        type Draw = usize;

        fn propose_batch(
            &self,
            n: usize,
            src: RngSource,
            first_stream: u64,
        ) -> Result<(Vec<usize>, Vec<f64>)> {
            let mut draws = Vec::with_capacity(n);
            let mut lws = Vec::with_capacity(n);
            for i in 0..n {
                let mut rng = src.stream(first_stream + i as u64);
                let state = usize::from(f64::uniform_unit(&mut rng) < self.q[1]);
                draws.push(state);
                lws.push(self.log_gamma[state] - self.q[state].ln());
            }
            Ok((draws, lws))
        }
    }

    #[test]
    fn estimator_is_exact_when_proposal_matches_target() {
        // γ = c·q makes every weight the constant c
        let toy = TwoAtom {
            log_gamma: [(0.3f64 * 5.0).ln(), (0.7f64 * 5.0).ln()],
            q: [0.3, 0.7],
        };
        let (_, lws) = toy.propose_batch(64, RngSource::new(3), 0).unwrap();
        assert!(lws.iter().all(|lw| (lw - 5.0f64.ln()).abs() < 1e-12));
        assert_relative_eq!(log_mean_exp(&lws), 5.0f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn estimator_unbiased_on_two_atom_toy_by_enumeration() {
        let toy = TwoAtom {
            log_gamma: [1.2f64.ln(), 0.4f64.ln()],
            q: [0.25, 0.75],
        };
        // E[ω] enumerated over the two outcomes
        let expect: f64 = 1.2 + 0.4;
        let enumerated: f64 = (0..2)
            .map(|s| toy.q[s] * (toy.log_gamma[s].exp() / toy.q[s]))
            .sum();
        assert_relative_eq!(enumerated, expect, max_relative = 1e-14);
    }

    #[test]
    fn imh_always_accepts_uphill_moves() {
        // proposal identical to target -> every weight equal -> accept all
        let toy = TwoAtom {
            log_gamma: [0.5f64.ln(), 0.5f64.ln()],
            q: [0.5, 0.5],
        };
        let chain = imh_chain(&toy, 2000, RngSource::new(8)).unwrap();
        assert_eq!(chain.acceptance_rate, 1.0);
        assert_eq!(chain.accepted, chain.iterations);
    }

    #[test]
    fn pimh_single_particle_reproduces_imh() {
        let toy = TwoAtom {
            log_gamma: [1.0f64.ln(), 3.0f64.ln()],
            q: [0.5, 0.5],
        };
        let src = RngSource::new(21);
        let a = imh_chain(&toy, 500, src).unwrap();
        let b = pimh_chain(&toy, 1, 500, src).unwrap();
        assert_eq!(a.accepted, b.accepted);
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn pimh_selection_probabilities_match_weights() {
        // weights (1, 3) -> selection probabilities (0.25, 0.75)
        let draws = [0usize, 1usize];
        let lws = [1.0f64.ln(), 3.0f64.ln()];
        let mut rng = RngSource::new(5).stream(0);
        let n = 200_000;
        let mut count = [0usize; 2];
        for _ in 0..n {
            let (chosen, _) = select_particle(&draws, &lws, 2, &mut rng);
            count[chosen] += 1;
        }
        let freq = count[1] as f64 / n as f64;
        let se = (0.75f64 * 0.25 / n as f64).sqrt();
        assert!((freq - 0.75).abs() < 4.0 * se, "freq {freq}");
    }

    fn stationary_frequency_check(states: &[usize], expect_p1: f64, rho: f64) {
        let n = states.len() as f64;
        let freq = states.iter().filter(|s| **s == 1).count() as f64 / n;
        // Markov-chain CLT with enumerated lag-one autocorrelation
        let var = expect_p1 * (1.0 - expect_p1) * (1.0 + rho) / (1.0 - rho);
        let se = (var / n).sqrt();
        assert!(
            (freq - expect_p1).abs() < 3.5 * se,
            "frequency {freq} vs {expect_p1} (se {se})"
        );
    }

    #[test]
    fn imh_leaves_two_state_target_invariant() {
        let toy = TwoAtom {
            log_gamma: [1.0f64.ln(), 3.0f64.ln()],
            q: [0.5, 0.5],
        };
        let chain = imh_chain(&toy, 100_000, RngSource::new(13)).unwrap();
        // kernel: from 0 accept 1 always (ω1 > ω0); from 1 accept 0 w.p. 1/3
        let p01 = 0.5;
        let p10 = 0.5 / 3.0;
        let rho = 1.0 - p01 - p10;
        stationary_frequency_check(&chain.states, 0.75, rho);
    }

    #[test]
    fn pimh_leaves_two_state_target_invariant() {
        let toy = TwoAtom {
            log_gamma: [1.0f64.ln(), 3.0f64.ln()],
            q: [0.5, 0.5],
        };
        let chain = pimh_chain(&toy, 4, 100_000, RngSource::new(14)).unwrap();
        // conservative autocorrelation bound: PIMH mixes at least as fast as
        // the IMH kernel above
        let rho = 1.0 - 0.5 - 0.5 / 3.0;
        stationary_frequency_check(&chain.states, 0.75, rho);
        assert_eq!(chain.density_estimates.as_ref().unwrap().len(), 100_000);
    }
}
