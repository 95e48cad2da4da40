//! The generic sequential Monte Carlo sweep over twisted targets
//! γ_t(x_{1:t}) = p_θ(x_{1:t}, y_{1:t}) · r_ψ(y_{t+1:T}, x_t).
//!
//! One sweep runs propose → weight → (conditionally) resample for t = 1..T
//! and accumulates log-Ẑ through ratios of weight sums. Because every twist
//! family is 1 at the horizon, the final-step target is the untwisted joint
//! density and exp(log-Ẑ) is an unbiased estimator of the marginal
//! likelihood for any proposal, twist, and resampling schedule.
//!
//! Weights stay in the log domain throughout; normalized weights are
//! materialized only inside ESS and resampling. Per-particle work is
//! vectorized over the particle axis, so results are bit-reproducible for a
//! given (seed, config) no matter how the arithmetic is scheduled.

use serde::{Deserialize, Serialize};

use crate::models::{ObservationSequence, StateSpaceModel};
use crate::numerics::{logsumexp, RngStream, Tensor};
use crate::proposals::{Proposal, Proposed};
use crate::twists::{Twist, TwistContext};

/// Failure modes of weighting and resampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SmcError {
    /// Every log weight is −∞: the weights carry no information.
    DegenerateWeights,
    /// The sweep collapsed: all particles became weightless at this step.
    DegenerateSweep { t: usize },
}

impl std::fmt::Display for SmcError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SmcError::DegenerateWeights => write!(f, "all log weights are -inf"),
            SmcError::DegenerateSweep { t } => {
                write!(f, "particle system degenerated at timestep {t}: all weights -inf")
            }
        }
    }
}

impl std::error::Error for SmcError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplingScheme {
    Multinomial,
    Systematic,
}

/// When to resample. Decisions are evaluated after weighting at every
/// non-final step; the final step never resamples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplingSchedule {
    Always,
    Never,
    /// At steps divisible by n.
    EveryN(usize),
    /// When ESS falls below this fraction of the particle count.
    EssBelow(f64),
}

impl ResamplingSchedule {
    fn wants_resample(&self, t: usize, ess: f64, k: usize) -> bool {
        match *self {
            ResamplingSchedule::Always => true,
            ResamplingSchedule::Never => false,
            ResamplingSchedule::EveryN(n) => t % n == 0,
            ResamplingSchedule::EssBelow(fraction) => ess < fraction * k as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub particles: usize,
    pub scheme: ResamplingScheme,
    pub schedule: ResamplingSchedule,
    pub record_lineage: bool,
}

impl SweepConfig {
    pub fn new(particles: usize, scheme: ResamplingScheme, schedule: ResamplingSchedule) -> Self {
        let config = SweepConfig { particles, scheme, schedule, record_lineage: false };
        config.validate();
        config
    }

    pub fn validate(&self) {
        assert!(self.particles >= 1, "need at least one particle");
        match self.schedule {
            ResamplingSchedule::EveryN(n) => assert!(n >= 1, "every_n period must be positive"),
            ResamplingSchedule::EssBelow(fraction) => assert!(
                fraction > 0.0 && fraction <= 1.0,
                "ess fraction must lie in (0, 1], got {fraction}"
            ),
            _ => {}
        }
    }
}

/// Whether sampled paths stay on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientMode {
    /// Run on detached parameters: pure inference, nothing recorded.
    None,
    /// Keep proposal draws and weights differentiable; ancestor indices are
    /// constants, so d log-Ẑ ignores the resampling distribution.
    Reparameterized,
}

/// Per-step raw particle history for lineage analyses.
///
/// `states[t−1]` holds the particles exactly as proposed at step t, before
/// any resampling, `parents[t−1][k]` the index of the step-(t−1) particle
/// that particle k was proposed from, and `log_weights[t−1]` the accumulated
/// log weights right after weighting.
#[derive(Clone, Debug)]
pub struct Lineage {
    pub states: Vec<Tensor>,
    pub parents: Vec<Vec<usize>>,
    pub log_weights: Vec<Vec<f64>>,
}

#[derive(Debug)]
pub struct SweepResult {
    /// log-Ẑ, on tape when the sweep ran in reparameterized mode.
    pub log_z_hat: Tensor,
    /// Final-step particles, `[K, state_dim]`.
    pub particles: Tensor,
    /// Final log weights, normalized so the exponentials sum to 1.
    pub log_weights: Tensor,
    /// ESS after weighting at each step, before any resampling.
    pub ess_trace: Vec<f64>,
    /// Steps whose resampling actually executed, ascending.
    pub resampled_at: Vec<usize>,
    /// Ancestor indices applied after each non-final step (identity rows
    /// where resampling did not run). 0-based.
    pub ancestry: Vec<Vec<usize>>,
    /// Σ over executed resamplings of Σ_k (log w[a_k] − log Σ w): the log
    /// probability of the realized ancestor draws, on tape alongside
    /// `log_z_hat`. Score-function gradient corrections are built from this.
    pub score_sum: Tensor,
    pub lineage: Option<Lineage>,
}

/// Effective sample size (Σ w)²/Σ w² of unnormalized log weights.
///
/// Computed under a max shift, which the ratio is exactly invariant to;
/// equal weights give the particle count exactly.
pub fn ess(log_weights: &Tensor) -> Result<f64, SmcError> {
    let data = log_weights.data();
    let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(SmcError::DegenerateWeights);
    }
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for &lw in data {
        let w = (lw - max).exp();
        sum += w;
        sum_sq += w * w;
    }
    Ok(sum * sum / sum_sq)
}

/// Ancestor indices (0-based) drawn from the normalized weights.
///
/// Multinomial draws K i.i.d. categorical indices by inverse CDF, one
/// uniform per slot. Systematic draws a single uniform u and assigns slot k
/// the index whose cumulative-weight interval contains (k + u)/K, which
/// pins every offspring count to ⌊K·w̄⌋ or ⌈K·w̄⌉. Both schemes have
/// expected offspring counts K·w̄.
pub fn resample(
    log_weights: &Tensor,
    scheme: ResamplingScheme,
    rng: &mut RngStream,
) -> Result<Vec<usize>, SmcError> {
    let data = log_weights.data();
    let k = data.len();
    let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(SmcError::DegenerateWeights);
    }
    let mut cumulative = Vec::with_capacity(k);
    let mut total = 0.0;
    for &lw in data {
        total += (lw - max).exp();
        cumulative.push(total);
    }

    let mut ancestors = Vec::with_capacity(k);
    match scheme {
        ResamplingScheme::Systematic => {
            let u = rng.uniform_f64();
            let mut i = 0;
            for slot in 0..k {
                let target = (slot as f64 + u) / k as f64 * total;
                while cumulative[i] <= target && i + 1 < k {
                    i += 1;
                }
                ancestors.push(i);
            }
        }
        ResamplingScheme::Multinomial => {
            for _ in 0..k {
                let target = rng.uniform_f64() * total;
                let i = cumulative.partition_point(|&c| c <= target).min(k - 1);
                ancestors.push(i);
            }
        }
    }
    Ok(ancestors)
}

/// log α_t for a batch of proposed particles: the ratio of consecutive
/// twisted targets over the proposal density,
///
///   log α = log p(x_t | x_{t−1}) [initial density at t = 1]
///         + log p(y_t | x_t)     [only where the sequence is observed]
///         + log r_t(x_t) − log r_{t−1}(x_{t−1}) [previous term absent at t = 1]
///         − log q_t(x_t).
///
/// When the proposal reports an analytic prior residual log q − log p, the
/// first and last lines collapse to its negation, which is exact where the
/// proposal is the prior itself and cancellation-free for prior
/// perturbations.
pub fn incremental_log_weight(
    model: &dyn StateSpaceModel,
    twist: &dyn Twist,
    context: &TwistContext,
    t: usize,
    x_prev: Option<&Tensor>,
    proposed: &Proposed,
    observations: &ObservationSequence,
) -> Tensor {
    assert!(t >= 1 && t <= model.horizon(), "step {t} outside [1, {}]", model.horizon());
    assert_eq!(x_prev.is_some(), t > 1, "x_prev must be present exactly when t > 1");
    let x_t = &proposed.x;

    let mut log_alpha = match &proposed.prior_residual {
        Some(residual) => -residual,
        None => {
            let prior = match x_prev {
                None => model.initial_logpdf(x_t),
                Some(xp) => model.transition_logpdf(xp, x_t, t),
            };
            &prior - &proposed.log_q
        }
    };
    if let Some(y) = observations.value(t) {
        log_alpha = &log_alpha + &model.observation_logpdf(x_t, y, t);
    }
    log_alpha = &log_alpha + &twist.log_twist(model, context, t, x_t);
    if let Some(xp) = x_prev {
        log_alpha = &log_alpha - &twist.log_twist(model, context, t - 1, xp);
    }
    log_alpha
}

/// One full sweep. Errors out with the failing timestep if every particle
/// goes weightless; no jitter or other silent recovery is attempted, since
/// a collapse signals a broken model, proposal, or twist.
pub fn smc_sweep(
    model: &dyn StateSpaceModel,
    proposal: &dyn Proposal,
    twist: &dyn Twist,
    observations: &ObservationSequence,
    config: &SweepConfig,
    rng: &mut RngStream,
    gradient_mode: GradientMode,
) -> Result<SweepResult, SmcError> {
    config.validate();
    let t_horizon = model.horizon();
    assert_eq!(observations.len(), t_horizon, "observations cover a different horizon");

    // In inference mode run on detached parameter copies so no tape sees
    // the sweep, whatever the caller is watching.
    let detached;
    let (model, proposal, twist): (&dyn StateSpaceModel, &dyn Proposal, &dyn Twist) =
        match gradient_mode {
            GradientMode::Reparameterized => (model, proposal, twist),
            GradientMode::None => {
                detached = (
                    model.with_params(model.params().detached()),
                    proposal.with_params(proposal.params().detached()),
                    twist.with_params(twist.params().detached()),
                );
                (&*detached.0, &*detached.1, &*detached.2)
            }
        };

    let k = config.particles;
    let context = twist.encode(observations);
    let identity: Vec<usize> = (0..k).collect();

    let mut lw = Tensor::zeros(vec![k]);
    let mut log_sum_prev = Tensor::scalar((k as f64).ln());
    let mut log_z = Tensor::scalar(0.0);
    let mut score_sum = Tensor::scalar(0.0);
    let mut x_prev: Option<Tensor> = None;
    let mut parents = identity.clone();
    let mut ess_trace = Vec::with_capacity(t_horizon);
    let mut resampled_at = Vec::new();
    let mut ancestry: Vec<Vec<usize>> = Vec::with_capacity(t_horizon.saturating_sub(1));
    let mut lineage = config
        .record_lineage
        .then(|| Lineage { states: Vec::new(), parents: Vec::new(), log_weights: Vec::new() });

    for t in 1..=t_horizon {
        let proposed = proposal.propose(model, rng, t, x_prev.as_ref(), observations, k);
        let log_alpha =
            incremental_log_weight(model, twist, &context, t, x_prev.as_ref(), &proposed, observations);
        lw = &lw + &log_alpha;

        let ess_t = ess(&lw).map_err(|_| SmcError::DegenerateSweep { t })?;
        ess_trace.push(ess_t);
        // Ẑ_t = Ẑ_{t−1} · (Σ_k w_t^k) / (Σ_k w_{t−1}^k)
        let log_sum = logsumexp(&lw);
        log_z = &log_z + &(&log_sum - &log_sum_prev);
        log_sum_prev = log_sum;

        if let Some(lin) = &mut lineage {
            lin.states.push(Tensor::from_vec(
                proposed.x.shape().to_vec(),
                proposed.x.data().to_vec(),
            ));
            lin.parents.push(parents.clone());
            lin.log_weights.push(lw.data().to_vec());
        }

        let mut x_t = proposed.x;
        if t < t_horizon {
            if config.schedule.wants_resample(t, ess_t, k) {
                let ancestors = resample(&lw, config.scheme, rng)
                    .map_err(|_| SmcError::DegenerateSweep { t })?;
                // Log probability of this ancestor draw under the weights.
                let picked = lw.gather_rows(&ancestors);
                score_sum = &score_sum + &(&picked - &log_sum_prev).sum_all();
                x_t = x_t.gather_rows(&ancestors);
                lw = Tensor::zeros(vec![k]);
                log_sum_prev = Tensor::scalar((k as f64).ln());
                resampled_at.push(t);
                ancestry.push(ancestors.clone());
                parents = ancestors;
            } else {
                ancestry.push(identity.clone());
                parents = identity.clone();
            }
        }
        x_prev = Some(x_t);
    }

    let particles = x_prev.expect("horizon is at least 1");
    let log_weights = &lw - &log_sum_prev;
    Ok(SweepResult {
        log_z_hat: log_z,
        particles,
        log_weights,
        ess_trace,
        resampled_at,
        ancestry,
        score_sum,
        lineage,
    })
}
