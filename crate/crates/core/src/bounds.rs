//! Monte Carlo lower bounds on the log marginal likelihood and their
//! gradient estimators.
//!
//! Every bound here is E[log Ẑ] for some sweep configuration, a lower bound
//! on log p(y_{1:T}) by Jensen's inequality since exp(log Ẑ) is unbiased:
//! the filtering bound (FIVO: resampling, unit twist), the smoothing bound
//! (SIXO: resampling, learned twist), the importance-weighted bound (IWAE:
//! no resampling), and the bootstrap filter baseline (BPF: prior proposal,
//! unit twist).
//!
//! Gradients come in two flavors. The biased estimator differentiates the
//! realized log Ẑ along the reparameterized sampling paths with the drawn
//! ancestor indices held constant. The unbiased estimator adds the
//! score-function term log Ẑ · ∇ Σ_t Σ_k log ᾱ_t^{a_t^k}, where ᾱ are the
//! normalized incremental weights of the chosen ancestors at steps where
//! resampling actually executed; its expectation over noise and ancestors is
//! the exact gradient of the bound, provided the schedule does not itself
//! depend on the weights.

use serde::{Deserialize, Serialize};

use crate::models::{ObservationSequence, StateSpaceModel};
use crate::numerics::{grad, Gradients, Params, RngStream, Tape};
use crate::proposals::Proposal;
use crate::smc::{
    smc_sweep, GradientMode, ResamplingSchedule, ResamplingScheme, SmcError, SweepConfig,
    SweepResult,
};
use crate::twists::Twist;

/// Which lower bound a sweep estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// Filtering bound: resampling on, unit twist, any proposal.
    Fivo,
    /// Smoothing bound: resampling on, a learned twist.
    Sixo,
    /// Importance-weighted bound: resampling off.
    Iwae,
    /// Bootstrap filter: prior proposal, unit twist.
    Bpf,
}

/// A bound estimator configuration: which bound, how many particles per
/// sweep, how many independent sweeps to average, and how to resample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub kind: BoundKind,
    pub particles: usize,
    /// Independent sweeps averaged by [`bound_estimate`].
    pub sweeps: usize,
    pub scheme: ResamplingScheme,
    /// Overrides the kind's default schedule (adaptive ESS < K/2; IWAE
    /// always resolves to never).
    pub schedule: Option<ResamplingSchedule>,
}

impl BoundSpec {
    /// Systematic resampling under the kind's default schedule.
    pub fn new(kind: BoundKind, particles: usize, sweeps: usize) -> Self {
        BoundSpec { kind, particles, sweeps, scheme: ResamplingScheme::Systematic, schedule: None }
    }

    pub fn with_scheme(mut self, scheme: ResamplingScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_schedule(mut self, schedule: ResamplingSchedule) -> Self {
        self.schedule = Some(schedule);
        self
    }

    /// The effective resampling schedule.
    pub fn schedule(&self) -> ResamplingSchedule {
        match self.kind {
            BoundKind::Iwae => ResamplingSchedule::Never,
            _ => self.schedule.unwrap_or(ResamplingSchedule::EssBelow(0.5)),
        }
    }

    /// Checks the spec against the components it is about to run with.
    pub fn validate(&self, proposal: &dyn Proposal, twist: &dyn Twist) -> Result<(), BoundError> {
        if self.particles == 0 || self.sweeps == 0 {
            return Err(BoundError::EmptySpec);
        }
        match self.kind {
            BoundKind::Iwae => {
                if self.schedule.is_some_and(|s| s != ResamplingSchedule::Never) {
                    return Err(BoundError::IwaeResamples);
                }
            }
            BoundKind::Bpf => {
                if !proposal.is_bootstrap() {
                    return Err(BoundError::BpfNeedsBootstrap);
                }
                if !twist.is_unit() {
                    return Err(BoundError::BpfNeedsUnitTwist);
                }
            }
            BoundKind::Fivo => {
                if !twist.is_unit() {
                    return Err(BoundError::FivoNeedsUnitTwist);
                }
            }
            BoundKind::Sixo => {
                if twist.is_unit() {
                    return Err(BoundError::SixoNeedsTwist);
                }
            }
        }
        Ok(())
    }

    fn sweep_config(&self) -> SweepConfig {
        SweepConfig::new(self.particles, self.scheme, self.schedule())
    }
}

/// Configuration and sweep failures surfaced by the bound estimators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoundError {
    /// Zero particles or zero sweeps.
    EmptySpec,
    /// IWAE with a resampling schedule other than never.
    IwaeResamples,
    /// BPF with a proposal other than the bootstrap.
    BpfNeedsBootstrap,
    /// BPF with a non-unit twist.
    BpfNeedsUnitTwist,
    /// FIVO with a non-unit twist.
    FivoNeedsUnitTwist,
    /// SIXO with the unit twist (that is just FIVO).
    SixoNeedsTwist,
    /// Unbiased gradients under a schedule that depends on the weights.
    AdaptiveScheduleForUnbiased,
    /// A sweep degenerated.
    Sweep(SmcError),
}

impl std::fmt::Display for BoundError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundError::EmptySpec => write!(f, "bound spec needs at least one particle and one sweep"),
            BoundError::IwaeResamples => {
                write!(f, "the IWAE bound is defined without resampling; drop the schedule override")
            }
            BoundError::BpfNeedsBootstrap => {
                write!(f, "the BPF bound requires the bootstrap proposal")
            }
            BoundError::BpfNeedsUnitTwist => write!(f, "the BPF bound requires the unit twist"),
            BoundError::FivoNeedsUnitTwist => {
                write!(f, "the FIVO bound requires the unit twist; use kind sixo for twisted runs")
            }
            BoundError::SixoNeedsTwist => {
                write!(f, "the SIXO bound requires a non-unit twist; use kind fivo without one")
            }
            BoundError::AdaptiveScheduleForUnbiased => {
                write!(f, "unbiased gradients need a fixed resampling schedule, not an ESS trigger")
            }
            BoundError::Sweep(e) => write!(f, "sweep failed: {e}"),
        }
    }
}

impl std::error::Error for BoundError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            BoundError::Sweep(e) => Some(e),
            _ => None,
        }
    }
}

impl From<SmcError> for BoundError {
    fn from(e: SmcError) -> Self {
        BoundError::Sweep(e)
    }
}

/// Whether a gradient estimate carries the score-function correction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientKind {
    /// Pathwise derivative with ancestors held constant.
    Biased,
    /// Pathwise derivative plus the resampling score term.
    Unbiased,
}

/// Named gradients of one realized log Ẑ with respect to model, proposal,
/// and twist parameters.
#[derive(Clone, Debug)]
pub struct GradientEstimate {
    pub model: Gradients,
    pub proposal: Gradients,
    pub twist: Gradients,
    /// The log Ẑ sample the gradients belong to.
    pub objective: f64,
    pub kind: GradientKind,
    /// Euclidean norm of the score-function term across all parameters;
    /// present exactly for unbiased estimates. Large values flag the extra
    /// variance the correction injects.
    pub score_norm: Option<f64>,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean and standard error of log Ẑ over `spec.sweeps` independent sweeps.
///
/// Sweep i runs on the sub-stream `rng.split_indexed("sweep", i)`, so the
/// estimate is a pure function of `rng` and growing `sweeps` extends the
/// same sample rather than reshuffling it. The SE is the sample standard
/// deviation over sweeps divided by √sweeps.
pub fn bound_estimate(
    spec: &BoundSpec,
    model: &dyn StateSpaceModel,
    proposal: &dyn Proposal,
    twist: &dyn Twist,
    observations: &ObservationSequence,
    rng: &RngStream,
) -> Result<(f64, f64), BoundError> {
    spec.validate(proposal, twist)?;
    let config = spec.sweep_config();
    let mut values = Vec::with_capacity(spec.sweeps);
    for i in 0..spec.sweeps {
        let mut sweep_rng = rng.split_indexed("sweep", i as u64);
        let result = smc_sweep(
            model,
            proposal,
            twist,
            observations,
            &config,
            &mut sweep_rng,
            GradientMode::None,
        )?;
        values.push(result.log_z_hat.value());
    }
    Ok(mean_and_se(&values))
}

struct WatchedComponents {
    model: Box<dyn StateSpaceModel>,
    proposal: Box<dyn Proposal>,
    twist: Box<dyn Twist>,
    model_params: Params,
    proposal_params: Params,
    twist_params: Params,
}

fn watch_components(
    tape: &Tape,
    model: &dyn StateSpaceModel,
    proposal: &dyn Proposal,
    twist: &dyn Twist,
) -> WatchedComponents {
    let model_params = model.params().watched(tape);
    let proposal_params = proposal.params().watched(tape);
    let twist_params = twist.params().watched(tape);
    WatchedComponents {
        model: model.with_params(model_params.clone()),
        proposal: proposal.with_params(proposal_params.clone()),
        twist: twist.with_params(twist_params.clone()),
        model_params,
        proposal_params,
        twist_params,
    }
}

fn taped_sweep(
    spec: &BoundSpec,
    w: &WatchedComponents,
    observations: &ObservationSequence,
    rng: &mut RngStream,
) -> Result<SweepResult, BoundError> {
    Ok(smc_sweep(
        w.model.as_ref(),
        w.proposal.as_ref(),
        w.twist.as_ref(),
        observations,
        &spec.sweep_config(),
        rng,
        GradientMode::Reparameterized,
    )?)
}

/// Reparameterized gradient of one log Ẑ sample with the drawn ancestor
/// indices treated as constants.
///
/// For a fixed noise-and-ancestor realization this is the exact derivative
/// of the realized log Ẑ; averaged over realizations it is the standard
/// biased estimator of ∇E[log Ẑ]. One sweep is consumed from `rng` per
/// call; callers average estimates themselves.
pub fn biased_gradient(
    spec: &BoundSpec,
    model: &dyn StateSpaceModel,
    proposal: &dyn Proposal,
    twist: &dyn Twist,
    observations: &ObservationSequence,
    rng: &mut RngStream,
) -> Result<GradientEstimate, BoundError> {
    spec.validate(proposal, twist)?;
    let tape = Tape::new();
    let w = watch_components(&tape, model, proposal, twist);
    let result = taped_sweep(spec, &w, observations, rng)?;
    Ok(GradientEstimate {
        model: grad(&result.log_z_hat, &w.model_params),
        proposal: grad(&result.log_z_hat, &w.proposal_params),
        twist: grad(&result.log_z_hat, &w.twist_params),
        objective: result.log_z_hat.value(),
        kind: GradientKind::Biased,
        score_norm: None,
    })
}

/// Biased gradient plus the score-function term
/// log Ẑ · ∇ Σ_t Σ_k log ᾱ_t^{a_t^k}, summed over executed resampling steps.
///
/// In expectation over noise and multinomial ancestors this equals the
/// gradient of the bound exactly. The schedule must not consult the
/// weights: an adaptive trigger makes the resampling pattern itself
/// parameter-dependent, which the score term does not account for. With
/// systematic resampling the term is assembled the same way, but the
/// unbiasedness argument relies on independently drawn ancestors.
pub fn unbiased_gradient(
    spec: &BoundSpec,
    model: &dyn StateSpaceModel,
    proposal: &dyn Proposal,
    twist: &dyn Twist,
    observations: &ObservationSequence,
    rng: &mut RngStream,
) -> Result<GradientEstimate, BoundError> {
    spec.validate(proposal, twist)?;
    if matches!(spec.schedule(), ResamplingSchedule::EssBelow(_)) {
        return Err(BoundError::AdaptiveScheduleForUnbiased);
    }
    let tape = Tape::new();
    let w = watch_components(&tape, model, proposal, twist);
    let result = taped_sweep(spec, &w, observations, rng)?;
    let log_z = result.log_z_hat.value();

    // log Ẑ enters the score term as a constant: the pathwise dependence of
    // log Ẑ itself is already the biased part.
    let score_objective = log_z * &result.score_sum;
    let score_model = grad(&score_objective, &w.model_params);
    let score_proposal = grad(&score_objective, &w.proposal_params);
    let score_twist = grad(&score_objective, &w.twist_params);
    let score_norm = [&score_model, &score_proposal, &score_twist]
        .iter()
        .map(|g| {
            let n = g.global_norm();
            n * n
        })
        .sum::<f64>()
        .sqrt();

    let mut model_grads = grad(&result.log_z_hat, &w.model_params);
    let mut proposal_grads = grad(&result.log_z_hat, &w.proposal_params);
    let mut twist_grads = grad(&result.log_z_hat, &w.twist_params);
    model_grads.add_assign(&score_model);
    proposal_grads.add_assign(&score_proposal);
    twist_grads.add_assign(&score_twist);

    Ok(GradientEstimate {
        model: model_grads,
        proposal: proposal_grads,
        twist: twist_grads,
        objective: log_z,
        kind: GradientKind::Unbiased,
        score_norm: Some(score_norm),
    })
}
