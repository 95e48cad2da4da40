//! Twist functions r_ψ(y_{t+1:T}, x_t): multiplicative corrections that pull
//! the filtering targets toward the smoothing distribution. Every family
//! fixes r_T ≡ 1, so the final normalizing-constant estimate stays unbiased
//! no matter how wrong the learned twists are.
//!
//! Families: the unit twist (plain filtering), a per-timestep Gaussian in a
//! scalar state (contains the drift-diffusion optimum), a Gauss–Hermite
//! quadrature approximation of the one-step lookahead density, a quadratic
//! head driven by terminal-observation features, and a backward recurrent
//! encoder over the observations.

pub mod backward_rnn;
mod nets;
pub mod quadratic;

pub use backward_rnn::BackwardRnnTwist;
pub use quadratic::QuadraticHeadTwist;

use crate::models::{ModelError, ObservationSequence, StateSpaceModel};
use crate::numerics::{gauss_hermite_rule, gaussian_logpdf, Params, QuadratureRule, Tensor};

/// Everything a twist precomputes from one observation sequence. Encodings
/// are computed once per (observations, parameters) pair and reused across
/// particles and timesteps.
#[derive(Clone, Debug)]
pub enum TwistContext {
    /// Nothing needed (unit twist).
    Empty,
    /// Horizon plus the final observed value, for families conditioned on a
    /// single terminal observation.
    Terminal { t_horizon: usize, y: f64 },
    /// Per-timestep encodings for t = 1..T−1 (index t−1), each `[B, H]`;
    /// `None` marks steps with no future observation, where the twist is 1.
    PerStep { t_horizon: usize, enc: Vec<Option<Tensor>> },
    /// The raw observations, for twists that integrate the model forward.
    Lookahead { obs: ObservationSequence },
}

pub trait Twist: Send + Sync {
    /// Named learnable parameters ψ (empty for unit and quadrature twists).
    fn params(&self) -> &Params;

    /// The same twist with parameters replaced.
    fn with_params(&self, params: Params) -> Box<dyn Twist>;

    /// Precompute the per-sequence context.
    fn encode(&self, observations: &ObservationSequence) -> TwistContext;

    /// `log r_t(y_{t+1:T}, x_t)` for particle rows `x` `[K, D]`, as `[K]`.
    /// Exactly zero at t = T; differentiable in ψ and x elsewhere.
    fn log_twist(
        &self,
        model: &dyn StateSpaceModel,
        context: &TwistContext,
        t: usize,
        x: &Tensor,
    ) -> Tensor;

    /// Whether this is the unit twist (lets bound configs distinguish plain
    /// filtering from twisted runs).
    fn is_unit(&self) -> bool {
        false
    }
}

pub(crate) fn zeros_like_rows(x: &Tensor) -> Tensor {
    Tensor::zeros(vec![x.shape()[0]])
}

/// r ≡ 1: plain filtering targets.
#[derive(Clone, Debug, Default)]
pub struct UnitTwist {
    params: Params,
}

impl UnitTwist {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Twist for UnitTwist {
    fn params(&self) -> &Params {
        &self.params
    }

    fn with_params(&self, params: Params) -> Box<dyn Twist> {
        assert!(params.is_empty(), "unit twist has no parameters");
        Box::new(UnitTwist::new())
    }

    fn encode(&self, _observations: &ObservationSequence) -> TwistContext {
        TwistContext::Empty
    }

    fn log_twist(
        &self,
        _model: &dyn StateSpaceModel,
        context: &TwistContext,
        _t: usize,
        x: &Tensor,
    ) -> Tensor {
        assert!(matches!(context, TwistContext::Empty), "unit twist wants an empty context");
        zeros_like_rows(x)
    }

    fn is_unit(&self) -> bool {
        true
    }
}

/// Scalar-state Gaussian twist `r_t(y, x) = N(y; w_t·x + b_t, exp(log_var_t))`
/// for t = 1..T−1. The family contains the exact drift-diffusion lookahead.
#[derive(Clone, Debug)]
pub struct GaussianTwist {
    t_horizon: usize,
    params: Params,
}

impl GaussianTwist {
    /// Zero affine map and unit variance: a constant (but not unit) twist.
    pub fn new(t_horizon: usize) -> Self {
        assert!(t_horizon >= 2, "twist needs a horizon of at least 2");
        let mut params = Params::new();
        params.insert("weight", Tensor::zeros(vec![t_horizon - 1]));
        params.insert("bias", Tensor::zeros(vec![t_horizon - 1]));
        params.insert("log_var", Tensor::zeros(vec![t_horizon - 1]));
        GaussianTwist { t_horizon, params }
    }

    /// The exact lookahead for a drift-diffusion model with drift `alpha`:
    /// with r = T−t+1, `p(y_T | x_t) = N(y_T; x_t + α·r, r)`.
    pub fn gdd_optimal(t_horizon: usize, alpha: f64) -> Self {
        let mut twist = Self::new(t_horizon);
        let remaining: Vec<f64> = (1..t_horizon).map(|t| (t_horizon - t + 1) as f64).collect();
        twist.params.set("weight", Tensor::full(vec![t_horizon - 1], 1.0));
        twist
            .params
            .set("bias", Tensor::from_vec(vec![t_horizon - 1], remaining.iter().map(|r| alpha * r).collect()));
        twist
            .params
            .set("log_var", Tensor::from_vec(vec![t_horizon - 1], remaining.iter().map(|r| r.ln()).collect()));
        twist
    }
}

impl Twist for GaussianTwist {
    fn params(&self) -> &Params {
        &self.params
    }

    fn with_params(&self, params: Params) -> Box<dyn Twist> {
        for name in ["weight", "bias", "log_var"] {
            assert_eq!(params.get(name).len(), self.t_horizon - 1, "parameter {name:?} has the wrong length");
        }
        Box::new(GaussianTwist { t_horizon: self.t_horizon, params })
    }

    fn encode(&self, observations: &ObservationSequence) -> TwistContext {
        assert_eq!(observations.len(), self.t_horizon, "twist and observations horizons differ");
        TwistContext::Terminal { t_horizon: self.t_horizon, y: observations.terminal_value() }
    }

    fn log_twist(
        &self,
        _model: &dyn StateSpaceModel,
        context: &TwistContext,
        t: usize,
        x: &Tensor,
    ) -> Tensor {
        let TwistContext::Terminal { t_horizon, y } = context else {
            panic!("Gaussian twist wants a terminal context");
        };
        assert!(t >= 1 && t <= *t_horizon, "twist time {t} outside [1, {t_horizon}]");
        if t == *t_horizon {
            return zeros_like_rows(x);
        }
        let k = x.shape()[0];
        assert_eq!(x.len(), k, "Gaussian twist is scalar-state, got {:?}", x.shape());
        let w = self.params.get("weight").gather_rows(&[t - 1]);
        let b = self.params.get("bias").gather_rows(&[t - 1]);
        let var = self.params.get("log_var").gather_rows(&[t - 1]).exp();
        let mean = &(&x.reshape(vec![k]) * &w) + &b;
        gaussian_logpdf(&Tensor::scalar(*y), &mean, &var)
    }
}

/// `log Σ_i w_i p_θ(y_{t+1} | loc(x_t) + scale·node_i)`: the Gauss–Hermite
/// estimate of the one-step lookahead density, requiring an observation at
/// t+1 and a location-scale Gaussian transition.
pub fn one_step_lookahead(
    model: &dyn StateSpaceModel,
    rule: &QuadratureRule,
    x_t: &Tensor,
    y_next: &Tensor,
    t: usize,
) -> Result<Tensor, ModelError> {
    assert!(t >= 1 && t < model.horizon(), "lookahead time {t} outside [1, T)");
    assert!(model.observes_at(t + 1), "no observation at t+1 = {}", t + 1);
    model.quadrature_lookahead(rule, x_t, y_next, t)
}

/// Parameter-free twist that integrates the model one step forward with
/// Gauss–Hermite quadrature; at steps with no observation at t+1 it is 1.
#[derive(Clone, Debug)]
pub struct QuadratureTwist {
    rule: QuadratureRule,
    params: Params,
}

impl QuadratureTwist {
    pub fn new(degree: usize) -> Self {
        QuadratureTwist { rule: gauss_hermite_rule(degree), params: Params::new() }
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }
}

impl Default for QuadratureTwist {
    /// Degree 5 balances sharpness against per-particle cost.
    fn default() -> Self {
        Self::new(5)
    }
}

impl Twist for QuadratureTwist {
    fn params(&self) -> &Params {
        &self.params
    }

    fn with_params(&self, params: Params) -> Box<dyn Twist> {
        assert!(params.is_empty(), "quadrature twist has no parameters");
        Box::new(self.clone())
    }

    fn encode(&self, observations: &ObservationSequence) -> TwistContext {
        TwistContext::Lookahead { obs: observations.clone() }
    }

    fn log_twist(
        &self,
        model: &dyn StateSpaceModel,
        context: &TwistContext,
        t: usize,
        x: &Tensor,
    ) -> Tensor {
        let TwistContext::Lookahead { obs } = context else {
            panic!("quadrature twist wants a lookahead context");
        };
        assert!(t >= 1 && t <= obs.len(), "twist time {t} outside [1, {}]", obs.len());
        if t == obs.len() || !obs.has(t + 1) {
            return zeros_like_rows(x);
        }
        let y_next = obs.value(t + 1).unwrap();
        one_step_lookahead(model, &self.rule, x, y_next, t)
            .expect("quadrature twist needs a lookahead-capable model")
    }
}
