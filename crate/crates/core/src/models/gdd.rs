//! Gaussian drift diffusion: a 1-dim random walk with drift α, unit noise,
//! and a single noisy observation of the final state.
//!
//!   x_1 ~ N(α, 1),  x_t = x_{t−1} + α + w_t,  y_T = x_T + α + v,
//!
//! all variances 1. Everything about this model is available in closed form,
//! which makes it the oracle model for the rest of the crate: the marginal
//! likelihood, the smoothing marginals, the optimal one-step proposal, and
//! the optimal twist are all exact Gaussians exposed via [`GddAnalytics`].

use super::{ModelError, StateSpaceModel};
use crate::numerics::{
    gaussian_logpdf, logsumexp_across, Params, QuadratureRule, Tensor, LN_2PI,
};

/// Drift-diffusion model with learnable drift `alpha`.
#[derive(Clone, Debug)]
pub struct GddModel {
    t_horizon: usize,
    params: Params,
}

impl GddModel {
    pub fn new(t_horizon: usize, alpha: f64) -> Self {
        assert!(t_horizon >= 1, "horizon must be positive");
        let mut params = Params::new();
        params.insert("alpha", Tensor::scalar(alpha));
        GddModel { t_horizon, params }
    }

    pub fn alpha(&self) -> f64 {
        self.params.get("alpha").value()
    }

    fn alpha_tensor(&self) -> &Tensor {
        self.params.get("alpha")
    }

    pub fn analytics(&self) -> GddAnalytics<'_> {
        GddAnalytics { model: self }
    }
}

impl StateSpaceModel for GddModel {
    fn horizon(&self) -> usize {
        self.t_horizon
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn observes_at(&self, t: usize) -> bool {
        t == self.t_horizon
    }

    fn params(&self) -> &Params {
        &self.params
    }

    fn with_params(&self, params: Params) -> Box<dyn StateSpaceModel> {
        Box::new(GddModel { t_horizon: self.t_horizon, params })
    }

    fn initial_loc_scale(&self) -> (Tensor, Tensor) {
        (self.alpha_tensor().clone(), Tensor::scalar(1.0))
    }

    fn transition_loc_scale(&self, x_prev: &Tensor, _t: usize) -> (Tensor, Tensor) {
        (x_prev + self.alpha_tensor(), Tensor::scalar(1.0))
    }

    fn observation_loc_scale(&self, x_t: &Tensor, _t: usize) -> (Tensor, Tensor) {
        (x_t + self.alpha_tensor(), Tensor::scalar(1.0))
    }

    fn quadrature_lookahead(
        &self,
        rule: &QuadratureRule,
        x_t: &Tensor,
        y_next: &Tensor,
        t: usize,
    ) -> Result<Tensor, ModelError> {
        let (loc, _) = self.transition_loc_scale(x_t, t + 1);
        let k = loc.shape()[0];
        let cols = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&z, &w)| {
                // transition scale is 1, so the node offset is just z
                let x_next = &loc + z;
                let (oloc, oscale) = self.observation_loc_scale(&x_next, t + 1);
                &gaussian_logpdf(y_next, &oloc, &oscale.square()).reshape(vec![k]) + w.ln()
            })
            .collect::<Vec<_>>();
        Ok(logsumexp_across(&cols))
    }
}

/// Closed-form quantities of the drift-diffusion model.
///
/// Derivation sketch: with w_s the independent unit-variance noises,
/// x_t = tα + Σ_{s≤t} w_s and y_T = (T+1)α + Σ_{s≤T} w_s + v, so every
/// conditional below is a linear-Gaussian projection. The drift offsets
/// cancel in the smoothing marginal and the optimal proposal; only the
/// marginal and the optimal twist keep α.
pub struct GddAnalytics<'a> {
    model: &'a GddModel,
}

impl GddAnalytics<'_> {
    fn t_horizon(&self) -> usize {
        self.model.t_horizon
    }

    /// Exact log p(y_T) = log N(y_T; (T+1)α, T+1).
    pub fn log_marginal(&self, y: f64) -> f64 {
        let t = self.t_horizon() as f64;
        let (mean, var) = ((t + 1.0) * self.model.alpha(), t + 1.0);
        -0.5 * (LN_2PI + var.ln()) - (y - mean) * (y - mean) / (2.0 * var)
    }

    /// Mean and variance of p(x_t | y_T).
    pub fn smoothing_marginal(&self, t: usize, y: f64) -> (f64, f64) {
        let cap = self.t_horizon();
        assert!(t >= 1 && t <= cap, "smoothing time {t} outside [1, {cap}]");
        let (tf, cf) = (t as f64, cap as f64);
        (tf * y / (cf + 1.0), tf * (cf - tf + 1.0) / (cf + 1.0))
    }

    /// Mean and variance of p(x_t | x_{t−1}, y_T); `x_prev` is `None` at t=1.
    pub fn optimal_proposal(&self, t: usize, x_prev: Option<f64>, y: f64) -> (f64, f64) {
        let cap = self.t_horizon();
        assert!(t >= 1 && t <= cap, "proposal time {t} outside [1, {cap}]");
        assert_eq!(t == 1, x_prev.is_none(), "x_prev present iff t > 1");
        let remaining = (cap - t + 1) as f64; // lookahead variance T−t+1
        match x_prev {
            None => (y / (cap as f64 + 1.0), cap as f64 / (cap as f64 + 1.0)),
            Some(xp) => ((remaining * xp + y) / (remaining + 1.0), remaining / (remaining + 1.0)),
        }
    }

    /// Exact log lookahead log p(y_T | x_t) = log N(y_T; x_t + α(T−t+1), T−t+1).
    pub fn optimal_twist(&self, t: usize, x: f64, y: f64) -> f64 {
        let cap = self.t_horizon();
        assert!(t >= 1 && t < cap, "twist time {t} outside [1, {}]", cap - 1);
        let remaining = (cap - t + 1) as f64;
        let mean = x + self.model.alpha() * remaining;
        -0.5 * (LN_2PI + remaining.ln()) - (y - mean) * (y - mean) / (2.0 * remaining)
    }
}
