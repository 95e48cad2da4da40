//! Finite-difference helpers shared by the unit tests.

use crate::numerics::{Params, Tensor};

/// Central difference of `eval` in the `(name, index)` parameter coordinate.
pub(crate) fn central_diff(
    base: &Params,
    name: &str,
    index: usize,
    eval: &dyn Fn(&Params) -> f64,
) -> f64 {
    let h = 1e-5;
    let shifted = |delta: f64| {
        let mut p = base.clone();
        let t = p.get(name);
        let mut data = t.data().to_vec();
        data[index] += delta;
        let shape = t.shape().to_vec();
        p.set(name, Tensor::from_vec(shape, data));
        eval(&p)
    };
    (shifted(h) - shifted(-h)) / (2.0 * h)
}

/// Relative-error assertion with an absolute floor for tiny values.
pub(crate) fn assert_close_rel(got: f64, fd: f64, rel: f64) {
    let scale = got.abs().max(fd.abs()).max(1e-3);
    assert!(
        (got - fd).abs() / scale <= rel,
        "gradient {got} vs finite difference {fd} (rel {})",
        (got - fd).abs() / scale
    );
}

use crate::models::{ModelError, ObservationSequence, StateSpaceModel};
use crate::numerics::{gaussian_logpdf, logsumexp_across, QuadratureRule};

/// Minimal random-walk model with configurable dimensions, a configurable
/// transition scale, and an optional refusal to integrate, for exercising
/// paths the production models never hit.
pub(crate) struct StubModel {
    pub(crate) t_horizon: usize,
    pub(crate) state_dim: usize,
    pub(crate) obs_dim: usize,
    pub(crate) scale: f64,
    pub(crate) lookahead_ok: bool,
    pub(crate) params: Params,
}

impl StubModel {
    pub(crate) fn new(t_horizon: usize, state_dim: usize, obs_dim: usize) -> Self {
        StubModel { t_horizon, state_dim, obs_dim, scale: 1.0, lookahead_ok: true, params: Params::new() }
    }
}

impl StateSpaceModel for StubModel {
    fn horizon(&self) -> usize {
        self.t_horizon
    }
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn obs_dim(&self) -> usize {
        self.obs_dim
    }
    fn observes_at(&self, _t: usize) -> bool {
        true
    }
    fn params(&self) -> &Params {
        &self.params
    }
    fn with_params(&self, params: Params) -> Box<dyn StateSpaceModel> {
        Box::new(StubModel { params, ..StubModel::new(self.t_horizon, self.state_dim, self.obs_dim) })
    }
    fn initial_loc_scale(&self) -> (Tensor, Tensor) {
        (Tensor::scalar(0.0), Tensor::scalar(1.0))
    }
    fn transition_loc_scale(&self, x_prev: &Tensor, _t: usize) -> (Tensor, Tensor) {
        (x_prev.clone(), Tensor::scalar(self.scale))
    }
    fn observation_loc_scale(&self, x_t: &Tensor, _t: usize) -> (Tensor, Tensor) {
        assert_eq!(self.state_dim, self.obs_dim, "stub observes the state directly");
        (x_t.clone(), Tensor::scalar(1.0))
    }
    fn quadrature_lookahead(
        &self,
        rule: &QuadratureRule,
        x_t: &Tensor,
        y_next: &Tensor,
        t: usize,
    ) -> Result<Tensor, ModelError> {
        if !self.lookahead_ok {
            return Err(ModelError::LookaheadUnsupported { model: "stub" });
        }
        let (loc, scale) = self.transition_loc_scale(x_t, t + 1);
        let k = loc.shape()[0];
        let cols: Vec<Tensor> = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&z, &w)| {
                let x_next = &loc + &(&scale * z);
                let (oloc, oscale) = self.observation_loc_scale(&x_next, t + 1);
                &gaussian_logpdf(y_next, &oloc, &oscale.square()).reshape(vec![k]) + w.ln()
            })
            .collect();
        Ok(logsumexp_across(&cols))
    }
}

/// Dense standard-normal observations for a horizon, batch size `batch`.
pub(crate) fn dense_observations(
    rng: &mut crate::numerics::RngStream,
    t_horizon: usize,
    batch: usize,
    obs_dim: usize,
) -> ObservationSequence {
    ObservationSequence::new(
        (0..t_horizon).map(|_| Some(rng.standard_normal(&[batch, obs_dim]))).collect(),
    )
}
