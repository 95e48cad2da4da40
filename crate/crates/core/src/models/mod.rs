//! State-space models behind one interface: a Markov chain of latents
//! `x_{1:T}` with conditionally independent, possibly sparse observations
//! `y_{1:T}`. Three concrete families live here (Gaussian drift diffusion,
//! stochastic volatility, Hodgkin–Huxley) together with the drift-diffusion
//! analytic oracles.

pub mod gdd;
pub mod hh;
pub mod svm;

pub use gdd::{GddAnalytics, GddModel};
pub use hh::HhModel;
pub use svm::SvmModel;

use crate::numerics::{gaussian_logpdf, Params, QuadratureRule, RngStream, Tensor};
use serde::{Deserialize, Serialize};

/// Errors surfaced by model operations.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("{model} transition is not a location-scale Gaussian; quadrature lookahead unsupported")]
    LookaheadUnsupported { model: &'static str },
}

/// Observations `y_{1:T}` with a per-timestep presence mask.
///
/// Entry `t` (1-based) is `Some` iff the observation exists at `t`. Each
/// present value is a `[B, obs_dim]` tensor; batched sequences (`B > 1`)
/// carry one trajectory per row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObservationSequence {
    values: Vec<Option<Tensor>>,
}

impl ObservationSequence {
    pub fn new(values: Vec<Option<Tensor>>) -> Self {
        assert!(!values.is_empty(), "empty observation sequence");
        let mut dims = None;
        for v in values.iter().flatten() {
            let s = v.shape();
            assert_eq!(s.len(), 2, "observations are [batch, obs_dim], got {s:?}");
            match dims {
                None => dims = Some((s[0], s[1])),
                Some(d) => assert_eq!(d, (s[0], s[1]), "ragged observation shapes"),
            }
        }
        assert!(dims.is_some(), "observation sequence with no observations");
        ObservationSequence { values }
    }

    /// A sequence observed only at the final step, batch size 1.
    pub fn terminal(len: usize, y: f64) -> Self {
        let mut values = vec![None; len];
        values[len - 1] = Some(Tensor::from_vec(vec![1, 1], vec![y]));
        ObservationSequence::new(values)
    }

    /// Horizon T.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty() // constructor guarantees false
    }

    /// Whether an observation is present at time `t` (1-based).
    pub fn has(&self, t: usize) -> bool {
        self.values[t - 1].is_some()
    }

    /// The observation at `t`, if present.
    pub fn value(&self, t: usize) -> Option<&Tensor> {
        self.values[t - 1].as_ref()
    }

    /// 1-based times carrying observations, ascending.
    pub fn observed_times(&self) -> Vec<usize> {
        (1..=self.len()).filter(|&t| self.has(t)).collect()
    }

    /// Rows per observation tensor.
    pub fn batch(&self) -> usize {
        self.values.iter().flatten().next().expect("no observations").shape()[0]
    }

    /// Width of each observation tensor.
    pub fn obs_dim(&self) -> usize {
        self.values.iter().flatten().next().expect("no observations").shape()[1]
    }

    /// The last observed value as a plain scalar (for families conditioned
    /// on a single terminal observation).
    pub fn terminal_value(&self) -> f64 {
        let t_last = *self.observed_times().last().expect("no observations");
        let y = self.value(t_last).unwrap();
        assert_eq!(y.len(), 1, "terminal conditioning expects a single scalar observation");
        y.data()[0]
    }

    /// The same sequence restricted to one batch row (detached from any tape).
    pub fn select_row(&self, row: usize) -> ObservationSequence {
        self.select_rows(&[row])
    }

    /// The sequence restricted to the given batch rows, in order, with
    /// repeats allowed (detached from any tape).
    pub fn select_rows(&self, rows: &[usize]) -> ObservationSequence {
        let values = self
            .values
            .iter()
            .map(|v| {
                v.as_ref().map(|t| {
                    let d = t.shape()[1];
                    let mut data = Vec::with_capacity(rows.len() * d);
                    for &row in rows {
                        data.extend_from_slice(&t.data()[row * d..(row + 1) * d]);
                    }
                    Tensor::from_vec(vec![rows.len(), d], data)
                })
            })
            .collect();
        ObservationSequence::new(values)
    }
}

/// A parameterized state-space model: initial, transition, and observation
/// distributions, all diagonal location-scale Gaussians in the model's
/// unconstrained state/observation coordinates.
///
/// States are `[B, state_dim]` tensors (one row per particle or trajectory);
/// log-densities come back as `[B]`. Time indices are 1-based with
/// `t ∈ [1, horizon]`.
pub trait StateSpaceModel: Send + Sync {
    fn horizon(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;

    /// The model's observation schedule at time `t`.
    fn observes_at(&self, t: usize) -> bool;

    /// Named learnable parameters θ.
    fn params(&self) -> &Params;

    /// The same model with θ replaced (used to run sweeps on watched copies).
    fn with_params(&self, params: Params) -> Box<dyn StateSpaceModel>;

    /// Location and scale of `p(x_1)`; shapes broadcast against `[B, D]`.
    fn initial_loc_scale(&self) -> (Tensor, Tensor);

    /// Location and scale of `p(x_t | x_{t−1})` for `t ∈ [2, T]`.
    fn transition_loc_scale(&self, x_prev: &Tensor, t: usize) -> (Tensor, Tensor);

    /// Location and scale of `p(y_t | x_t)` where the mask is true.
    fn observation_loc_scale(&self, x_t: &Tensor, t: usize) -> (Tensor, Tensor);

    fn initial_logpdf(&self, x1: &Tensor) -> Tensor {
        self.check_state_shape(x1);
        let (loc, scale) = self.initial_loc_scale();
        gaussian_logpdf(x1, &loc, &scale.square()).sum_rows()
    }

    fn transition_logpdf(&self, x_prev: &Tensor, x_t: &Tensor, t: usize) -> Tensor {
        assert!(t >= 2 && t <= self.horizon(), "transition time {t} outside [2, {}]", self.horizon());
        self.check_state_shape(x_prev);
        self.check_state_shape(x_t);
        let (loc, scale) = self.transition_loc_scale(x_prev, t);
        gaussian_logpdf(x_t, &loc, &scale.square()).sum_rows()
    }

    fn observation_logpdf(&self, x_t: &Tensor, y_t: &Tensor, t: usize) -> Tensor {
        assert!(self.observes_at(t), "no observation scheduled at t={t}");
        self.check_state_shape(x_t);
        // A single observation row scores a whole particle batch: drop the
        // unit row axis so it row-broadcasts against [K, obs_dim] terms.
        let y = if y_t.shape() == [1, self.obs_dim()] {
            y_t.reshape(vec![self.obs_dim()])
        } else {
            y_t.clone()
        };
        let (loc, scale) = self.observation_loc_scale(x_t, t);
        let lp = gaussian_logpdf(&y, &loc, &scale.square());
        if lp.shape().len() == 1 {
            // fully broadcast down to [obs_dim] by a scalar loc and scale
            lp.reshape(vec![1, self.obs_dim()]).sum_rows()
        } else {
            lp.sum_rows()
        }
    }

    /// `log Σ_i w_i p(y_{t+1} | x_{t+1} = loc + scale·z_i)`: the quadrature
    /// estimate of the one-step lookahead density at each particle row.
    fn quadrature_lookahead(
        &self,
        rule: &QuadratureRule,
        x_t: &Tensor,
        y_next: &Tensor,
        t: usize,
    ) -> Result<Tensor, ModelError>;

    /// Ancestral sampling of `batch` joint trajectories via reparameterized
    /// draws. Returns per-timestep `[B, D]` latents and the observations.
    fn sample_paths(&self, rng: &mut RngStream, batch: usize) -> (Vec<Tensor>, ObservationSequence) {
        let (t_max, d) = (self.horizon(), self.state_dim());
        let mut latents = Vec::with_capacity(t_max);
        let mut values = Vec::with_capacity(t_max);
        let (loc, scale) = self.initial_loc_scale();
        let mut x = &loc + &(&scale * &rng.standard_normal(&[batch, d]));
        for t in 1..=t_max {
            if t > 1 {
                let (loc, scale) = self.transition_loc_scale(&x, t);
                x = &loc + &(&scale * &rng.standard_normal(&[batch, d]));
            }
            latents.push(x.clone());
            values.push(if self.observes_at(t) {
                let (loc, scale) = self.observation_loc_scale(&x, t);
                Some(&loc + &(&scale * &rng.standard_normal(&[batch, self.obs_dim()])))
            } else {
                None
            });
        }
        (latents, ObservationSequence::new(values))
    }

    /// Convenience: one trajectory.
    fn sample_joint(&self, rng: &mut RngStream) -> (Vec<Tensor>, ObservationSequence) {
        self.sample_paths(rng, 1)
    }

    fn check_state_shape(&self, x: &Tensor) {
        let s = x.shape();
        assert!(
            s.len() == 2 && s[1] == self.state_dim(),
            "state shape {s:?}, want [B, {}]",
            self.state_dim()
        );
    }
}
