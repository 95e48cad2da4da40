//! Stochastic volatility: N independent AR(1) latent log-variances driving
//! mean-zero observations,
//!
//!   x_1 ~ N(0, Q),  x_t = μ + φ⊙(x_{t−1} − μ) + ν_t,  ν_t ~ N(0, Q),
//!   y_t = β ⊙ exp(x_t / 2) ⊙ e_t,  e_t ~ N(0, I),
//!
//! with diagonal Q and observations at every step. φ is learned in the
//! unconstrained space through tanh, keeping |φ| < 1 (stationarity); trained
//! values sit in [0, 1] in practice.

use super::{ModelError, ObservationSequence, StateSpaceModel};
use crate::numerics::{gaussian_logpdf, logsumexp_across, Params, QuadratureRule, Tensor};

/// Diagonal stochastic volatility model; 4N learnable parameters.
#[derive(Clone, Debug)]
pub struct SvmModel {
    n_dim: usize,
    t_horizon: usize,
    params: Params,
}

impl SvmModel {
    /// Builds the model from named parameter vectors, each of length N.
    pub fn new(
        t_horizon: usize,
        mu: Vec<f64>,
        phi_unconstrained: Vec<f64>,
        log_beta: Vec<f64>,
        log_q_diag: Vec<f64>,
    ) -> Self {
        let n_dim = mu.len();
        assert!(n_dim >= 1 && t_horizon >= 1, "empty SVM");
        assert!(
            phi_unconstrained.len() == n_dim && log_beta.len() == n_dim && log_q_diag.len() == n_dim,
            "parameter vectors must share length N"
        );
        let mut params = Params::new();
        params.insert("mu", Tensor::column(mu));
        params.insert("phi_unconstrained", Tensor::column(phi_unconstrained));
        params.insert("log_beta", Tensor::column(log_beta));
        params.insert("log_q_diag", Tensor::column(log_q_diag));
        SvmModel { n_dim, t_horizon, params }
    }

    /// Unit-scale model: μ=0, φ=tanh(arctanh 0.1)=0.1, β=1, Q=I.
    pub fn standard(t_horizon: usize, n_dim: usize) -> Self {
        SvmModel::new(
            t_horizon,
            vec![0.0; n_dim],
            vec![0.1f64.atanh(); n_dim],
            vec![0.0; n_dim],
            vec![0.0; n_dim],
        )
    }

    /// Random initialization: μ ~ N(0, 0.3), φ_u ~ N(arctanh 0.1, 0.3),
    /// log β ~ N(0, 0.3), log Q ~ N(0, 0.3).
    pub fn random_init(t_horizon: usize, n_dim: usize, rng: &mut crate::numerics::RngStream) -> Self {
        let sd = 0.3f64.sqrt();
        let draw = |rng: &mut crate::numerics::RngStream, mean: f64| {
            (0..n_dim).map(|_| mean + sd * rng.normal_f64()).collect::<Vec<f64>>()
        };
        SvmModel::new(
            t_horizon,
            draw(rng, 0.0),
            draw(rng, 0.1f64.atanh()),
            draw(rng, 0.0),
            draw(rng, 0.0),
        )
    }

    /// Constrained φ = tanh(φ_u), shape [N].
    pub fn phi(&self) -> Tensor {
        self.params.get("phi_unconstrained").tanh()
    }

    fn mu(&self) -> &Tensor {
        self.params.get("mu")
    }

    /// √Q as a [N] row scale.
    fn q_scale(&self) -> Tensor {
        (self.params.get("log_q_diag") * 0.5).exp()
    }

    fn beta(&self) -> Tensor {
        self.params.get("log_beta").exp()
    }
}

impl StateSpaceModel for SvmModel {
    fn horizon(&self) -> usize {
        self.t_horizon
    }

    fn state_dim(&self) -> usize {
        self.n_dim
    }

    fn obs_dim(&self) -> usize {
        self.n_dim
    }

    fn observes_at(&self, _t: usize) -> bool {
        true
    }

    fn params(&self) -> &Params {
        &self.params
    }

    fn with_params(&self, params: Params) -> Box<dyn StateSpaceModel> {
        Box::new(SvmModel { n_dim: self.n_dim, t_horizon: self.t_horizon, params })
    }

    fn initial_loc_scale(&self) -> (Tensor, Tensor) {
        (Tensor::zeros(vec![self.n_dim]), self.q_scale())
    }

    fn transition_loc_scale(&self, x_prev: &Tensor, _t: usize) -> (Tensor, Tensor) {
        let mu = self.mu();
        (mu + &(&self.phi() * &(x_prev - mu)), self.q_scale())
    }

    fn observation_loc_scale(&self, x_t: &Tensor, _t: usize) -> (Tensor, Tensor) {
        (Tensor::scalar(0.0), &self.beta() * &(x_t * 0.5).exp())
    }

    fn quadrature_lookahead(
        &self,
        rule: &QuadratureRule,
        x_t: &Tensor,
        y_next: &Tensor,
        t: usize,
    ) -> Result<Tensor, ModelError> {
        // Transition and observation both factorize over dimensions, so the
        // lookahead is a sum of N one-dimensional quadratures.
        let (loc, scale) = self.transition_loc_scale(x_t, t + 1);
        let k = loc.shape()[0];
        assert_eq!(y_next.len(), self.n_dim, "lookahead wants a single observation row");
        let beta = self.beta();
        let mut total = Tensor::zeros(vec![k]);
        for n in 0..self.n_dim {
            let sel = selector(self.n_dim, n);
            let loc_n = loc.matmul(&sel).reshape(vec![k]);
            let scale_n = scale.gather_rows(&[n]);
            let y_n = Tensor::scalar(y_next.data()[n]);
            let beta_n = beta.gather_rows(&[n]);
            let cols = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&z, &w)| {
                    let x_next = &loc_n + &(&scale_n * z);
                    let obs_scale = &beta_n * &(&x_next * 0.5).exp();
                    &gaussian_logpdf(&y_n, &Tensor::scalar(0.0), &obs_scale.square()) + w.ln()
                })
                .collect::<Vec<_>>();
            total = &total + &logsumexp_across(&cols);
        }
        Ok(total)
    }
}

/// `[D, 1]` one-hot column picking dimension `n` out of `D`.
fn selector(d: usize, n: usize) -> Tensor {
    let mut col = vec![0.0; d];
    col[n] = 1.0;
    Tensor::from_vec(vec![d, 1], col)
}

/// Parses comma-separated returns: T rows × N columns, optional header.
pub fn parse_returns_csv(text: &str) -> Result<Vec<Vec<f64>>, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match cells {
            Ok(row) => {
                if let Some(first) = rows.first() {
                    if row.len() != first.len() {
                        return Err(format!(
                            "line {}: {} columns, expected {}",
                            i + 1,
                            row.len(),
                            first.len()
                        ));
                    }
                }
                rows.push(row);
            }
            Err(e) => {
                if i == 0 && rows.is_empty() {
                    continue; // header row
                }
                return Err(format!("line {}: {e}", i + 1));
            }
        }
    }
    if rows.is_empty() {
        return Err("no data rows".into());
    }
    Ok(rows)
}

impl SvmModel {
    /// Model sized to a T×N matrix of log returns, standard initialization.
    pub fn from_returns(rows: &[Vec<f64>]) -> (Self, ObservationSequence) {
        let t_horizon = rows.len();
        let n_dim = rows[0].len();
        let model = SvmModel::standard(t_horizon, n_dim);
        let values = rows
            .iter()
            .map(|r| Some(Tensor::from_vec(vec![1, n_dim], r.clone())))
            .collect();
        (model, ObservationSequence::new(values))
    }
}
