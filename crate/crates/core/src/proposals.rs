//! Proposal distributions q(x_t | x_{t−1}, y_{1:T}) with reparameterized
//! sampling: the bootstrap (prior) proposal, a per-timestep affine-Gaussian
//! family conditioned on the terminal observation, and a Gaussian
//! perturbation of the prior transition whose product form keeps the
//! transition density out of the weight arithmetic.

use crate::models::{ObservationSequence, StateSpaceModel};
use crate::numerics::{gaussian_logpdf, Params, RngStream, Tensor};

/// One timestep of proposed particles.
#[derive(Clone, Debug)]
pub struct Proposed {
    /// Sampled states `[K, D]`, a differentiable function of the proposal
    /// (and, through the location, the model) parameters.
    pub x: Tensor,
    /// Proposal log-density at the sample, `[K]`.
    pub log_q: Tensor,
    /// `log q − log p(x_t | x_{t−1})` when the proposal knows the difference
    /// in closed form, `[K]`. The weight update can then skip both densities
    /// and the cancellation between them; `None` means the caller evaluates
    /// the transition itself.
    pub prior_residual: Option<Tensor>,
}

pub trait Proposal: Send + Sync {
    /// Named learnable parameters (empty for the bootstrap).
    fn params(&self) -> &Params;

    /// The same proposal with parameters replaced.
    fn with_params(&self, params: Params) -> Box<dyn Proposal>;

    /// Draw `k` particles for step `t` by reparameterization (loc + scale·ε)
    /// and evaluate log q at the draw. `x_prev` is `[K, D]`, absent iff t=1.
    fn propose(
        &self,
        model: &dyn StateSpaceModel,
        rng: &mut RngStream,
        t: usize,
        x_prev: Option<&Tensor>,
        observations: &ObservationSequence,
        k: usize,
    ) -> Proposed;

    /// Proposal log-density at arbitrary states `x` `[K, D]`, `[K]`.
    fn log_density(
        &self,
        model: &dyn StateSpaceModel,
        t: usize,
        x_prev: Option<&Tensor>,
        observations: &ObservationSequence,
        x: &Tensor,
    ) -> Tensor;

    /// Whether this proposal draws straight from the model prior (lets bound
    /// configs recognize a bootstrap filter).
    fn is_bootstrap(&self) -> bool {
        false
    }
}

fn check_step(model: &dyn StateSpaceModel, t: usize, x_prev: Option<&Tensor>) {
    assert!(t >= 1 && t <= model.horizon(), "proposal time {t} outside [1, {}]", model.horizon());
    assert_eq!(x_prev.is_some(), t > 1, "x_prev must be present exactly when t > 1");
    if let Some(xp) = x_prev {
        model.check_state_shape(xp);
    }
}

/// Sum a per-element log-density over state dimensions: `[K, D] → [K]`,
/// anything fully broadcast down stays a length-1 column.
fn row_total(lp: &Tensor) -> Tensor {
    if lp.shape().len() == 2 {
        lp.sum_rows()
    } else {
        lp.sum_all()
    }
}

/// Product of two Gaussian densities, `N(x; mean1, var1)·N(x; mean2, var2) =
/// exp(log_norm)·N(x; mean, var)`, elementwise over broadcastable tensors.
///
/// `mean = (var2·mean1 + var1·mean2)/(var1 + var2)`,
/// `var = var1·var2/(var1 + var2)`,
/// `log_norm = gaussian_logpdf(mean1, mean2, var1 + var2)`.
pub fn gaussian_product(
    mean1: &Tensor,
    var1: &Tensor,
    mean2: &Tensor,
    var2: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    for v in [var1, var2] {
        assert!(v.data().iter().all(|x| *x > 0.0), "gaussian_product needs positive variances");
    }
    let total = var1 + var2;
    let mean = &(&(var2 * mean1) + &(var1 * mean2)) / &total;
    let var = &(var1 * var2) / &total;
    let log_norm = gaussian_logpdf(mean1, mean2, &total);
    (mean, var, log_norm)
}

/// Proposes straight from the model prior: log q is the transition (or
/// initial) log-density, so incremental weights under a unit twist reduce to
/// observation likelihoods.
#[derive(Clone, Debug, Default)]
pub struct BootstrapProposal {
    params: Params,
}

impl BootstrapProposal {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Proposal for BootstrapProposal {
    fn params(&self) -> &Params {
        &self.params
    }

    fn with_params(&self, params: Params) -> Box<dyn Proposal> {
        assert!(params.is_empty(), "bootstrap proposal has no parameters");
        Box::new(BootstrapProposal::new())
    }

    fn propose(
        &self,
        model: &dyn StateSpaceModel,
        rng: &mut RngStream,
        t: usize,
        x_prev: Option<&Tensor>,
        _observations: &ObservationSequence,
        k: usize,
    ) -> Proposed {
        check_step(model, t, x_prev);
        let (loc, scale) = match x_prev {
            None => model.initial_loc_scale(),
            Some(xp) => model.transition_loc_scale(xp, t),
        };
        let eps = rng.standard_normal(&[k, model.state_dim()]);
        let x = &loc + &(&scale * &eps);
        let log_q = row_total(&gaussian_logpdf(&x, &loc, &scale.square()));
        // log q is the transition density itself, so the residual vanishes.
        Proposed { x, log_q, prior_residual: Some(Tensor::zeros(vec![k])) }
    }

    fn log_density(
        &self,
        model: &dyn StateSpaceModel,
        t: usize,
        x_prev: Option<&Tensor>,
        _observations: &ObservationSequence,
        x: &Tensor,
    ) -> Tensor {
        check_step(model, t, x_prev);
        match x_prev {
            None => model.initial_logpdf(x),
            Some(xp) => model.transition_logpdf(xp, x, t),
        }
    }

    fn is_bootstrap(&self) -> bool {
        true
    }
}

/// Scalar-state proposal `q_t(x_t | x_{t−1}, y) = N(x_t; a_t·x_{t−1} + b_t·y
/// + c_t, exp(log_var_t))` conditioned on the last observed value `y`. The
/// `a` coefficient is absent at t=1, so the parameter count is 4T−1.
#[derive(Clone, Debug)]
pub struct AffineGaussianProposal {
    t_horizon: usize,
    params: Params,
}

impl AffineGaussianProposal {
    /// All coefficients zero and unit variances: every step proposes N(0, 1).
    pub fn new(t_horizon: usize) -> Self {
        assert!(t_horizon >= 2, "affine proposal needs a horizon of at least 2");
        let mut params = Params::new();
        params.insert("a", Tensor::zeros(vec![t_horizon - 1]));
        params.insert("b", Tensor::zeros(vec![t_horizon]));
        params.insert("c", Tensor::zeros(vec![t_horizon]));
        params.insert("log_var", Tensor::zeros(vec![t_horizon]));
        AffineGaussianProposal { t_horizon, params }
    }

    /// Coefficients of the exact smoothing-optimal proposal for the
    /// drift-diffusion model: with r = T−t+1, mean (r·x_{t−1} + y)/(r+1) and
    /// variance r/(r+1) (at t=1 the x term is replaced by weighting y alone).
    /// Drift offsets cancel between transition and observation, so no bias
    /// term is needed for any drift value.
    pub fn gdd_optimal(t_horizon: usize) -> Self {
        let t_f = t_horizon as f64;
        let mut a = Vec::with_capacity(t_horizon - 1);
        let mut b = vec![1.0 / (t_f + 1.0)];
        let mut log_var = vec![(t_f / (t_f + 1.0)).ln()];
        for t in 2..=t_horizon {
            let r = t_f - t as f64 + 1.0;
            a.push(r / (r + 1.0));
            b.push(1.0 / (r + 1.0));
            log_var.push((r / (r + 1.0)).ln());
        }
        let mut proposal = Self::new(t_horizon);
        proposal.params.set("a", Tensor::from_vec(vec![t_horizon - 1], a));
        proposal.params.set("b", Tensor::from_vec(vec![t_horizon], b));
        proposal.params.set("log_var", Tensor::from_vec(vec![t_horizon], log_var));
        proposal
    }

    /// Location (broadcastable to `[K]`) and scale `[1]` at step `t`.
    fn loc_scale(&self, t: usize, x_prev: Option<&Tensor>, y: f64) -> (Tensor, Tensor) {
        let b = self.params.get("b").gather_rows(&[t - 1]);
        let c = self.params.get("c").gather_rows(&[t - 1]);
        let log_var = self.params.get("log_var").gather_rows(&[t - 1]);
        let mut loc = &(y * &b) + &c;
        if let Some(xp) = x_prev {
            let a = self.params.get("a").gather_rows(&[t - 2]);
            let k = xp.shape()[0];
            loc = &(&xp.reshape(vec![k]) * &a) + &loc;
        }
        (loc, (0.5 * &log_var).exp())
    }
}

impl Proposal for AffineGaussianProposal {
    fn params(&self) -> &Params {
        &self.params
    }

    fn with_params(&self, params: Params) -> Box<dyn Proposal> {
        for (name, len) in
            [("a", self.t_horizon - 1), ("b", self.t_horizon), ("c", self.t_horizon), ("log_var", self.t_horizon)]
        {
            assert_eq!(params.get(name).len(), len, "parameter {name:?} has the wrong length");
        }
        Box::new(AffineGaussianProposal { t_horizon: self.t_horizon, params })
    }

    fn propose(
        &self,
        model: &dyn StateSpaceModel,
        rng: &mut RngStream,
        t: usize,
        x_prev: Option<&Tensor>,
        observations: &ObservationSequence,
        k: usize,
    ) -> Proposed {
        check_step(model, t, x_prev);
        assert_eq!(model.state_dim(), 1, "affine-Gaussian proposal is scalar-state");
        assert_eq!(self.t_horizon, model.horizon(), "proposal and model horizons differ");
        let y = observations.terminal_value();
        let (loc, scale) = self.loc_scale(t, x_prev, y);
        let eps = rng.standard_normal(&[k]);
        let x = &loc + &(&scale * &eps);
        let log_q = gaussian_logpdf(&x, &loc, &scale.square());
        Proposed { x: x.reshape(vec![k, 1]), log_q, prior_residual: None }
    }

    fn log_density(
        &self,
        model: &dyn StateSpaceModel,
        t: usize,
        x_prev: Option<&Tensor>,
        observations: &ObservationSequence,
        x: &Tensor,
    ) -> Tensor {
        check_step(model, t, x_prev);
        model.check_state_shape(x);
        let y = observations.terminal_value();
        let (loc, scale) = self.loc_scale(t, x_prev, y);
        let k = x.shape()[0];
        gaussian_logpdf(&x.reshape(vec![k]), &loc, &scale.square())
    }
}

/// Multiplies the prior transition by a learnable per-timestep diagonal
/// Gaussian N(x_t; μ_t, exp(log_var_t)); the effective proposal is the
/// closed-form product Gaussian, and the transition factor cancels out of
/// `log q − log p` analytically. 2NT parameters.
#[derive(Clone, Debug)]
pub struct PerturbationProposal {
    t_horizon: usize,
    n_dim: usize,
    params: Params,
}

impl PerturbationProposal {
    /// Zero means and unit perturbation variances.
    pub fn new(t_horizon: usize, n_dim: usize) -> Self {
        assert!(t_horizon >= 1 && n_dim >= 1);
        let mut params = Params::new();
        params.insert("mean", Tensor::zeros(vec![t_horizon, n_dim]));
        params.insert("log_var", Tensor::zeros(vec![t_horizon, n_dim]));
        PerturbationProposal { t_horizon, n_dim, params }
    }

    /// Prior loc/var plus the perturbation row at step `t`.
    fn factors(
        &self,
        model: &dyn StateSpaceModel,
        t: usize,
        x_prev: Option<&Tensor>,
    ) -> (Tensor, Tensor, Tensor, Tensor) {
        assert_eq!(self.n_dim, model.state_dim(), "proposal and model dimensions differ");
        assert_eq!(self.t_horizon, model.horizon(), "proposal and model horizons differ");
        let (prior_loc, prior_scale) = match x_prev {
            None => model.initial_loc_scale(),
            Some(xp) => model.transition_loc_scale(xp, t),
        };
        let mu = self.params.get("mean").gather_rows(&[t - 1]).reshape(vec![self.n_dim]);
        let var = self.params.get("log_var").gather_rows(&[t - 1]).reshape(vec![self.n_dim]).exp();
        (prior_loc, prior_scale.square(), mu, var)
    }
}

impl Proposal for PerturbationProposal {
    fn params(&self) -> &Params {
        &self.params
    }

    fn with_params(&self, params: Params) -> Box<dyn Proposal> {
        for name in ["mean", "log_var"] {
            assert_eq!(
                params.get(name).shape(),
                [self.t_horizon, self.n_dim],
                "parameter {name:?} has the wrong shape"
            );
        }
        Box::new(PerturbationProposal { t_horizon: self.t_horizon, n_dim: self.n_dim, params })
    }

    fn propose(
        &self,
        model: &dyn StateSpaceModel,
        rng: &mut RngStream,
        t: usize,
        x_prev: Option<&Tensor>,
        _observations: &ObservationSequence,
        k: usize,
    ) -> Proposed {
        check_step(model, t, x_prev);
        let (prior_loc, prior_var, mu, pert_var) = self.factors(model, t, x_prev);
        let (loc, var, log_norm) = gaussian_product(&prior_loc, &prior_var, &mu, &pert_var);
        let eps = rng.standard_normal(&[k, self.n_dim]);
        let x = &loc + &(&var.sqrt() * &eps);
        let log_q = row_total(&gaussian_logpdf(&x, &loc, &var));
        // q = p_trans · pert / norm, so log q − log p_trans needs no
        // transition evaluation and no cancellation between large terms.
        let residual = &row_total(&gaussian_logpdf(&x, &mu, &pert_var)) - &row_total(&log_norm);
        Proposed { x, log_q, prior_residual: Some(residual) }
    }

    fn log_density(
        &self,
        model: &dyn StateSpaceModel,
        t: usize,
        x_prev: Option<&Tensor>,
        _observations: &ObservationSequence,
        x: &Tensor,
    ) -> Tensor {
        check_step(model, t, x_prev);
        model.check_state_shape(x);
        let (prior_loc, prior_var, mu, pert_var) = self.factors(model, t, x_prev);
        let (loc, var, _) = gaussian_product(&prior_loc, &prior_var, &mu, &pert_var);
        row_total(&gaussian_logpdf(x, &loc, &var))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::gdd::GddModel;
    use crate::models::svm::SvmModel;
    use crate::numerics::{gauss_hermite_rule, grad, Tape, LN_2PI};
    use approx::assert_abs_diff_eq;

    fn scalar(v: f64) -> Tensor {
        Tensor::scalar(v)
    }

    #[test]
    fn gaussian_product_frozen_values() {
        let (m, v, z) = gaussian_product(&scalar(0.0), &scalar(1.0), &scalar(2.0), &scalar(1.0));
        assert_abs_diff_eq!(m.value(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.value(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(z.value(), -0.5 * (LN_2PI + 2f64.ln()) - 1.0, epsilon = 1e-15);

        // Identical factors square the density: N(m, v)² ∝ N(m, v/2).
        let (m, v, z) = gaussian_product(&scalar(3.0), &scalar(0.8), &scalar(3.0), &scalar(0.8));
        assert_abs_diff_eq!(m.value(), 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.value(), 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(z.value(), -0.5 * (LN_2PI + 1.6f64.ln()), epsilon = 1e-15);
    }

    #[test]
    #[should_panic(expected = "positive variances")]
    fn gaussian_product_rejects_nonpositive_variance() {
        gaussian_product(&scalar(0.0), &scalar(0.0), &scalar(1.0), &scalar(1.0));
    }

    /// ∫ N(x; m1, v1) N(x; m2, v2) dx must equal the closed-form normalizer.
    #[test]
    fn gaussian_product_integral_recovers_the_normalizer() {
        let rule = gauss_hermite_rule(60);
        for (m1, v1, m2, v2) in [(0.0, 1.0, 2.0, 1.0), (-1.0, 0.5, 3.0, 2.0), (0.3, 4.0, 0.1, 0.2)] {
            let (pm, pv, z) = gaussian_product(&scalar(m1), &scalar(v1), &scalar(m2), &scalar(v2));
            let (pm, pv, z) = (pm.value(), pv.value(), z.value());
            // Importance quadrature against a base Gaussian twice as wide as
            // the product, which dominates its tails.
            let (bm, bv) = (pm, 2.0 * pv);
            let logpdf = |x: f64, m: f64, v: f64| -0.5 * (LN_2PI + v.ln()) - (x - m).powi(2) / (2.0 * v);
            let integral = rule.expect(|node| {
                let x = bm + bv.sqrt() * node;
                (logpdf(x, m1, v1) + logpdf(x, m2, v2) - logpdf(x, bm, bv)).exp()
            });
            assert_abs_diff_eq!(integral, z.exp(), epsilon = 1e-10);
        }
    }

    #[test]
    fn bootstrap_log_q_is_the_prior_density() {
        let model = GddModel::new(10, 0.3);
        let obs = ObservationSequence::terminal(10, 1.0);
        let q = BootstrapProposal::new();
        let mut rng = RngStream::new(7).split("bootstrap");

        let first = q.propose(&model, &mut rng, 1, None, &obs, 5);
        assert_eq!(first.x.shape(), [5, 1]);
        let want = model.initial_logpdf(&first.x);
        for (got, want) in first.log_q.data().iter().zip(want.data()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
        assert!(first.prior_residual.unwrap().data().iter().all(|r| *r == 0.0));

        let step = q.propose(&model, &mut rng, 3, Some(&first.x), &obs, 5);
        let want = model.transition_logpdf(&first.x, &step.x, 3);
        for (got, want) in step.log_q.data().iter().zip(want.data()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    /// With every coefficient zero and log_var zero, the draw is exactly the
    /// standard-normal noise that reparameterization injects.
    #[test]
    fn zeroed_affine_proposal_is_a_standard_normal_draw() {
        let model = GddModel::new(10, 0.7);
        let obs = ObservationSequence::terminal(10, -2.0);
        let q = AffineGaussianProposal::new(10);
        let x_prev = Tensor::from_vec(vec![4, 1], vec![5.0, -1.0, 0.2, 9.0]);

        let mut rng = RngStream::new(21).split("affine");
        let eps = rng.clone().standard_normal(&[4]);
        let out = q.propose(&model, &mut rng, 4, Some(&x_prev), &obs, 4);
        assert_eq!(out.x.data(), eps.data());
        for (lq, e) in out.log_q.data().iter().zip(eps.data()) {
            assert_abs_diff_eq!(*lq, -0.5 * LN_2PI - 0.5 * e * e, epsilon = 1e-12);
        }
        assert!(out.prior_residual.is_none());
    }

    #[test]
    fn affine_parameter_count_is_4t_minus_1() {
        assert_eq!(AffineGaussianProposal::new(10).params().total_len(), 39);
        assert_eq!(AffineGaussianProposal::gdd_optimal(25).params().total_len(), 99);
    }

    #[test]
    fn perturbation_parameter_count_is_2nt() {
        assert_eq!(PerturbationProposal::new(12, 3).params().total_len(), 72);
    }

    /// The closed-form coefficient setting reproduces the analytic smoothing
    /// proposal density everywhere, for a drift well away from zero.
    #[test]
    fn gdd_optimal_affine_matches_the_analytic_proposal() {
        let model = GddModel::new(10, 1.3);
        let analytics = model.analytics();
        let y = 4.0;
        let obs = ObservationSequence::terminal(10, y);
        let q = AffineGaussianProposal::gdd_optimal(10);
        let grid = [-2.0, 0.0, 1.5, 6.0];
        for (t, x_prev) in [(1, None), (5, Some(0.8)), (10, Some(-0.4))] {
            let xp = x_prev.map(|v| Tensor::from_vec(vec![1, 1], vec![v]));
            let (mean, var) = analytics.optimal_proposal(t, x_prev, y);
            for x in grid {
                let got = q
                    .log_density(&model, t, xp.as_ref(), &obs, &Tensor::from_vec(vec![1, 1], vec![x]))
                    .value();
                let want = -0.5 * (LN_2PI + var.ln()) - (x - mean).powi(2) / (2.0 * var);
                assert_abs_diff_eq!(got, want, epsilon = 1e-12);
            }
        }
    }

    /// A perturbation with variance 10⁶ barely reweights the prior.
    #[test]
    fn huge_perturbation_variance_degenerates_to_the_prior() {
        let model = SvmModel::standard(6, 2);
        let mut params = PerturbationProposal::new(6, 2).params().clone();
        params.set("log_var", Tensor::full(vec![6, 2], 1e6f64.ln()));
        let q = PerturbationProposal::new(6, 2).with_params(params);
        let obs = ObservationSequence::terminal(6, 0.5);
        let mut rng = RngStream::new(3).split("wide");
        let x_prev = rng.standard_normal(&[8, 2]);
        let out = q.propose(&model, &mut rng, 3, Some(&x_prev), &obs, 8);
        let prior = model.transition_logpdf(&x_prev, &out.x, 3);
        for (lq, lp) in out.log_q.data().iter().zip(prior.data()) {
            assert_abs_diff_eq!(lq, lp, epsilon = 1e-3);
        }
        for r in out.prior_residual.unwrap().data() {
            assert!(r.abs() < 1e-3, "residual {r} should be negligible");
        }
    }

    /// log q must equal transition + perturbation − normalizer exactly; the
    /// residual is that same identity rearranged.
    #[test]
    fn perturbation_log_q_matches_the_normalized_product() {
        let model = SvmModel::standard(6, 2);
        let mut params = PerturbationProposal::new(6, 2).params().clone();
        params.set(
            "mean",
            Tensor::from_vec(vec![6, 2], (0..12).map(|i| 0.3 * i as f64 - 1.0).collect()),
        );
        params.set(
            "log_var",
            Tensor::from_vec(vec![6, 2], (0..12).map(|i| 0.2 * (i % 5) as f64 - 0.4).collect()),
        );
        let q = PerturbationProposal::new(6, 2).with_params(params.clone());
        let obs = ObservationSequence::terminal(6, 0.5);
        let mut rng = RngStream::new(9).split("product");
        let x_prev = rng.standard_normal(&[5, 2]);
        let t = 4;
        let out = q.propose(&model, &mut rng, t, Some(&x_prev), &obs, 5);

        let mu = params.get("mean").gather_rows(&[t - 1]).reshape(vec![2]);
        let pert_var = params.get("log_var").gather_rows(&[t - 1]).reshape(vec![2]).exp();
        let (prior_loc, prior_scale) = model.transition_loc_scale(&x_prev, t);
        let lp_trans = model.transition_logpdf(&x_prev, &out.x, t);
        let lp_pert = gaussian_logpdf(&out.x, &mu, &pert_var).sum_rows();
        let log_norm =
            gaussian_logpdf(&prior_loc, &mu, &(&prior_scale.square() + &pert_var)).sum_rows();
        for i in 0..5 {
            let want = lp_trans.data()[i] + lp_pert.data()[i] - log_norm.data()[i];
            assert_abs_diff_eq!(out.log_q.data()[i], want, epsilon = 1e-10);
            let residual = out.prior_residual.as_ref().unwrap().data()[i];
            assert_abs_diff_eq!(residual, out.log_q.data()[i] - lp_trans.data()[i], epsilon = 1e-10);
        }
    }

    /// exp(log_density) must integrate to one over x_t for every family.
    #[test]
    fn every_family_normalizes_over_the_state() {
        let model = GddModel::new(10, 0.4);
        let obs = ObservationSequence::terminal(10, 2.0);
        let x_prev = Tensor::from_vec(vec![1, 1], vec![0.9]);
        let mut wide = PerturbationProposal::new(10, 1).params().clone();
        wide.set("mean", Tensor::full(vec![10, 1], 0.7));
        wide.set("log_var", Tensor::full(vec![10, 1], 0.3));
        let families: Vec<Box<dyn Proposal>> = vec![
            Box::new(BootstrapProposal::new()),
            Box::new(AffineGaussianProposal::gdd_optimal(10)),
            PerturbationProposal::new(10, 1).with_params(wide),
        ];
        let rule = gauss_hermite_rule(48);
        for q in &families {
            for (t, xp) in [(1, None), (6, Some(&x_prev))] {
                // Base the quadrature at the proposal's own draw, with a
                // variance wide enough to dominate any family used here.
                let mut rng = RngStream::new(5).split("normalize");
                let center = q.propose(&model, &mut rng, t, xp, &obs, 1).x.value();
                let (bm, bv): (f64, f64) = (center, 2.0);
                let total = rule.expect(|node| {
                    let x = bm + bv.sqrt() * node;
                    let lq = q
                        .log_density(&model, t, xp, &obs, &Tensor::from_vec(vec![1, 1], vec![x]))
                        .value();
                    let lb = -0.5 * (LN_2PI + bv.ln()) - (x - bm).powi(2) / (2.0 * bv);
                    (lq - lb).exp()
                });
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
            }
        }
    }

    /// propose's reported log q agrees with log_density at the sample.
    #[test]
    fn propose_agrees_with_log_density_at_the_sample() {
        let gdd = GddModel::new(10, 0.4);
        let svm = SvmModel::standard(10, 2);
        let obs = ObservationSequence::terminal(10, 2.0);
        let mut rng = RngStream::new(13).split("consistency");
        let cases: Vec<(Box<dyn Proposal>, &dyn StateSpaceModel)> = vec![
            (Box::new(BootstrapProposal::new()), &gdd),
            (Box::new(AffineGaussianProposal::gdd_optimal(10)), &gdd),
            (Box::new(PerturbationProposal::new(10, 2)), &svm),
        ];
        for (q, model) in &cases {
            let x_prev = rng.standard_normal(&[6, model.state_dim()]);
            for (t, xp) in [(1, None), (7, Some(&x_prev))] {
                let out = q.propose(*model, &mut rng, t, xp, &obs, 6);
                let again = q.log_density(*model, t, xp, &obs, &out.x);
                for (a, b) in out.log_q.data().iter().zip(again.data()) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                }
            }
        }
    }

    use crate::testutil::{assert_close_rel, central_diff};

    /// With a frozen noise stream the sample is a differentiable function of
    /// the proposal parameters; check the whole pathway against finite
    /// differences through an objective that uses both x and log q.
    #[test]
    fn reparameterized_gradients_match_finite_differences() {
        let gdd = GddModel::new(10, 0.4);
        let svm = SvmModel::standard(10, 2);
        let obs = ObservationSequence::terminal(10, 2.0);
        let seed_rng = || RngStream::new(40).split("reparam");

        // (family, model, t) with x_prev fixed per case.
        let affine = AffineGaussianProposal::new(10);
        let perturb = PerturbationProposal::new(10, 2);
        let cases: Vec<(&dyn Proposal, &dyn StateSpaceModel, Vec<(&str, usize)>)> = vec![
            (&affine, &gdd, vec![("a", 2), ("b", 3), ("c", 3), ("log_var", 3)]),
            (&perturb, &svm, vec![("mean", 7), ("log_var", 6)]),
        ];
        for (q, model, coords) in cases {
            let t = 4;
            let x_prev = seed_rng().standard_normal(&[3, model.state_dim()]);
            let eval = |p: &Params| {
                let qp = q.with_params(p.clone());
                let out = qp.propose(model, &mut seed_rng(), t, Some(&x_prev), &obs, 3);
                (out.x.square().sum_all() + out.log_q.sum_all()).value()
            };
            let tape = Tape::new();
            let watched = q.params().watched(&tape);
            let qp = q.with_params(watched.clone());
            let out = qp.propose(model, &mut seed_rng(), t, Some(&x_prev), &obs, 3);
            let objective = out.x.square().sum_all() + out.log_q.sum_all();
            let grads = grad(&objective, &watched);
            assert!(!grads.detached_output);
            for (name, index) in coords {
                let got = grads.values.get(name).data()[index];
                let fd = central_diff(q.params(), name, index, &eval);
                assert_close_rel(got, fd, 1e-5);
            }
        }
    }

    /// Model parameters flow through the bootstrap proposal's sample, which
    /// is what lets likelihood bounds train the model with a prior proposal.
    #[test]
    fn bootstrap_samples_are_differentiable_in_model_parameters() {
        let obs = ObservationSequence::terminal(10, 2.0);
        let q = BootstrapProposal::new();
        let seed_rng = || RngStream::new(41).split("bootstrap-grad");
        let x_prev = seed_rng().standard_normal(&[4, 1]);

        let eval = |alpha: f64| {
            let model = GddModel::new(10, alpha);
            let out = q.propose(&model, &mut seed_rng(), 5, Some(&x_prev), &obs, 4);
            out.x.square().sum_all().value()
        };
        let tape = Tape::new();
        let base = GddModel::new(10, 0.4);
        let watched = base.params().watched(&tape);
        let model = base.with_params(watched.clone());
        let out = q.propose(model.as_ref(), &mut seed_rng(), 5, Some(&x_prev), &obs, 4);
        let objective = out.x.square().sum_all();
        let got = grad(&objective, &watched).values.get("alpha").value();
        let h = 1e-5;
        let fd = (eval(0.4 + h) - eval(0.4 - h)) / (2.0 * h);
        assert_close_rel(got, fd, 1e-5);
    }
}
