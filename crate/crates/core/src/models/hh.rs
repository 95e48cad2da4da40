//! Hodgkin–Huxley state-space model: membrane potential plus three ion-gate
//! activations (n, m, h) driven by the classic squid-axon kinetics, observed
//! through a noisy potential reading once per millisecond.
//!
//! The SSM step is 1 ms: 50 Euler substeps of 0.02 ms integrate the drift in
//! constrained space, then zero-mean Gaussian noise is added once in the
//! unconstrained space (gates live as logits so the state stays in (0,1)).
//! Only the external current `i_ext` is learnable.

use super::{ModelError, StateSpaceModel};
use crate::numerics::{logsumexp_across, gaussian_logpdf, Params, QuadratureRule, Tensor};

const DT: f64 = 0.02; // ms per Euler substep
const SUBSTEPS: usize = 50; // substeps per SSM step; 50 × 0.02 ms = 1 ms
const SIGMA_V_SQ: f64 = 0.18;
const SIGMA_GATE_SQ: f64 = 0.002;
const OBS_VAR: f64 = 25.0;
const INIT_V_MEAN: f64 = -65.0;
const INIT_V_VAR: f64 = 625.0; // 25 mV standard deviation

/// Membrane constants: conductances in mS/cm², potentials in mV.
#[derive(Clone, Copy, Debug)]
pub struct ChannelConstants {
    pub g_na: f64,
    pub g_k: f64,
    pub g_l: f64,
    pub e_na: f64,
    pub e_k: f64,
    pub e_l: f64,
    pub c_m: f64,
}

impl Default for ChannelConstants {
    fn default() -> Self {
        // Standard squid-axon values (textbook kinetics; the reference
        // material specifies the model only through this parameterization).
        ChannelConstants {
            g_na: 120.0,
            g_k: 36.0,
            g_l: 0.3,
            e_na: 50.0,
            e_k: -77.0,
            e_l: -54.387,
            c_m: 1.0,
        }
    }
}

/// Four-dimensional HH model; state rows are `(v, logit n, logit m, logit h)`.
#[derive(Clone, Debug)]
pub struct HhModel {
    t_horizon: usize,
    params: Params,
    channel: ChannelConstants,
    gate_init_logits: [f64; 3],
}

/// `u / (1 − exp(−u/scale))`, the rate-function quotient. The singularity at
/// u = 0 is removable; a 1e-9 shift keeps the float path off the exact zero.
fn vtrap(u: &Tensor, scale: f64) -> Tensor {
    let u = u + 1e-9;
    &u / &(1.0 - (-&u / scale).exp())
}

fn alpha_n(v: &Tensor) -> Tensor {
    0.01 * vtrap(&(v + 55.0), 10.0)
}

fn beta_n(v: &Tensor) -> Tensor {
    0.125 * (-(v + 65.0) / 80.0).exp()
}

fn alpha_m(v: &Tensor) -> Tensor {
    0.1 * vtrap(&(v + 40.0), 10.0)
}

fn beta_m(v: &Tensor) -> Tensor {
    4.0 * (-(v + 65.0) / 18.0).exp()
}

fn alpha_h(v: &Tensor) -> Tensor {
    0.07 * (-(v + 65.0) / 20.0).exp()
}

fn beta_h(v: &Tensor) -> Tensor {
    ((v + 35.0) / 10.0).sigmoid()
}

/// `[4, 1]` selector for state column `c`.
fn col(c: usize) -> Tensor {
    let mut data = vec![0.0; 4];
    data[c] = 1.0;
    Tensor::from_vec(vec![4, 1], data)
}

impl HhModel {
    pub fn new(t_horizon: usize, i_ext: f64) -> Self {
        HhModel::with_constants(t_horizon, i_ext, ChannelConstants::default())
    }

    pub fn with_constants(t_horizon: usize, i_ext: f64, channel: ChannelConstants) -> Self {
        assert!(t_horizon >= 1, "horizon must be positive");
        let mut params = Params::new();
        params.insert("i_ext", Tensor::scalar(i_ext));
        // Initial gate means: logit-space α_x(−65)/(α_x(−65) − β_x(−65)).
        // Deliberately α−β, not the true resting value α/(α+β): this rough
        // steady-state proxy is the model's defined initializer.
        let v = Tensor::scalar(INIT_V_MEAN);
        let init = |a: Tensor, b: Tensor| a.value() / (a.value() - b.value());
        let gate_init_logits = [
            init(alpha_n(&v), beta_n(&v)),
            init(alpha_m(&v), beta_m(&v)),
            init(alpha_h(&v), beta_h(&v)),
        ];
        HhModel { t_horizon, params, channel, gate_init_logits }
    }

    pub fn i_ext(&self) -> f64 {
        self.params.get("i_ext").value()
    }

    pub fn constants(&self) -> ChannelConstants {
        self.channel
    }

    /// Time derivative of the constrained state `(v, n, m, h)`, given as four
    /// `[B]` columns; `i_ext` in μA/cm².
    pub fn drift(
        &self,
        v: &Tensor,
        n: &Tensor,
        m: &Tensor,
        h: &Tensor,
        i_ext: &Tensor,
    ) -> (Tensor, Tensor, Tensor, Tensor) {
        let c = &self.channel;
        let i_na = &(c.g_na * (&(m * m) * m)) * &(h * &(v - c.e_na));
        let n2 = n * n;
        let i_k = &(c.g_k * (&n2 * &n2)) * &(v - c.e_k);
        let i_l = c.g_l * (v - c.e_l);
        let dv = (i_ext - &(&(&i_na + &i_k) + &i_l)) / c.c_m;
        let dn = &(&alpha_n(v) * &(1.0 - n)) - &(&beta_n(v) * n);
        let dm = &(&alpha_m(v) * &(1.0 - m)) - &(&beta_m(v) * m);
        let dh = &(&alpha_h(v) * &(1.0 - h)) - &(&beta_h(v) * h);
        (dv, dn, dm, dh)
    }

    /// Drift on a `[B, 4]` constrained-state matrix, returned as `[B, 4]`.
    pub fn drift_matrix(&self, constrained: &Tensor, i_ext: &Tensor) -> Tensor {
        let b = constrained.shape()[0];
        let take = |c: usize| constrained.matmul(&col(c)).reshape(vec![b]);
        let (v, n, m, h) = (take(0), take(1), take(2), take(3));
        let (dv, dn, dm, dh) = self.drift(&v, &n, &m, &h, i_ext);
        crate::numerics::stack_cols(&[dv, dn, dm, dh])
    }

    /// Deterministic 1 ms image: constrain gates, 50 Euler substeps, logit.
    pub fn euler_image(&self, x_unconstrained: &Tensor) -> Tensor {
        let b = x_unconstrained.shape()[0];
        let take = |c: usize| x_unconstrained.matmul(&col(c)).reshape(vec![b]);
        let mut v = take(0);
        let mut n = take(1).sigmoid();
        let mut m = take(2).sigmoid();
        let mut h = take(3).sigmoid();
        let i_ext = self.params.get("i_ext");
        for _ in 0..SUBSTEPS {
            let (dv, dn, dm, dh) = self.drift(&v, &n, &m, &h, i_ext);
            v = &v + &(&dv * DT);
            n = &n + &(&dn * DT);
            m = &m + &(&dm * DT);
            h = &h + &(&dh * DT);
        }
        let logit = |x: &Tensor| &x.ln() - &(1.0 - x).ln();
        crate::numerics::stack_cols(&[v, logit(&n), logit(&m), logit(&h)])
    }
}

impl StateSpaceModel for HhModel {
    fn horizon(&self) -> usize {
        self.t_horizon
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn observes_at(&self, _t: usize) -> bool {
        true
    }

    fn params(&self) -> &Params {
        &self.params
    }

    fn with_params(&self, params: Params) -> Box<dyn StateSpaceModel> {
        Box::new(HhModel {
            t_horizon: self.t_horizon,
            params,
            channel: self.channel,
            gate_init_logits: self.gate_init_logits,
        })
    }

    fn initial_loc_scale(&self) -> (Tensor, Tensor) {
        let [n, m, h] = self.gate_init_logits;
        (
            Tensor::column(vec![INIT_V_MEAN, n, m, h]),
            Tensor::column(vec![
                INIT_V_VAR.sqrt(),
                SIGMA_GATE_SQ.sqrt(),
                SIGMA_GATE_SQ.sqrt(),
                SIGMA_GATE_SQ.sqrt(),
            ]),
        )
    }

    fn transition_loc_scale(&self, x_prev: &Tensor, _t: usize) -> (Tensor, Tensor) {
        (
            self.euler_image(x_prev),
            Tensor::column(vec![
                SIGMA_V_SQ.sqrt(),
                SIGMA_GATE_SQ.sqrt(),
                SIGMA_GATE_SQ.sqrt(),
                SIGMA_GATE_SQ.sqrt(),
            ]),
        )
    }

    fn observation_loc_scale(&self, x_t: &Tensor, _t: usize) -> (Tensor, Tensor) {
        (x_t.matmul(&col(0)), Tensor::scalar(OBS_VAR.sqrt()))
    }

    fn quadrature_lookahead(
        &self,
        rule: &QuadratureRule,
        x_t: &Tensor,
        y_next: &Tensor,
        t: usize,
    ) -> Result<Tensor, ModelError> {
        // Only the potential is observed, so one quadrature over v suffices.
        let (loc, _) = self.transition_loc_scale(x_t, t + 1);
        let k = loc.shape()[0];
        let loc_v = loc.matmul(&col(0)).reshape(vec![k]);
        let y = Tensor::scalar(y_next.data()[0]);
        let cols = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&z, &w)| {
                let v_next = &loc_v + SIGMA_V_SQ.sqrt() * z;
                &gaussian_logpdf(&y, &v_next, &Tensor::scalar(OBS_VAR)) + w.ln()
            })
            .collect::<Vec<_>>();
        Ok(logsumexp_across(&cols))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn state_row(v: f64, n: f64, m: f64, h: f64) -> Tensor {
        let logit = |x: f64| (x / (1.0 - x)).ln();
        Tensor::from_vec(vec![1, 4], vec![v, logit(n), logit(m), logit(h)])
    }

    /// Constrained steady state: v solving dv/dt = 0 with gates at their own
    /// equilibria α/(α+β), found by bisection over the drift field itself.
    fn resting_state(model: &HhModel) -> (f64, f64, f64, f64) {
        let gates_at = |v: f64| {
            let vt = Tensor::scalar(v);
            let eq = |a: Tensor, b: Tensor| a.value() / (a.value() + b.value());
            (
                eq(alpha_n(&vt), beta_n(&vt)),
                eq(alpha_m(&vt), beta_m(&vt)),
                eq(alpha_h(&vt), beta_h(&vt)),
            )
        };
        let dv_at = |v: f64| {
            let (n, m, h) = gates_at(v);
            let (dv, _, _, _) = model.drift(
                &Tensor::column(vec![v]),
                &Tensor::column(vec![n]),
                &Tensor::column(vec![m]),
                &Tensor::column(vec![h]),
                &Tensor::scalar(0.0),
            );
            dv.value()
        };
        let (mut lo, mut hi) = (-80.0, -50.0);
        assert!(dv_at(lo) > 0.0 && dv_at(hi) < 0.0, "bracket does not straddle the rest point");
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if dv_at(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let v = 0.5 * (lo + hi);
        let (n, m, h) = gates_at(v);
        (v, n, m, h)
    }

    #[test]
    fn observation_density_frozen_value() {
        let model = HhModel::new(10, 13.0);
        let x = state_row(-65.0, 0.5, 0.5, 0.5);
        let y = Tensor::from_vec(vec![1, 1], vec![-65.0]);
        let lp = model.observation_logpdf(&x, &y, 3).value();
        assert_abs_diff_eq!(lp, -2.5284, epsilon = 5e-5);
        assert_abs_diff_eq!(lp, -0.5 * (crate::numerics::LN_2PI + 25f64.ln()), epsilon = 1e-12);
    }

    #[test]
    fn drift_vanishes_at_the_numerical_fixed_point() {
        let model = HhModel::new(10, 0.0);
        let (v, n, m, h) = resting_state(&model);
        let (dv, dn, dm, dh) = model.drift(
            &Tensor::column(vec![v]),
            &Tensor::column(vec![n]),
            &Tensor::column(vec![m]),
            &Tensor::column(vec![h]),
            &Tensor::scalar(0.0),
        );
        for d in [dv.value(), dn.value(), dm.value(), dh.value()] {
            assert!(d.abs() < 1e-6, "drift {d} at the fixed point");
        }
    }

    #[test]
    fn noiseless_trajectory_parks_at_the_fixed_point() {
        let model = HhModel::new(10, 0.0);
        let (v, n, m, h) = resting_state(&model);
        let mut x = state_row(v, n, m, h);
        for _ in 0..10 {
            x = model.euler_image(&x); // 10 × 1 ms with no noise injected
        }
        assert!((x.data()[0] - v).abs() < 1e-3, "drifted to {} from {v}", x.data()[0]);
    }

    #[test]
    fn drift_signs_and_capacitance_scaling() {
        let model = HhModel::new(10, 0.0);
        let nearly_open = 0.999;
        let at = |model: &HhModel| {
            let (dv, _, _, _) = model.drift(
                &Tensor::column(vec![120.0]),
                &Tensor::column(vec![nearly_open]),
                &Tensor::column(vec![nearly_open]),
                &Tensor::column(vec![nearly_open]),
                &Tensor::scalar(0.0),
            );
            dv.value()
        };
        let dv = at(&model);
        assert!(dv < 0.0, "dv/dt {dv} should be negative far above E_Na");
        let doubled = HhModel::with_constants(
            10,
            0.0,
            ChannelConstants { c_m: 2.0, ..ChannelConstants::default() },
        );
        assert_abs_diff_eq!(at(&doubled), dv / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn transition_density_peaks_at_the_euler_image() {
        let model = HhModel::new(10, 13.0);
        let x_prev = state_row(-60.0, 0.4, 0.1, 0.5);
        let image = model.euler_image(&x_prev);
        let at_image = model.transition_logpdf(&x_prev, &image, 2).value();
        for delta in [0.05, -0.08, 0.2] {
            let off = &image + delta;
            assert!(
                model.transition_logpdf(&x_prev, &off, 2).value() < at_image,
                "density not maximal at the Euler image (offset {delta})"
            );
        }
    }

    #[test]
    fn gate_initialization_uses_the_alpha_minus_beta_proxy() {
        let model = HhModel::new(10, 13.0);
        let (loc, _) = model.initial_loc_scale();
        // n at −65: α ≈ 0.05820, β = 0.125 → logit mean α/(α−β) ≈ −0.87119,
        // distinct from the true resting logit of α/(α+β) ≈ −0.76.
        assert_abs_diff_eq!(loc.data()[0], -65.0, epsilon = 0.0);
        assert_abs_diff_eq!(loc.data()[1], -0.8711925, epsilon = 1e-6);
        assert_abs_diff_eq!(loc.data()[2], -0.0591994, epsilon = 1e-6);
        assert_abs_diff_eq!(loc.data()[3], 3.1008949, epsilon = 1e-6);
    }
}
