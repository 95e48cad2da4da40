//! Backward recurrent twist: a tanh cell consumes the observations from the
//! end of the sequence toward the front, so its hidden state after eating
//! y_τ summarizes y_{τ:T}. The twist head then scores (x_t, encoding).
//!
//! Encodings live at observation times. The context entry for timestep t is
//! the encoding interpolated at position t+1: on a dense sequence that is
//! the recurrent output at t+1 itself, so the twist at t sees exactly
//! y_{t+1:T}; on sparse sequences positions between anchors blend the two
//! neighbors linearly, positions before the first anchor clamp to it, and
//! positions past the last anchor have no future observation at all, making
//! the twist 1 there.

use super::nets::init_weights;
use super::{zeros_like_rows, Twist, TwistContext};
use crate::models::{ObservationSequence, StateSpaceModel};
use crate::numerics::{Params, RngStream, Tensor};

/// Recurrent encoder plus a one-hidden-layer head on `[x_t, encoding]`,
/// realized as split weight matrices so particle rows and encoding rows
/// broadcast independently.
#[derive(Clone, Debug)]
pub struct BackwardRnnTwist {
    t_horizon: usize,
    state_dim: usize,
    obs_dim: usize,
    hidden: usize,
    params: Params,
}

impl BackwardRnnTwist {
    pub fn new(
        t_horizon: usize,
        state_dim: usize,
        obs_dim: usize,
        hidden: usize,
        rng: &mut RngStream,
    ) -> Self {
        assert!(t_horizon >= 2, "twist needs a horizon of at least 2");
        assert!(state_dim >= 1 && obs_dim >= 1 && hidden >= 1);
        let mut params = Params::new();
        // Cell fan-in counts the concatenated [y, h] input.
        let cell_in = obs_dim + hidden;
        params.insert("rnn_wy", init_weights(rng, obs_dim, hidden, cell_in));
        params.insert("rnn_wh", init_weights(rng, hidden, hidden, cell_in));
        params.insert("rnn_b", Tensor::zeros(vec![hidden]));
        // Head layer 1 fan-in counts the concatenated [x, e] input.
        let head_in = state_dim + hidden;
        params.insert("head_wx", init_weights(rng, state_dim, hidden, head_in));
        params.insert("head_we", init_weights(rng, hidden, hidden, head_in));
        params.insert("head_b1", Tensor::zeros(vec![hidden]));
        params.insert("head_w2", init_weights(rng, hidden, 1, hidden));
        params.insert("head_b2", Tensor::zeros(vec![1]));
        BackwardRnnTwist { t_horizon, state_dim, obs_dim, hidden, params }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }
}

impl Twist for BackwardRnnTwist {
    fn params(&self) -> &Params {
        &self.params
    }

    fn with_params(&self, params: Params) -> Box<dyn Twist> {
        let (o, h, d) = (self.obs_dim, self.hidden, self.state_dim);
        for (name, shape) in [
            ("rnn_wy", vec![o, h]),
            ("rnn_wh", vec![h, h]),
            ("rnn_b", vec![h]),
            ("head_wx", vec![d, h]),
            ("head_we", vec![h, h]),
            ("head_b1", vec![h]),
            ("head_w2", vec![h, 1]),
            ("head_b2", vec![1]),
        ] {
            assert_eq!(params.get(name).shape(), shape, "parameter {name:?} has the wrong shape");
        }
        Box::new(BackwardRnnTwist { params, ..self.clone() })
    }

    /// Backward recurrent pass over the observed times, then one encoding
    /// per timestep, interpolated at position t+1. Batched sequences encode
    /// row-for-row in one pass.
    fn encode(&self, observations: &ObservationSequence) -> TwistContext {
        assert_eq!(observations.len(), self.t_horizon, "twist and observations horizons differ");
        assert_eq!(observations.obs_dim(), self.obs_dim, "twist and observations widths differ");
        let anchors = observations.observed_times();
        let batch = observations.batch();
        let (wy, wh, b) =
            (self.params.get("rnn_wy"), self.params.get("rnn_wh"), self.params.get("rnn_b"));

        let mut outputs: Vec<Tensor> = Vec::with_capacity(anchors.len());
        let mut h = Tensor::zeros(vec![batch, self.hidden]);
        for &tau in anchors.iter().rev() {
            let y = observations.value(tau).unwrap();
            h = (&(&y.matmul(wy) + &h.matmul(wh)) + b).tanh();
            outputs.push(h.clone());
        }
        outputs.reverse(); // outputs[i] now pairs with anchors[i]

        let (first, last) = (anchors[0], *anchors.last().unwrap());
        let enc = (1..self.t_horizon)
            .map(|t| {
                let p = t + 1;
                if p > last {
                    return None;
                }
                if p <= first {
                    return Some(outputs[0].clone());
                }
                match anchors.binary_search(&p) {
                    Ok(i) => Some(outputs[i].clone()),
                    Err(i) => {
                        // anchors[i−1] < p < anchors[i]
                        let (lo, hi) = (anchors[i - 1], anchors[i]);
                        let w = (p - lo) as f64 / (hi - lo) as f64;
                        Some(&((1.0 - w) * &outputs[i - 1]) + &(w * &outputs[i]))
                    }
                }
            })
            .collect();
        TwistContext::PerStep { t_horizon: self.t_horizon, enc }
    }

    fn log_twist(
        &self,
        _model: &dyn StateSpaceModel,
        context: &TwistContext,
        t: usize,
        x: &Tensor,
    ) -> Tensor {
        let TwistContext::PerStep { t_horizon, enc } = context else {
            panic!("recurrent twist wants a per-step context");
        };
        assert!(t >= 1 && t <= *t_horizon, "twist time {t} outside [1, {t_horizon}]");
        if t == *t_horizon {
            return zeros_like_rows(x);
        }
        let Some(e) = &enc[t - 1] else {
            return zeros_like_rows(x);
        };
        let k = x.shape()[0];
        assert_eq!(x.shape(), [k, self.state_dim], "state shape {:?}", x.shape());
        // Split-weight head: x·Wx + e·We + b. A single encoding row
        // broadcasts across particles; a batch of encodings must pair
        // row-for-row with the states.
        let mut e_proj = e.matmul(self.params.get("head_we"));
        if e.shape()[0] == 1 {
            e_proj = e_proj.reshape(vec![self.hidden]);
        } else {
            assert_eq!(e.shape()[0], k, "encoding batch must be 1 or match the particle count");
        }
        let hidden =
            (&(&x.matmul(self.params.get("head_wx")) + &e_proj) + self.params.get("head_b1")).tanh();
        let logit = &hidden.matmul(self.params.get("head_w2")) + self.params.get("head_b2");
        logit.reshape(vec![k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad, Tape};
    use crate::testutil::{assert_close_rel, central_diff, dense_observations, StubModel};
    use approx::assert_abs_diff_eq;

    fn log_twists(twist: &BackwardRnnTwist, obs: &ObservationSequence, x: &Tensor) -> Vec<Tensor> {
        let model = StubModel::new(twist.t_horizon, twist.state_dim, twist.obs_dim);
        let ctx = twist.encode(obs);
        (1..=twist.t_horizon).map(|t| twist.log_twist(&model, &ctx, t, x)).collect()
    }

    /// Densely observed sequences give the twist at t a view of y_{t+1:T}
    /// and nothing earlier: perturbing y_s moves log twists strictly before
    /// s and leaves every later one bitwise untouched.
    #[test]
    fn dense_encodings_are_strictly_causal() {
        let t_horizon = 6;
        let mut rng = RngStream::new(41).split("causal");
        let twist = BackwardRnnTwist::new(t_horizon, 1, 1, 8, &mut rng);
        let obs = dense_observations(&mut rng, t_horizon, 1, 1);
        let x = Tensor::from_vec(vec![2, 1], vec![-0.4, 0.7]);
        let base = log_twists(&twist, &obs, &x);

        for s in 1..=t_horizon {
            let mut values: Vec<Option<Tensor>> =
                (1..=t_horizon).map(|t| obs.value(t).cloned()).collect();
            values[s - 1] = Some(values[s - 1].take().unwrap() + 0.5);
            let perturbed = log_twists(&twist, &ObservationSequence::new(values), &x);
            for t in 1..=t_horizon {
                let same = base[t - 1].data() == perturbed[t - 1].data();
                if t >= s {
                    assert!(same, "perturbing y_{s} leaked into the twist at t={t}");
                } else {
                    assert!(!same, "perturbing y_{s} should move the twist at t={t}");
                }
            }
        }
    }

    #[test]
    fn the_context_has_one_entry_per_nonterminal_step() {
        let mut rng = RngStream::new(9).split("len");
        let twist = BackwardRnnTwist::new(10, 1, 1, 4, &mut rng);
        let obs = dense_observations(&mut rng, 10, 1, 1);
        let TwistContext::PerStep { t_horizon, enc } = twist.encode(&obs) else {
            panic!("expected a per-step context");
        };
        assert_eq!(t_horizon, 10);
        assert_eq!(enc.len(), 9);
        assert!(enc.iter().all(Option::is_some));
    }

    /// Sparse anchors at 50 and 100 on a horizon of 120: positions between
    /// them blend linearly, positions before clamp to the first anchor, and
    /// positions past the last have no encoding, making the twist 1.
    #[test]
    fn sparse_encodings_interpolate_between_anchors() {
        let t_horizon = 120;
        let mut rng = RngStream::new(13).split("sparse");
        let twist = BackwardRnnTwist::new(t_horizon, 1, 1, 6, &mut rng);
        let mut values: Vec<Option<Tensor>> = vec![None; t_horizon];
        values[49] = Some(rng.standard_normal(&[1, 1]));
        values[99] = Some(rng.standard_normal(&[1, 1]));
        let obs = ObservationSequence::new(values);
        let TwistContext::PerStep { enc, .. } = twist.encode(&obs) else {
            panic!("expected a per-step context");
        };
        assert_eq!(enc.len(), 119);

        // enc[i] serves timestep t = i+1 and looks at position t+1 = i+2.
        let at = |i: usize| enc[i].as_ref().unwrap().data().to_vec();
        let out50 = at(48); // position 50: the first anchor itself
        let out100 = at(98); // position 100: the second anchor itself
        assert_eq!(at(0), out50, "positions before the first anchor clamp to it");
        for (i, w) in [(73usize, 0.5), (58, 0.2)] {
            let got = at(i);
            for (j, g) in got.iter().enumerate() {
                assert_abs_diff_eq!(*g, (1.0 - w) * out50[j] + w * out100[j], epsilon = 1e-15);
            }
        }
        assert!(enc[99..].iter().all(Option::is_none), "no encoding past the last anchor");

        let model = StubModel::new(t_horizon, 1, 1);
        let ctx = twist.encode(&obs);
        let x = Tensor::from_vec(vec![3, 1], vec![-1.0, 0.0, 2.0]);
        assert_eq!(twist.log_twist(&model, &ctx, 110, &x).data(), &[0.0; 3]);
    }

    /// A batch of sequences encodes row-for-row exactly as each row would
    /// encode alone.
    #[test]
    fn batched_encoding_matches_the_per_row_passes() {
        let (t_horizon, obs_dim, batch) = (5, 2, 3);
        let mut rng = RngStream::new(27).split("batch");
        let twist = BackwardRnnTwist::new(t_horizon, 2, obs_dim, 4, &mut rng);
        let obs = dense_observations(&mut rng, t_horizon, batch, obs_dim);
        let TwistContext::PerStep { enc, .. } = twist.encode(&obs) else {
            panic!("expected a per-step context");
        };
        for row in 0..batch {
            let TwistContext::PerStep { enc: row_enc, .. } = twist.encode(&obs.select_row(row))
            else {
                panic!("expected a per-step context");
            };
            for (e, re) in enc.iter().zip(&row_enc) {
                let (e, re) = (e.as_ref().unwrap(), re.as_ref().unwrap());
                assert_eq!(e.shape(), [batch, 4]);
                let h = re.len();
                assert_eq!(&e.data()[row * h..(row + 1) * h], re.data());
            }
        }
    }

    /// End-to-end gradients through the recurrence, the interpolation, and
    /// the head, against central differences.
    #[test]
    fn recurrent_twist_gradients_match_finite_differences() {
        let (t_horizon, state_dim, obs_dim) = (8, 2, 3);
        let mut rng = RngStream::new(63).split("fd");
        let twist = BackwardRnnTwist::new(t_horizon, state_dim, obs_dim, 8, &mut rng);
        let model = StubModel::new(t_horizon, state_dim, obs_dim);
        // Sparse anchors so position 5 (timestep 4) takes the blend path.
        let mut values: Vec<Option<Tensor>> = vec![None; t_horizon];
        values[2] = Some(rng.standard_normal(&[1, obs_dim]));
        values[6] = Some(rng.standard_normal(&[1, obs_dim]));
        let obs = ObservationSequence::new(values);
        let x = rng.standard_normal(&[3, state_dim]);

        let objective = |tw: &dyn Twist, x: &Tensor| {
            let ctx = tw.encode(&obs);
            let mut total = Tensor::scalar(0.0);
            for t in 1..=t_horizon {
                total = &total + &tw.log_twist(&model, &ctx, t, x).sum_all();
            }
            total
        };
        let eval = |p: &Params| objective(&*twist.with_params(p.clone()), &x).value();

        let tape = Tape::new();
        let watched = twist.params().watched(&tape);
        let grads = grad(&objective(&*twist.with_params(watched.clone()), &x), &watched);
        for (name, index) in [
            ("rnn_wy", 5),
            ("rnn_wh", 20),
            ("rnn_b", 3),
            ("head_wx", 9),
            ("head_we", 17),
            ("head_b1", 6),
            ("head_w2", 2),
            ("head_b2", 0),
        ] {
            let got = grads.values.get(name).data()[index];
            let fd = central_diff(twist.params(), name, index, &eval);
            assert_close_rel(got, fd, 1e-5);
        }

        let mut holder = Params::new();
        holder.insert("x", x.clone());
        let tape = Tape::new();
        let wx = holder.watched(&tape);
        let got = grad(&objective(&twist, wx.get("x")), &wx);
        let eval_x = |p: &Params| objective(&twist, p.get("x")).value();
        for i in [0, 3, 5] {
            let fd = central_diff(&holder, "x", i, &eval_x);
            assert_close_rel(got.values.get("x").data()[i], fd, 1e-5);
        }
    }
}
