//! Scratch probe: twist_update convergence in a two-parameter exact family.

use sixo_core::dre::{twist_update, DreConfig};
use sixo_core::models::GddModel;
use sixo_core::numerics::{Params, RngStream, Tensor};
use sixo_core::twists::Twist;

// Mirror of the dre test twist: logit = gain * (optimal twist - log marginal) + offset.
use sixo_core::models::{ObservationSequence, StateSpaceModel};
use sixo_core::twists::TwistContext;

#[derive(Clone, Debug)]
struct OracleRatioTwist {
    t_horizon: usize,
    alpha: f64,
    params: Params,
}

impl OracleRatioTwist {
    fn new(t_horizon: usize, alpha: f64, gain: f64, offset: f64) -> Self {
        let mut params = Params::new();
        params.insert("gain", Tensor::scalar(gain));
        params.insert("offset", Tensor::scalar(offset));
        OracleRatioTwist { t_horizon, alpha, params }
    }
}

impl Twist for OracleRatioTwist {
    fn params(&self) -> &Params {
        &self.params
    }

    fn with_params(&self, params: Params) -> Box<dyn Twist> {
        Box::new(OracleRatioTwist { t_horizon: self.t_horizon, alpha: self.alpha, params })
    }

    fn encode(&self, observations: &ObservationSequence) -> TwistContext {
        TwistContext::Terminal { t_horizon: self.t_horizon, y: observations.terminal_value() }
    }

    fn log_twist(
        &self,
        _model: &dyn StateSpaceModel,
        context: &TwistContext,
        t: usize,
        x: &Tensor,
    ) -> Tensor {
        let TwistContext::Terminal { t_horizon, y } = context else { unreachable!() };
        let gdd = GddModel::new(self.t_horizon, self.alpha);
        let analytics = gdd.analytics();
        let k = x.shape()[0];
        if t == *t_horizon {
            return Tensor::zeros(vec![k]);
        }
        let base: Vec<f64> = x
            .data()
            .iter()
            .map(|&xv| analytics.optimal_twist(t, xv, *y) - analytics.log_marginal(*y))
            .collect();
        let base = Tensor::from_vec(vec![k], base);
        &(&base * self.params.get("gain")) + self.params.get("offset")
    }
}

fn main() {
    let model = GddModel::new(6, 0.0);
    let cfg = DreConfig { pool_size: 4_096, minibatch: 256, learning_rate: 5e-3, updates: 600 };
    for seed in [11u64, 97, 271, 1234, 5150] {
        let twist = OracleRatioTwist::new(6, 0.0, 0.3, 0.5);
        let mut rng = RngStream::new(seed).split("head-train");
        let t0 = std::time::Instant::now();
        let (trained, losses) = twist_update(&twist, &model, &cfg, &mut rng).unwrap();
        let gain = trained.params().get("gain").data()[0];
        let offset = trained.params().get("offset").data()[0];
        let first: f64 = losses[..20].iter().sum::<f64>() / 20.0;
        let last: f64 = losses[580..].iter().sum::<f64>() / 20.0;
        println!(
            "seed {seed}: gain {gain:.4} offset {offset:+.4} loss {first:.4} -> {last:.4} ({:.1?})",
            t0.elapsed()
        );
    }
}
