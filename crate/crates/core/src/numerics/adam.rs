//! Adam with standard bias correction.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::params::{Gradients, Params};
use super::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    first_moment: IndexMap<String, Vec<f64>>,
    second_moment: IndexMap<String, Vec<f64>>,
}

impl AdamState {
    /// Standard defaults: beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: IndexMap::new(),
            second_moment: IndexMap::new(),
        }
    }
}

/// One Adam update in place. `maximize` negates the gradients (ascent).
/// Parameters without a matching gradient entry are treated as zero-gradient.
pub fn adam_step(state: &mut AdamState, params: &mut Params, grads: &Gradients, maximize: bool) {
    state.step_count += 1;
    let t = state.step_count;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let p = params.get(&name);
        let n = p.len();
        let zero = vec![0.0; n];
        let g = grads.values.try_get(&name).map(Tensor::data).unwrap_or(&zero);
        assert_eq!(g.len(), n, "gradient shape mismatch for {name:?}");
        let m = state.first_moment.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.second_moment.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        assert_eq!(m.len(), n, "moment shape mismatch for {name:?}");
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let gi = if maximize { -g[i] } else { g[i] };
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            out.push(p.data()[i] - state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon));
        }
        let shape = p.shape().to_vec();
        params.set(&name, Tensor::from_vec(shape, out));
    }
}
