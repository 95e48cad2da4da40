//! Classifier-based density-ratio learning for twists.
//!
//! A logistic classifier between "latents drawn jointly with the
//! observations" and "latents drawn from the prior alone" recovers, at its
//! optimum, exactly the smoothing ratio p(y_{t+1:T} | x_t) up to a
//! per-sequence constant, which is the twist the smoothing sweeps want. This
//! module provides the paired trajectory pools, the Bernoulli cross-entropy
//! objective on twist logits, and the minibatch ascent loop that fits twist
//! parameters against a frozen model.

use serde::{Deserialize, Serialize};

use crate::models::{ObservationSequence, StateSpaceModel};
use crate::numerics::{
    adam_step, grad, log_one_minus_sigmoid, log_sigmoid, AdamState, RngStream, Tape, Tensor,
};
use crate::twists::Twist;

/// Paired classifier examples. `positives` are latent paths drawn jointly
/// with `observations` (row `m` of each belongs to the same draw);
/// `negatives` are independent prior paths, scored against the observations
/// of the same-index positive.
#[derive(Clone, Debug)]
pub struct DreBatch {
    /// Joint-draw latents, one `[M, D]` tensor per timestep.
    pub positives: Vec<Tensor>,
    /// Observations of the joint draws, batch rows aligned with `positives`.
    pub observations: ObservationSequence,
    /// Prior-draw latents, laid out like `positives`.
    pub negatives: Vec<Tensor>,
}

impl DreBatch {
    /// Number of positive/negative pairs.
    pub fn items(&self) -> usize {
        self.positives[0].shape()[0]
    }

    /// Horizon T of the trajectories.
    pub fn horizon(&self) -> usize {
        self.positives.len()
    }

    /// The batch restricted to the given item rows, repeats allowed.
    pub fn select(&self, rows: &[usize]) -> DreBatch {
        DreBatch {
            positives: self.positives.iter().map(|x| x.gather_rows(rows)).collect(),
            observations: self.observations.select_rows(rows),
            negatives: self.negatives.iter().map(|x| x.gather_rows(rows)).collect(),
        }
    }
}

/// Minibatch Adam settings for one twist-update phase. The trajectory pool
/// is drawn fresh from the current model at every [`twist_update`] call and
/// never reused across calls, because the model parameters move between them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DreConfig {
    /// Trajectory pool size M.
    pub pool_size: usize,
    /// Pairs per ascent step.
    pub minibatch: usize,
    pub learning_rate: f64,
    /// Ascent steps per phase; minibatches cycle through shuffled epochs.
    pub updates: usize,
}

impl DreConfig {
    /// Stochastic-volatility regime: two epochs over a 32000-pair pool.
    pub fn svm_preset() -> Self {
        DreConfig { pool_size: 32_000, minibatch: 64, learning_rate: 3e-3, updates: 1000 }
    }

    /// Hodgkin–Huxley regime: two epochs over a 2048-pair pool.
    pub fn hh_preset() -> Self {
        DreConfig { pool_size: 2048, minibatch: 32, learning_rate: 0.01, updates: 128 }
    }
}

/// Errors from twist training.
#[derive(Debug, thiserror::Error)]
pub enum DreError {
    #[error(
        "twist update {step} produced a non-finite loss ({loss}); \
         pool {pool_size}, minibatch {minibatch}, learning rate {learning_rate}"
    )]
    NonFiniteLoss { step: usize, loss: f64, pool_size: usize, minibatch: usize, learning_rate: f64 },
}

/// Draws `m` joint trajectories (positives plus their observations) and `m`
/// independent prior trajectories (negatives). The prior draw's own
/// observations are discarded; negatives carry latents only. Generation is
/// batched across trajectories.
pub fn generate_training_batch(
    model: &dyn StateSpaceModel,
    rng: &mut RngStream,
    m: usize,
) -> DreBatch {
    assert!(m >= 1, "empty training pool");
    let (positives, observations) = model.sample_paths(rng, m);
    let (negatives, _) = model.sample_paths(rng, m);
    DreBatch { positives, observations, negatives }
}

/// Bernoulli cross-entropy of the twist-as-classifier, to be maximized:
/// the mean over items and timesteps `1..T−1` of
/// `log σ(logit⁺) + log(1 − σ(logit⁻))`, where both logits are log-twist
/// values under the positive draw's observation context, at the joint
/// latent (`logit⁺`) and the same-index prior latent (`logit⁻`).
///
/// Each item is encoded once and its context reused across timesteps; the
/// positive/negative pair shares one two-row twist evaluation per step. The
/// result stays on the tape of any watched twist parameters.
pub fn dre_loss(twist: &dyn Twist, model: &dyn StateSpaceModel, batch: &DreBatch) -> Tensor {
    let (m, t_max) = (batch.items(), batch.horizon());
    assert!(m >= 1, "empty batch");
    assert!(t_max >= 2, "ratio learning needs at least one non-terminal step");
    let d = batch.positives[0].shape()[1];
    let mut total = Tensor::scalar(0.0);
    for item in 0..m {
        let context = twist.encode(&batch.observations.select_row(item));
        for t in 1..t_max {
            let x = paired_rows(&batch.positives[t - 1], &batch.negatives[t - 1], item, d);
            let logits = twist.log_twist(model, &context, t, &x);
            let pair = &log_sigmoid(&logits.gather_rows(&[0]))
                + &log_one_minus_sigmoid(&logits.gather_rows(&[1]));
            total = &total + &pair.sum_all();
        }
    }
    &total * &Tensor::scalar(1.0 / ((m * (t_max - 1)) as f64))
}

/// Rows `[positive; negative]` of item `item` at one timestep, as `[2, D]`.
fn paired_rows(pos: &Tensor, neg: &Tensor, item: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(2 * d);
    data.extend_from_slice(&pos.data()[item * d..(item + 1) * d]);
    data.extend_from_slice(&neg.data()[item * d..(item + 1) * d]);
    Tensor::from_vec(vec![2, d], data)
}

/// One twist-update phase: draw a fresh pool from the current model, run
/// `config.updates` minibatch Adam ascent steps on [`dre_loss`], and return
/// the updated twist together with its per-step loss trace. Minibatches walk
/// shuffled epochs of the pool, reshuffling when an epoch is exhausted. The
/// model stays frozen throughout.
pub fn twist_update(
    twist: &dyn Twist,
    model: &dyn StateSpaceModel,
    config: &DreConfig,
    rng: &mut RngStream,
) -> Result<(Box<dyn Twist>, Vec<f64>), DreError> {
    assert!(config.pool_size >= 1, "empty training pool");
    assert!(config.minibatch >= 1, "empty minibatch");
    assert!(config.minibatch <= config.pool_size, "minibatch larger than the pool");
    let pool = generate_training_batch(model, rng, config.pool_size);
    let mut params = twist.params().detached();
    let mut optimizer = AdamState::new(config.learning_rate);
    let mut losses = Vec::with_capacity(config.updates);
    let mut order: Vec<usize> = Vec::new();
    for step in 0..config.updates {
        let rows: Vec<usize> = (0..config.minibatch)
            .map(|_| {
                if order.is_empty() {
                    order = shuffled(pool.items(), rng);
                }
                order.pop().expect("nonempty epoch order")
            })
            .collect();
        let minibatch = pool.select(&rows);
        let tape = Tape::new();
        let watched = params.watched(&tape);
        let step_twist = twist.with_params(watched.clone());
        let loss = dre_loss(step_twist.as_ref(), model, &minibatch);
        let value = loss.value();
        if !value.is_finite() {
            return Err(DreError::NonFiniteLoss {
                step,
                loss: value,
                pool_size: config.pool_size,
                minibatch: config.minibatch,
                learning_rate: config.learning_rate,
            });
        }
        losses.push(value);
        let grads = grad(&loss, &watched);
        adam_step(&mut optimizer, &mut params, &grads, true);
    }
    Ok((twist.with_params(params), losses))
}

/// Fisher–Yates permutation of `0..n` driven by the stream.
fn shuffled(n: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.uniform_f64() * (i + 1) as f64) as usize;
        order.swap(i, j.min(i));
    }
    order
}
