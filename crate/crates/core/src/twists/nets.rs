//! Weight initialization shared by the neural twist heads.

use crate::numerics::{RngStream, Tensor};

/// Zero-mean Gaussian weights with variance 1/fan_in. `fan_in` is the width
/// of the (possibly concatenated) input feeding the layer, which may exceed
/// the matrix's own row count for split-weight layers.
pub fn init_weights(rng: &mut RngStream, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let sd = (1.0 / fan_in as f64).sqrt();
    rng.standard_normal(&[rows, cols]) * sd
}
