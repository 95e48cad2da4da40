//! Numeric foundation: tensors, reverse-mode tape, stable log-domain
//! primitives, Gauss–Hermite quadrature, Adam, and splittable RNG streams.

pub mod adam;
pub mod ops;
pub mod params;
pub mod quadrature;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use ops::{
    gaussian_logpdf, log_one_minus_sigmoid, log_sigmoid, logsumexp, logsumexp_across, stack_cols,
    LN_2PI,
};
pub use params::{grad, Gradients, Params};
pub use quadrature::{gauss_hermite_rule, QuadratureRule};
pub use rng::RngStream;
pub use tape::Tape;
pub use tensor::Tensor;
