//! Sequential Monte Carlo with learned twist functions.
//!
//! The crate provides state-space models (Gaussian drift diffusion,
//! stochastic volatility, Hodgkin–Huxley), proposal and twist families, a
//! generic twisted SMC sweep, the FIVO/SIXO/IWAE/BPF marginal-likelihood
//! bounds with biased and unbiased gradient estimators, classifier-based
//! density-ratio twist learning, and the training loops tying them together.

pub mod bounds;
pub mod dre;
pub mod models;
pub mod numerics;
pub mod proposals;
pub mod smc;
pub mod twists;

#[cfg(test)]
pub(crate) mod testutil;
