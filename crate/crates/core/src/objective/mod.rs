//! Negative log-likelihoods and σ-profiled objectives of the three models.

pub mod diagonal;
pub mod general;
pub mod isotropic;
