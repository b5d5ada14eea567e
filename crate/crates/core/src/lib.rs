//! Location-scale Gaussian mixtures fitted to data drawn from a single
//! Gaussian: the EM algorithm, exponential-step gradient descent on the
//! profiled likelihood (ELU), population-landscape checks, and a
//! seeded experiment harness.

pub mod error;
pub mod harness;
pub mod numeric;
pub mod objective;
pub mod params;
pub mod quadrature;
pub mod sampling;
pub mod solvers;
pub mod theory;

pub use error::{Error, Result};
pub use params::{DiagonalParams, GeneralParams, IsotropicParams, TruthSpec};
pub use quadrature::QuadratureRule;
pub use sampling::{Dataset, SplitDataset};
