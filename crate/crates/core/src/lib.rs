//! Anisotropic and locally adaptive P-spline smoothing in one to three
//! dimensions.
//!
//! The pipeline is: marginal B-spline bases ([`basis`]), difference
//! penalties whose smoothing parameters are themselves smoothed by small
//! B-spline bases ([`penalty`]), a mixed-model reparameterization that
//! splits coefficients into unpenalized fixed effects and penalized random
//! effects ([`mmtransform`]), array arithmetic for gridded data ([`glam`]),
//! and the SOP fixed-point estimator of the variance components ([`sop`]).
//! [`simlab`] generates the benchmark scenarios and runs replicate studies.

pub mod basis;
pub mod error;
pub mod glam;
pub mod linalg;
pub mod mmtransform;
pub mod model;
pub mod penalty;
pub mod simlab;
pub mod sop;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
