//! Resilient optimal estimation for linear measurement systems under
//! sparse adversarial corruption.
//!
//! The crate covers the full pipeline: DC-grid measurement models and their
//! QR structure ([`model`], [`linalg`]), recoverability certification via
//! restricted-isometry and nullspace properties ([`sparsity`]), Gaussian
//! process measurement priors and their likelihood ellipsoids ([`gpr`]),
//! the weighted-ℓ1 convex engine ([`solver`]), the resilient decoders and
//! reconstruction-error bounds ([`decoder`]), and false-data-injection
//! attack generators ([`attack`]).

pub mod attack;
pub mod decoder;
pub mod error;
pub mod gpr;
pub mod linalg;
pub mod model;
pub mod solver;
pub mod sparsity;
pub mod stats;

pub use error::{Error, Result};
