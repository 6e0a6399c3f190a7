//! Translated Poisson approximation of integer-valued random variables
//! through Stein couplings.
//!
//! The crate is organised bottom-up:
//!
//! * [`numeric`]: compensated sums, log-space helpers, Stirling remainders.
//! * [`dist`]: lattice pmfs, the translated Poisson law, normal density.
//! * [`metrics`]: total variation, local and smoothness distances.
//! * [`stein`]: exact Poisson Stein solutions and their increments.
//! * [`coupling`]: the Stein coupling abstraction and Monte Carlo estimators.
//! * [`bounds`]: error-bound formulas and rate experiment bookkeeping.

pub mod bounds;
pub mod coupling;
pub mod dist;
pub mod error;
pub mod metrics;
pub mod numeric;
pub mod stein;

pub use error::{Error, Result};
