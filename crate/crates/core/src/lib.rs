//! Bivariate spatial extreme mixture models for unreplicated survey data.
//!
//! Each variable is a mixture of a Gaussian body and a generalised Pareto
//! tail. Tail values are moved onto a Gaussian working scale, after which
//! the two variables are fitted jointly as a coregionalised Gaussian field
//! in which variable 2's tail borrows variable 1's tail field with weight
//! `lambda`. Joint exceedance maps come from Monte Carlo sampling of the
//! posterior predictive.

pub mod classify;
pub mod coregmix;
pub mod distfit;
pub mod error;
pub mod evalharness;
pub mod io;
pub mod linalg;
pub mod optim;
pub mod randomfield;
pub mod risk;
pub mod seeds;
pub mod synth;
#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
