//! Dynamic ratings for athletes from continuous scores.
//!
//! Scores pass through a learned monotone spline transform and are modelled
//! as noisy observations of latent abilities that drift between rating
//! periods. Filtering, smoothing and the marginal posterior of the transform
//! and drift parameters are all available in closed form under a
//! normal/inverse-gamma prior.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod filter;
pub mod fitting;
pub mod io;
mod linalg;
pub mod preprocess;
pub mod simulation;
pub mod spline;

pub use error::{Error, Result};
