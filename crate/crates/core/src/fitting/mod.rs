//! Learning the transform and innovation ratio by MAP, and applying the
//! fitted model to new data.

pub mod density;
pub mod model;
pub mod objective;
pub mod optim;

pub use model::{fast_update, fit_fixed, fit_map, ClampCounts, FitDiagnostics, FitOptions, FittedModel};
pub use objective::{log_prior_lambda, log_prior_w, ObjectiveSpec, ObjectiveTerms, PriorVariant};
pub use optim::{nelder_mead, Minimizer, NelderMead, NelderMeadOptions, OptimResult, TraceRow};
