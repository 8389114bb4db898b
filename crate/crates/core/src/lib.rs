//! Low-rank matrix completion under natural exponential-family noise.
//!
//! The crate provides the two nuclear-norm-penalized estimators (plain
//! likelihood and known sampling distribution), the Bregman/KL risk
//! metrics, the regularization levels prescribed by the upper-bound
//! theorems, the minimax packing construction, and an experiment harness
//! that checks the predicted rates at desk scale.

pub mod error;
pub mod experiment;
pub mod expfam;
pub mod io;
pub mod lowerbound;
pub mod matops;
pub mod estimator;
pub mod metrics;
pub mod sampling;

pub use error::{Error, Result};
pub use expfam::{ExponentialFamily, IntervalConstants, ParameterBox};
pub use matops::Matrix;
pub use sampling::{ObservationSet, SamplingScheme};
pub use estimator::{fit, CompletionProblem, FitResult, Objective, SolverConfig};
pub use experiment::ExperimentConfig;
pub use lowerbound::PackingSet;
pub use metrics::{Bound, RiskReport};
