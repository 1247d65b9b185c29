//! Post-processing of class-probability estimates into randomized classifiers
//! that satisfy expectation constraints, via stochastic optimization of an
//! entropy-smoothed dual.

pub mod constraints;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod math;
pub mod optimizers;
pub mod oracle;
pub mod problem;

pub use error::{Error, Result};
pub use math::{StepSize, Temperature};
pub use optimizers::{copt, copt_dual, default_schedule, BetaMode, CoptSettings, OptimizerParams, OptimizerResult, Sgd3};
pub use problem::{Action, ActionSpace, DualVector, FiniteInstance, Problem, RandomizedClassifier, WeightedSupport};
