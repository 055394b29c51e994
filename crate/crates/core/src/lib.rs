//! Numerical laboratory for the geometry of norm-constrained softmax
//! classifiers.
//!
//! The crate covers
//! - the softmax cross-entropy loss with its closed-form gradient and Hessian ([`loss`]),
//! - closed-form optimal simplex configurations on ℓᵖ balls ([`simplex`]),
//! - projected-gradient solvers for the final layer ([`final_layer`]) and the
//!   penultimate layer with a spectrally constrained linear map ([`penultimate`]),
//! - two shallow-network gradient flows that do not collapse ([`counterexamples`]),
//! - snapshot collapse metrics ([`metrics`]),
//! - a config-driven experiment runner and verification suites ([`cli`]).

pub mod cli;
pub mod counterexamples;
pub mod error;
pub mod final_layer;
pub mod loss;
pub mod metrics;
pub mod penultimate;
pub mod simplex;

pub use error::{LabError, Result};
