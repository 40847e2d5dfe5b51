//! Solvers and diagnostics for sparse multi-task representation learning.

pub mod assignment;
pub mod bilevel;
pub mod error;
pub mod experiments;
pub mod identifiability;
pub mod linalg;
pub mod metrics;
pub mod prox;
pub mod rng;
pub mod selftest;
pub mod simplex;
pub mod svm;
pub mod taskgen;

pub use assignment::{best_assignment, Permutation};
pub use error::{Error, Result};
pub use linalg::{sample_orthogonal, solve_psd, Matrix};
pub use rng::RngStream;
pub use simplex::project_simplex;
