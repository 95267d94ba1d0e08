//! Bayesian conjugate gradient (BayesCG) for symmetric positive-definite
//! systems, and its joint extension to families of related systems solved
//! under a shared Gaussian prior.
//!
//! The solver returns a Gaussian posterior over the solution: a mean (the
//! estimate) and a covariance held as the prior covariance minus a low-rank
//! downdate, applied matrix-free.
//!
//! ```
//! use bayescg::{bayescg::{solve, LinearSystem, SolverConfig}, linops::SpdOperator, priors};
//!
//! let a = SpdOperator::diagonal(vec![2.0, 3.0, 4.0]).unwrap();
//! let system = LinearSystem::new(a, vec![2.0, 3.0, 4.0]).unwrap();
//! let prior = priors::identity_prior(3, 1.0).unwrap();
//! let sol = solve(system, prior, SolverConfig::default()).unwrap();
//! assert!((sol.belief.mean()[0] - 1.0).abs() < 1e-10);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayescg;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod linops;
pub mod multibcg;
pub mod oracle;
pub mod priors;
pub mod problems;

pub use error::{Error, Result};

/// Library version embedded in every CLI output.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
