//! Regularization paths by Multiple Split Linearized Bregman Iteration
//! (MSplit LBI) for multi-response linear models.
//!
//! The crate is organized as:
//!
//! - [`model`]: the [`Matrix`] type, norms, and the solver's domain types.
//! - [`solver`]: the MSplit LBI iteration, path generation, the
//!   strong/weak/noise decomposition and cross-validated choice of `t`.
//! - [`baselines`]: least squares, ridge, lasso and elastic net.
//! - [`simulation`]: correlated-Gaussian experiments comparing the
//!   estimators, and Monte-Carlo checks of their bias.
//! - [`embedding`]: few-shot and zero-shot classification via linear
//!   embeddings learned on the path.
//! - [`io`]: CSV and JSON readers and writers.
//!
//! A guide with worked examples lives in the `book/` directory of the
//! repository; every code block in it is compiled and run as a doctest.

pub mod baselines;
pub mod embedding;
pub mod error;
pub mod io;
mod linalg;
pub mod model;
pub mod simulation;
pub mod solver;

pub use error::{Error, Result};
pub use model::{Decomposition, Hyperparams, LossScale, Matrix, Path, PathPoint, SolverState, StepSize};
pub use solver::{Estimator, Problem};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/path.md")]
    mod path {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/bias.md")]
    mod bias {}
    #[doc = include_str!("../../../book/src/embedding.md")]
    mod embedding {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
