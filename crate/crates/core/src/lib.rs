//! Nonparametric maximum likelihood for multivariate Gaussian location
//! mixtures, and empirical-Bayes denoising built on it.

pub mod cli;
pub mod denoise;
pub mod error;
pub mod gaussian;
pub mod io;
pub mod metrics;
pub mod mixture;
mod nnls;
pub mod sim;
pub mod solver;
pub mod support;

pub use error::{NpmleError, Result};
pub use mixture::{Dataset, MixingMeasure, Noise, Point, Sample, ScaledMixture};
pub use solver::{duality_gap, fit, solve, FitResult, Method, SolverConfig};
pub use support::{build_support, SupportStrategy};
