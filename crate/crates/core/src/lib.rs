//! Finite-index Gaussian process toolkit: metric spaces, majorizing-measure
//! functionals, Monte Carlo estimators, partition trees, simplex searches and
//! the ellipsoid study.

pub mod cli;
pub mod ellipsoid;
pub mod error;
pub mod gaussian;
pub mod instance;
pub mod measure;
pub mod metric;
pub mod partition;
pub mod rng;
pub mod search;

pub use error::{Error, Result};
