//! Nested maximum-likelihood covariance estimators, their Fisher-information
//! asymptotics, regularized baselines, and Monte Carlo experiments.

pub mod cli;
pub mod error;
pub mod estimators;
pub mod fisher;
pub mod model;
pub mod regularizers;
pub mod simulation;

pub use error::{Error, Result};
