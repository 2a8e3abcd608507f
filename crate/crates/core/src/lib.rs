//! Metric multifairness from noisy metric samples: learning, post-processing
//! and auditing of clipped linear predictors.

pub mod audit;
pub mod comparisons;
pub mod config;
pub mod error;
pub mod experiments;
pub mod gf2;
pub mod io;
pub mod metric;
pub mod model;
pub mod pairs;
pub mod pipeline;
pub mod residuals;
pub mod search;
pub mod seeds;
pub mod solver;

pub use error::{Error, Result};
