//! Direct embedding and classification of irregularly sampled multivariate
//! time series with sensor graphs.

pub mod error;
pub mod model;
pub mod cli;
pub mod dataset;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
