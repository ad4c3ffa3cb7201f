pub mod config;
pub mod data;
pub mod error;
pub mod flow;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod report;
pub mod run;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
