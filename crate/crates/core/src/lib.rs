pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod run;
pub mod tensor;

pub use error::{Error, Result};
