pub mod baselines;
pub mod env;
pub mod error;
pub mod model;
pub mod numerics;
pub mod train;

pub use error::{Error, Result};
