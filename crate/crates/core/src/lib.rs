pub mod autodiff;
pub mod cli;
pub mod error;
mod kernels;
pub mod kv;
pub mod objective;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod scm;
pub mod task;
pub mod trainer;

pub use error::{Error, Result};
