pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiments;
pub mod model;
pub mod network;
pub mod rng;
pub mod sharing;
pub mod similarity;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
