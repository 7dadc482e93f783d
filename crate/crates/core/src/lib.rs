pub mod amp;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod harness;
pub mod mixup;
pub mod models;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
