pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod objectives;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
