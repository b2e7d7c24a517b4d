//! Supervised PARAFAC2 factorization of irregular tensors with jointly
//! trained static and dynamic prediction heads.

pub mod cli;
pub mod error;
pub mod export;
pub mod heads;
pub mod linalg;
pub mod model;
pub mod sdw;
pub mod trainer;
pub mod tensor;

pub use error::{Error, Result};
