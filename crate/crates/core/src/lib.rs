pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod nets;
pub mod par;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
