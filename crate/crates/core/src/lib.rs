pub mod attacks;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod io;
pub mod layers;
pub mod model;
pub mod quant;
pub mod rng;
pub mod roster;
pub mod tensor;
pub mod train;
pub mod transfer;

pub use error::{Error, Result};
pub use tensor::Tensor;
