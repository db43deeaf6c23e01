pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod objective;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Rng, Shape, Tensor};
