//! Semi-supervised training that pairs stochastic input augmentation with a
//! dual-head minimax game, plus the baseline family it is compared against.

pub mod augment;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
