//! Regularized conditional GAN for generating corresponding image pairs
//! across two domains without paired training data.

pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
