//! WGAN-GP image completion and residual enhancement.
//!
//! The crate is generic over the element type through [`Scalar`] (`f32` or
//! `f64`); the aliases at the crate root fix it to `f64`, which every
//! training and evaluation path in this crate uses.

pub mod completion;
pub mod data;
pub mod enhance;
pub mod error;
pub mod graph;
mod kernels;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod wgan;

pub use error::{Error, Result};
pub use rng::{Distribution, Rng};
pub use scalar::Scalar;

pub type Tensor<F = f64> = tensor::Tensor<F>;
pub type Graph = graph::Graph<f64>;
pub type Graph32 = graph::Graph<f32>;
pub type Tensor32 = tensor::Tensor<f32>;
