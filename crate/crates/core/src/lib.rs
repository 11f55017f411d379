//! Representative-based learning: compress a same-label batch into one
//! synthetic sample whose parameter gradient matches the batch mean
//! gradient, then train centrally or across simulated clients with it.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the 64-bit precision used by the drivers and CLI.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod grad;
pub mod models;
pub mod protocol;
pub mod representative;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type GradVector64 = grad::GradVector<f64>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Dataset64 = data::Dataset<f64>;
pub type ModelState64 = models::ModelState<f64>;
