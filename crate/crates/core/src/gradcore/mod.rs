//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! The engine is a flat tape: [`Graph`] owns every intermediate value, ops
//! append nodes, and [`Graph::backward`] walks the tape in reverse
//! accumulating exact analytic gradients. It covers exactly what the agent
//! architecture and losses need — rank-1/rank-2 tensors, a dozen primitive
//! ops, an LSTM cell composed from them, Gumbel-Softmax and categorical
//! sampling, Adam, and a checkpoint format — nothing more.
//!
//! Training runs in `f32`; every op is generic over [`Real`] so gradient
//! checks can rebuild the same graphs in `f64` and compare against central
//! finite differences (see [`gradcheck`]).

mod checkpoint;
mod graph;
pub mod gradcheck;
mod optim;
mod sample;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use graph::{lstm_cell, Gradients, Graph, LstmParamIds, NodeId};
pub use optim::{adam_step, clip_global_norm, AdamState};
pub use sample::{argmax, categorical_sample, gumbel_noise};
pub use tensor::Tensor;

use num_traits::Float;

/// Scalar element type of the engine: `f32` for training, `f64` for the
/// finite-difference oracle.
pub trait Real:
    Float
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Errors from the fallible sampling entry points.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SampleError {
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("probabilities sum to {0}, not 1 within 1e-4")]
    NotNormalized(f64),
}
