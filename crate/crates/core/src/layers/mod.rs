//! Differentiable layers: forward and reverse-mode rules for the closed
//! layer set the classifier uses, plus the two losses and a
//! finite-difference gradient checker.
//!
//! A layer caches whatever its backward rule needs during `forward`;
//! `backward` may only be called after a `forward` in the same mode and
//! consumes that cache. Distinct layer instances are independent, but a
//! single instance is not safe to share across threads mid-pass.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod flatten;
pub mod gradcheck;
mod loss;
mod pool;

pub use activation::{Relu, Sigmoid, Softmax};
pub use batchnorm::BatchNorm2d;
pub use conv::Conv2d;
pub use dense::Dense;
pub use dropout::Dropout;
pub use flatten::Flatten;
pub use loss::{loss, LossKind};
pub use pool::MaxPool2x2;

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Execution mode. Training normalizes with batch statistics and samples
/// dropout masks; inference uses running statistics and is deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    MaxPool2x2,
    BatchNorm2d,
    Dropout,
    Dense,
    Flatten,
    Relu,
    Sigmoid,
    Softmax,
}

/// Gradients produced by one backward call: one entry per parameter of the
/// layer (same shape as the parameter) plus the gradient with respect to
/// the layer input.
#[derive(Debug)]
pub struct GradBundle<T> {
    pub grads: Vec<(&'static str, Tensor<T>)>,
    pub input_grad: Tensor<T>,
}

impl<T> GradBundle<T> {
    pub fn leaf(input_grad: Tensor<T>) -> Self {
        GradBundle {
            grads: Vec::new(),
            input_grad,
        }
    }
}

/// A differentiable operation with optional parameters and cached forward
/// state. The RNG is consumed only by dropout in train mode; every other
/// layer ignores it.
pub trait Layer<T: Scalar>: Send {
    fn kind(&self) -> LayerKind;

    fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Tensor<T>>;

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<GradBundle<T>>;

    /// Trainable parameters in a stable order.
    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        Vec::new()
    }

    /// Non-trainable persistent state (batchnorm running statistics).
    fn state(&self) -> Vec<(&'static str, &Tensor<T>)> {
        Vec::new()
    }

    fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        Vec::new()
    }

    /// Called after persistent state has been restored from a checkpoint.
    fn mark_state_loaded(&mut self) {}
}

pub(crate) fn state_error<T>(op: &str) -> crate::error::Result<T> {
    Err(crate::error::Error::InvalidState(format!(
        "{op}: backward called before forward"
    )))
}
