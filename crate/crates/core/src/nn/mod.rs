//! A small CPU layer library with hand-written backward passes.
//!
//! Activations are `f64` and channel-major (`N, C, H, W`). Training-mode
//! `forward` caches what `backward` needs; `infer` takes `&self`, caches
//! nothing, and is safe to call concurrently.
//!
//! Frozen layers behave exactly as in evaluation mode (batch-norm uses and
//! keeps its running statistics, dropout is off) and accumulate no parameter
//! gradients, but still propagate input gradients when asked to.

mod act;
mod block;
mod conv;
mod linear;
mod norm;

pub use act::{ConcatPool, Dropout, MaxPool2d, Relu};
pub use block::{Residual, Sequential};
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::{BatchNorm, BatchNorm2d};

use ndarray::{Array4, ArrayD};
use rand::Rng;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Param,
    Buffer,
}

pub enum EntryMut<'a> {
    Param(&'a mut Param),
    Buffer(&'a mut ArrayD<f64>),
}

pub type VisitFn<'a> = dyn FnMut(&str, TensorKind, &ArrayD<f64>) + 'a;
pub type VisitMutFn<'a> = dyn FnMut(&str, EntryMut<'_>) + 'a;

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// A spatial layer over `(N, C, H, W)` activations.
pub trait Layer: Send + Sync {
    /// Training-mode forward pass; caches inputs for `backward`.
    fn forward(&mut self, x: Array4<f64>) -> Array4<f64>;

    /// Evaluation-mode forward pass.
    fn infer(&self, x: &Array4<f64>) -> Array4<f64>;

    /// Accumulates parameter gradients (unless frozen) and returns the input gradient.
    fn backward(&mut self, grad: Array4<f64>) -> Array4<f64>;

    fn visit(&self, prefix: &str, f: &mut VisitFn<'_>);

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMutFn<'_>);

    fn set_frozen(&mut self, frozen: bool);

    /// Drops cached activations.
    fn clear_cache(&mut self) {}
}

/// Uniform fan-in initialization with bound `sqrt(6 / fan_in)`.
pub fn kaiming_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> ArrayD<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_simple_fn(shape.to_vec(), || rng.random_range(-bound..bound))
}
