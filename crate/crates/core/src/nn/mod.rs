//! Layers with saved forward context, and the composite blocks of the U-Net:
//! double-convolution blocks (plain or residual) and squeeze-and-excitation
//! gates.

mod block;
mod layers;
mod se;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Mode, Scalar, Tensor};

pub use block::ConvBlock;
pub use layers::{BatchNorm2d, Conv2d, Dense, UpConv2x2, BN_EPS, BN_MOMENTUM};
pub use se::{SeBlock, DEFAULT_SE_RATIO};

/// Whether a tensor is trained by the optimizer or is running state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Param,
    Buffer,
}

/// Fixed depth-first traversal of the tensors owned by a layer. The order is
/// the serialization order of checkpoints and the slot order of optimizer
/// state.
pub trait Module<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole));
}

/// A differentiable layer. `forward` in train mode saves what `backward`
/// needs; `backward` consumes it, accumulates parameter gradients and returns
/// the gradient with respect to the input.
pub trait Layer<T: Scalar>: Module<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Number of trainable scalars.
pub fn param_count<T: Scalar, M: Module<T> + ?Sized>(m: &M) -> usize {
    let mut n = 0;
    m.visit("", &mut |_, t, role| {
        if role == TensorRole::Param {
            n += t.numel();
        }
    });
    n
}

pub fn zero_grads<T: Scalar, M: Module<T> + ?Sized>(m: &mut M) {
    m.visit_mut("", &mut |_, t, _| t.zero_grad());
}

/// Names of all tensors in traversal order.
pub fn tensor_names<T: Scalar, M: Module<T> + ?Sized>(m: &M) -> Vec<(String, TensorRole)> {
    let mut names = Vec::new();
    m.visit("", &mut |name, _, role| names.push((name.to_string(), role)));
    names
}

/// Seeded parameter initializer: He-normal (`std = sqrt(2 / fan_in)`) weights,
/// zero biases, unit scales.
///
/// Draws happen in `f64` and are cast, so `f32` and `f64` builds from the same
/// seed hold the same values up to rounding.
#[derive(Debug, Clone)]
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn he_normal<T: Scalar>(&mut self, dims: Vec<usize>, fan_in: usize) -> Result<Tensor<T>> {
        let std = (2.0 / fan_in as f64).sqrt();
        Tensor::randn(dims, std, &mut self.rng)
    }
}
