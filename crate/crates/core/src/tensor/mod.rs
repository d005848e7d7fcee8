//! Dense N-dimensional arrays and the differentiable primitives the network is
//! assembled from.
//!
//! Layout is batch-major then channel-major (`B, C, H, W`), row-major inside
//! each plane. Every primitive comes as a forward function plus an explicit
//! backward function; there is no tape. Composite layers in [`crate::nn`] keep
//! whatever forward context their backward pass needs.

mod activation;
mod combine;
mod conv;
mod dense;
pub(crate) mod gemm;
mod norm;
mod pool;
pub mod snapshot;

use std::fmt;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward};
pub use combine::{
    add, channelwise_scale, channelwise_scale_backward, concat_channels, split_channels,
};
pub use conv::{
    conv2d_backward, conv2d_forward, conv2d_output_size, transposed_conv2x2_backward,
    transposed_conv2x2_forward, Conv2dGrads,
};
pub use dense::{dense, dense_backward, DenseGrads};
pub use norm::{
    batchnorm2d_backward, batchnorm2d_forward, BatchNormCache, BatchNormGrads, RunningStats,
};
pub use pool::{
    global_avg_pool, global_avg_pool_backward, maxpool2x2, maxpool2x2_backward, PoolIndices,
};

/// Floating-point element type. `f32` is used for training, `f64` for
/// gradient checking.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    /// Row-major `c = alpha * op(a) * op(b) + beta * c`, where `op(a)` is
    /// `m x k` and `op(b)` is `k x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 converts to every Scalar")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("Scalar converts to f64")
    }

    fn of_usize(v: usize) -> Self {
        Self::of_f64(v as f64)
    }
}

impl Scalar for f32 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        a_trans: bool,
        b: &[f32],
        b_trans: bool,
        beta: f32,
        c: &mut [f32],
    ) {
        gemm::sgemm(m, k, n, alpha, a, a_trans, b, b_trans, beta, c)
    }
}

impl Scalar for f64 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        a_trans: bool,
        b: &[f64],
        b_trans: bool,
        beta: f64,
        c: &mut [f64],
    ) {
        gemm::dgemm(m, k, n, alpha, a, a_trans, b, b_trans, beta, c)
    }
}

/// Forward mode of layers with train/eval behaviour (batch normalization).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Ordered list of positive dimensions.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(
                "shape",
                format!("dims must be non-empty and positive, got {dims:?}"),
            ));
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", parts.join("x"))
    }
}

/// Dense array with an optional gradient buffer of the same length.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{}", self.shape)?;
        let head: Vec<String> = self.data.iter().take(SHOWN).map(|v| v.to_string()).collect();
        write!(f, "[{}", head.join(", "))?;
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("{} values for {shape}", shape.numel()),
                data.len(),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn from_shape(shape: Shape, data: Vec<T>) -> Result<Self> {
        Self::new(shape.0, data)
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        Ok(Tensor {
            shape,
            data: vec![value; n],
            grad: None,
        })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn ones(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(dims, T::one())
    }

    pub fn from_fn(dims: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = (0..shape.numel()).map(&mut f).collect();
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(dims: impl Into<Vec<usize>>, std: f64, rng: &mut R) -> Result<Self> {
        Self::from_fn(dims, |_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of_f64(z * std)
        })
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(
        dims: impl Into<Vec<usize>>,
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::from_fn(dims, |_| T::of_f64(rng.gen_range(lo..hi)))
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    /// Add `g` into the gradient buffer.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::shape("accumulate_grad", self.data.len(), g.len()));
        }
        for (acc, v) in self.grad_mut().iter_mut().zip(g) {
            *acc += *v;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.data.len() {
            return Err(Error::shape("reshape", self.shape.to_string(), shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::of_f64(v.as_f64()))
                .collect(),
            grad: None,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Interpret as `[B, C, H, W]`.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match *self.dims() {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::shape(op, "rank-4 [B,C,H,W]", &self.shape)),
        }
    }

    /// Interpret as `[B, C]`.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.dims() {
            [b, c] => Ok((b, c)),
            _ => Err(Error::shape(op, "rank-2 [B,C]", &self.shape)),
        }
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    /// Inner product of two equally shaped tensors, accumulated in f64.
    pub fn dot(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape("dot", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum())
    }

    /// Copy of item `b` along the leading axis, keeping a leading axis of 1.
    pub fn batch_item(&self, b: usize) -> Result<Self> {
        let dims = self.dims();
        if b >= dims[0] {
            return Err(Error::invalid("batch_item", format!("index {b} of {}", dims[0])));
        }
        let per = self.numel() / dims[0];
        let mut out_dims = dims.to_vec();
        out_dims[0] = 1;
        Tensor::new(out_dims, self.data[b * per..(b + 1) * per].to_vec())
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("stack", "no tensors to stack"))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape("stack", &first.shape, &t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let mut dims = vec![items.len()];
        dims.extend_from_slice(first.dims());
        Tensor::new(dims, data)
    }
}

pub(crate) fn check_same_shape<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}
