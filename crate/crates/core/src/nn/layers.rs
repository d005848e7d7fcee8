use super::{join, Initializer, Layer, Module, TensorRole};
use crate::error::{Error, Result};
use crate::tensor::{
    batchnorm2d_backward, batchnorm2d_forward, conv2d_backward, conv2d_forward, dense,
    dense_backward, transposed_conv2x2_backward, transposed_conv2x2_forward, BatchNormCache,
    Mode, RunningStats, Scalar, Tensor,
};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Square-kernel convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
    saved: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        Ok(Conv2d {
            weight: init.he_normal(vec![c_out, c_in, k, k], c_in * k * k)?,
            bias: Tensor::zeros(vec![c_out])?,
            stride,
            pad,
            saved: None,
        })
    }

    /// `k x k` kernel, stride 1, padding `k / 2`.
    pub fn same(c_in: usize, c_out: usize, k: usize, init: &mut Initializer) -> Result<Self> {
        Self::new(c_in, c_out, k, 1, k / 2, init)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        f(&join(prefix, "weight"), &self.weight, TensorRole::Param);
        f(&join(prefix, "bias"), &self.bias, TensorRole::Param);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        f(&join(prefix, "weight"), &mut self.weight, TensorRole::Param);
        f(&join(prefix, "bias"), &mut self.bias, TensorRole::Param);
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        if mode == Mode::Train {
            self.saved = Some(x.clone());
        }
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(x, &self.weight, &self.bias, self.stride, self.pad)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.saved.take().ok_or(Error::MissingContext("conv2d"))?;
        let g = conv2d_backward(grad_out, &x, &self.weight, self.stride, self.pad)?;
        self.weight.accumulate_grad(g.weight.data())?;
        self.bias.accumulate_grad(g.bias.data())?;
        Ok(g.input)
    }
}

/// Stride-2 2x2 up-convolution with bias.
#[derive(Debug, Clone)]
pub struct UpConv2x2<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    saved: Option<Tensor<T>>,
}

impl<T: Scalar> UpConv2x2<T> {
    pub fn new(c_in: usize, c_out: usize, init: &mut Initializer) -> Result<Self> {
        Ok(UpConv2x2 {
            weight: init.he_normal(vec![c_in, c_out, 2, 2], c_in * 4)?,
            bias: Tensor::zeros(vec![c_out])?,
            saved: None,
        })
    }
}

impl<T: Scalar> Module<T> for UpConv2x2<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        f(&join(prefix, "weight"), &self.weight, TensorRole::Param);
        f(&join(prefix, "bias"), &self.bias, TensorRole::Param);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        f(&join(prefix, "weight"), &mut self.weight, TensorRole::Param);
        f(&join(prefix, "bias"), &mut self.bias, TensorRole::Param);
    }
}

impl<T: Scalar> Layer<T> for UpConv2x2<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        if mode == Mode::Train {
            self.saved = Some(x.clone());
        }
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        transposed_conv2x2_forward(x, &self.weight, Some(&self.bias))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.saved.take().ok_or(Error::MissingContext("upconv2x2"))?;
        let g = transposed_conv2x2_backward(grad_out, &x, &self.weight)?;
        self.weight.accumulate_grad(g.weight.data())?;
        self.bias.accumulate_grad(g.bias.data())?;
        Ok(g.input)
    }
}

/// Fully connected layer on `[B, C]`.
#[derive(Debug, Clone)]
pub struct Dense<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    saved: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(c_in: usize, c_out: usize, init: &mut Initializer) -> Result<Self> {
        Ok(Dense {
            weight: init.he_normal(vec![c_out, c_in], c_in)?,
            bias: Tensor::zeros(vec![c_out])?,
            saved: None,
        })
    }
}

impl<T: Scalar> Module<T> for Dense<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        f(&join(prefix, "weight"), &self.weight, TensorRole::Param);
        f(&join(prefix, "bias"), &self.bias, TensorRole::Param);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        f(&join(prefix, "weight"), &mut self.weight, TensorRole::Param);
        f(&join(prefix, "bias"), &mut self.bias, TensorRole::Param);
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        if mode == Mode::Train {
            self.saved = Some(x.clone());
        }
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        dense(x, &self.weight, &self.bias)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.saved.take().ok_or(Error::MissingContext("dense"))?;
        let g = dense_backward(grad_out, &x, &self.weight)?;
        self.weight.accumulate_grad(g.weight.data())?;
        self.bias.accumulate_grad(g.bias.data())?;
        Ok(g.input)
    }
}

/// Batch normalization with running statistics (momentum 0.1, eps 1e-5).
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running: RunningStats<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: Tensor::ones(vec![channels])?,
            beta: Tensor::zeros(vec![channels])?,
            running: RunningStats::new(channels)?,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            cache: None,
        })
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        f(&join(prefix, "gamma"), &self.gamma, TensorRole::Param);
        f(&join(prefix, "beta"), &self.beta, TensorRole::Param);
        f(&join(prefix, "running_mean"), &self.running.mean, TensorRole::Buffer);
        f(&join(prefix, "running_var"), &self.running.var, TensorRole::Buffer);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        f(&join(prefix, "gamma"), &mut self.gamma, TensorRole::Param);
        f(&join(prefix, "beta"), &mut self.beta, TensorRole::Param);
        f(&join(prefix, "running_mean"), &mut self.running.mean, TensorRole::Buffer);
        f(&join(prefix, "running_var"), &mut self.running.var, TensorRole::Buffer);
    }
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Eval => self.infer(x),
            Mode::Train => {
                let (y, cache) = batchnorm2d_forward(
                    x,
                    &self.gamma,
                    &self.beta,
                    Some(&mut self.running),
                    Mode::Train,
                    self.momentum,
                    self.eps,
                )?;
                self.cache = cache;
                Ok(y)
            }
        }
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut running = self.running.clone();
        let (y, _) = batchnorm2d_forward(
            x,
            &self.gamma,
            &self.beta,
            Some(&mut running),
            Mode::Eval,
            self.momentum,
            self.eps,
        )?;
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(Error::MissingContext("batchnorm2d"))?;
        let g = batchnorm2d_backward(grad_out, &cache, &self.gamma)?;
        self.gamma.accumulate_grad(g.gamma.data())?;
        self.beta.accumulate_grad(g.beta.data())?;
        Ok(g.input)
    }
}
