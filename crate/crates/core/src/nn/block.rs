use super::{join, BatchNorm2d, Conv2d, Initializer, Layer, Module, TensorRole};
use crate::error::{Error, Result};
use crate::tensor::{add, relu, relu_backward, Mode, Scalar, Tensor};

/// Two rounds of 3x3 convolution, optional batch normalization and ReLU.
///
/// The residual variant adds a skip path (identity, or a learned 1x1
/// projection when the channel counts differ) before the second ReLU:
/// `y = relu(bn2(conv2(relu(bn1(conv1(x))))) + skip(x))`.
#[derive(Debug, Clone)]
pub struct ConvBlock<T: Scalar> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub conv1: Conv2d<T>,
    pub norm1: Option<BatchNorm2d<T>>,
    pub conv2: Conv2d<T>,
    pub norm2: Option<BatchNorm2d<T>>,
    pub residual: bool,
    pub projection: Option<Conv2d<T>>,
    cache: Option<BlockCache<T>>,
}

#[derive(Debug, Clone)]
struct BlockCache<T: Scalar> {
    pre1: Tensor<T>,
    pre2: Tensor<T>,
}

impl<T: Scalar> ConvBlock<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        batchnorm: bool,
        residual: bool,
        init: &mut Initializer,
    ) -> Result<Self> {
        let conv1 = Conv2d::same(in_channels, out_channels, 3, init)?;
        let conv2 = Conv2d::same(out_channels, out_channels, 3, init)?;
        let (norm1, norm2) = if batchnorm {
            (
                Some(BatchNorm2d::new(out_channels)?),
                Some(BatchNorm2d::new(out_channels)?),
            )
        } else {
            (None, None)
        };
        let projection = if residual && in_channels != out_channels {
            Some(Conv2d::new(in_channels, out_channels, 1, 1, 0, init)?)
        } else {
            None
        };
        Ok(ConvBlock {
            in_channels,
            out_channels,
            conv1,
            norm1,
            conv2,
            norm2,
            residual,
            projection,
            cache: None,
        })
    }

    pub fn plain(c_in: usize, c_out: usize, batchnorm: bool, init: &mut Initializer) -> Result<Self> {
        Self::new(c_in, c_out, batchnorm, false, init)
    }

    pub fn residual(c_in: usize, c_out: usize, batchnorm: bool, init: &mut Initializer) -> Result<Self> {
        Self::new(c_in, c_out, batchnorm, true, init)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, _, _) = x.dims4("conv_block")?;
        if c != self.in_channels {
            return Err(Error::shape(
                "conv_block",
                format!("{} input channels", self.in_channels),
                x.shape(),
            ));
        }
        Ok(())
    }

    fn skip_infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.projection {
            Some(p) => p.infer(x),
            None => Ok(x.clone()),
        }
    }
}

fn norm_forward<T: Scalar>(
    norm: &mut Option<BatchNorm2d<T>>,
    x: Tensor<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    match norm {
        Some(n) => n.forward(&x, mode),
        None => Ok(x),
    }
}

fn norm_infer<T: Scalar>(norm: &Option<BatchNorm2d<T>>, x: Tensor<T>) -> Result<Tensor<T>> {
    match norm {
        Some(n) => n.infer(&x),
        None => Ok(x),
    }
}

fn norm_backward<T: Scalar>(norm: &mut Option<BatchNorm2d<T>>, g: Tensor<T>) -> Result<Tensor<T>> {
    match norm {
        Some(n) => n.backward(&g),
        None => Ok(g),
    }
}

impl<T: Scalar> Module<T> for ConvBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        if let Some(n) = &self.norm1 {
            n.visit(&join(prefix, "norm1"), f);
        }
        self.conv2.visit(&join(prefix, "conv2"), f);
        if let Some(n) = &self.norm2 {
            n.visit(&join(prefix, "norm2"), f);
        }
        if let Some(p) = &self.projection {
            p.visit(&join(prefix, "projection"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        if let Some(n) = &mut self.norm1 {
            n.visit_mut(&join(prefix, "norm1"), f);
        }
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        if let Some(n) = &mut self.norm2 {
            n.visit_mut(&join(prefix, "norm2"), f);
        }
        if let Some(p) = &mut self.projection {
            p.visit_mut(&join(prefix, "projection"), f);
        }
    }
}

impl<T: Scalar> Layer<T> for ConvBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Eval {
            return self.infer(x);
        }
        self.check_input(x)?;
        let h = self.conv1.forward(x, mode)?;
        let pre1 = norm_forward(&mut self.norm1, h, mode)?;
        let a1 = relu(&pre1);
        let h = self.conv2.forward(&a1, mode)?;
        let mut pre2 = norm_forward(&mut self.norm2, h, mode)?;
        if self.residual {
            let skip = match &mut self.projection {
                Some(p) => p.forward(x, mode)?,
                None => x.clone(),
            };
            pre2 = add(&pre2, &skip)?;
        }
        let y = relu(&pre2);
        self.cache = Some(BlockCache { pre1, pre2 });
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let h = self.conv1.infer(x)?;
        let a1 = relu(&norm_infer(&self.norm1, h)?);
        let h = self.conv2.infer(&a1)?;
        let mut pre2 = norm_infer(&self.norm2, h)?;
        if self.residual {
            pre2 = add(&pre2, &self.skip_infer(x)?)?;
        }
        Ok(relu(&pre2))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(Error::MissingContext("conv_block"))?;
        let g2 = relu_backward(grad_out, &cache.pre2)?;
        let skip_grad = if self.residual {
            Some(match &mut self.projection {
                Some(p) => p.backward(&g2)?,
                None => g2.clone(),
            })
        } else {
            None
        };
        let g = norm_backward(&mut self.norm2, g2)?;
        let g = self.conv2.backward(&g)?;
        let g = relu_backward(&g, &cache.pre1)?;
        let g = norm_backward(&mut self.norm1, g)?;
        let gx = self.conv1.backward(&g)?;
        match skip_grad {
            Some(s) => add(&gx, &s),
            None => Ok(gx),
        }
    }
}
