use super::UNetConfig;
use crate::error::{Error, Result};
use crate::nn::{join, ConvBlock, Conv2d, Initializer, Layer, Module, SeBlock, TensorRole, UpConv2x2};
use crate::tensor::{
    add, concat_channels, maxpool2x2, maxpool2x2_backward, sigmoid, sigmoid_backward,
    split_channels, Mode, PoolIndices, Scalar, Tensor,
};

/// Conv block plus optional SE gate. Used for the encoder stages and the
/// bottleneck.
#[derive(Debug, Clone)]
pub struct EncoderStage<T: Scalar> {
    pub block: ConvBlock<T>,
    pub se: Option<SeBlock<T>>,
}

impl<T: Scalar> EncoderStage<T> {
    fn new(c_in: usize, c_out: usize, cfg: &UNetConfig, init: &mut Initializer) -> Result<Self> {
        let block = ConvBlock::new(c_in, c_out, cfg.batchnorm, cfg.use_residual, init)?;
        let se = if cfg.use_se {
            Some(SeBlock::new(c_out, cfg.se_ratio, init)?)
        } else {
            None
        };
        Ok(EncoderStage { block, se })
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let h = self.block.forward(x, mode)?;
        match &mut self.se {
            Some(se) => se.forward(&h, mode),
            None => Ok(h),
        }
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.block.infer(x)?;
        match &self.se {
            Some(se) => se.infer(&h),
            None => Ok(h),
        }
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let g = match &mut self.se {
            Some(se) => se.backward(g)?,
            None => g.clone(),
        };
        self.block.backward(&g)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        self.block.visit(&join(prefix, "block"), f);
        if let Some(se) = &self.se {
            se.visit(&join(prefix, "se"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        self.block.visit_mut(&join(prefix, "block"), f);
        if let Some(se) = &mut self.se {
            se.visit_mut(&join(prefix, "se"), f);
        }
    }
}

/// Up-convolution halving the channels, concat with the skip, conv block.
#[derive(Debug, Clone)]
pub struct DecoderStage<T: Scalar> {
    pub up: UpConv2x2<T>,
    pub block: ConvBlock<T>,
}

#[derive(Debug, Clone)]
struct ForwardCache<T: Scalar> {
    pool: Vec<PoolIndices>,
    probs: Tensor<T>,
}

/// U-Net for binary segmentation. Output is per-pixel crop probability.
///
/// Encoder stage `i` has `F0 * 2^i` channels with `F0 = MF / 2^N`, the
/// bottleneck has `MF`, and decoder stage `i` returns to `F0 * 2^i` after
/// concatenating the matching skip. The head is a 1x1 convolution to one
/// logit followed by a sigmoid. Every convolution pads to keep spatial size.
#[derive(Debug, Clone)]
pub struct UNet<T: Scalar = f32> {
    config: UNetConfig,
    pub encoders: Vec<EncoderStage<T>>,
    pub bottleneck: EncoderStage<T>,
    /// Indexed by level; run deepest first.
    pub decoders: Vec<DecoderStage<T>>,
    pub head: Conv2d<T>,
    cache: Option<ForwardCache<T>>,
}

impl<T: Scalar> UNet<T> {
    /// Build with deterministic He-normal initialization from `seed`.
    pub fn build(config: &UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Initializer::new(seed);
        let widths = config.stage_widths();
        let mut encoders = Vec::with_capacity(config.depth);
        let mut c_in = config.in_channels;
        for &w in &widths {
            encoders.push(EncoderStage::new(c_in, w, config, &mut init)?);
            c_in = w;
        }
        let bottleneck = EncoderStage::new(c_in, config.max_filters, config, &mut init)?;
        let mut decoders = Vec::with_capacity(config.depth);
        for (i, &w) in widths.iter().enumerate() {
            let below = if i + 1 < widths.len() {
                widths[i + 1]
            } else {
                config.max_filters
            };
            let up = UpConv2x2::new(below, w, &mut init)?;
            let block = ConvBlock::new(2 * w, w, config.batchnorm, config.use_residual, &mut init)?;
            decoders.push(DecoderStage { up, block });
        }
        let head = Conv2d::new(widths[0], 1, 1, 1, 0, &mut init)?;
        Ok(UNet {
            config: config.clone(),
            encoders,
            bottleneck,
            decoders,
            head,
            cache: None,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        crate::nn::param_count(self)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4("unet")?;
        let is = self.config.input_size;
        if c != self.config.in_channels || h != is || w != is {
            return Err(Error::shape(
                "unet",
                format!("[B, {}, {is}, {is}]", self.config.in_channels),
                x.shape(),
            ));
        }
        Ok(())
    }

    /// Forward pass returning probabilities `[B, 1, IS, IS]`. Train mode uses
    /// batch statistics, updates running statistics and keeps what
    /// [`UNet::backward`] needs.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Eval {
            return self.infer(x);
        }
        self.check_input(x)?;
        let mut pool = Vec::with_capacity(self.config.depth);
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x.clone();
        for enc in &mut self.encoders {
            let s = enc.forward(&h, mode)?;
            let (p, idx) = maxpool2x2(&s)?;
            skips.push(s);
            pool.push(idx);
            h = p;
        }
        h = self.bottleneck.forward(&h, mode)?;
        for (dec, skip) in self.decoders.iter_mut().zip(&skips).rev() {
            let u = dec.up.forward(&h, mode)?;
            h = dec.block.forward(&concat_channels(skip, &u)?, mode)?;
        }
        let probs = sigmoid(&self.head.forward(&h, mode)?);
        self.cache = Some(ForwardCache {
            pool,
            probs: probs.clone(),
        });
        Ok(probs)
    }

    /// Eval-mode forward; leaves the model untouched.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.features(x)?;
        Ok(sigmoid(&self.head.infer(&h)?))
    }

    /// Eval-mode feature map entering the head, `[B, F0, IS, IS]`.
    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x.clone();
        for enc in &self.encoders {
            let s = enc.infer(&h)?;
            h = maxpool2x2(&s)?.0;
            skips.push(s);
        }
        h = self.bottleneck.infer(&h)?;
        for (dec, skip) in self.decoders.iter().zip(&skips).rev() {
            let u = dec.up.infer(&h)?;
            h = dec.block.infer(&concat_channels(skip, &u)?)?;
        }
        Ok(h)
    }

    /// Backpropagate the gradient of the loss with respect to the output
    /// probabilities. Parameter gradients accumulate; the input gradient is
    /// returned.
    pub fn backward(&mut self, grad_probs: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(Error::MissingContext("unet"))?;
        let g = sigmoid_backward(grad_probs, &cache.probs)?;
        let mut g = self.head.backward(&g)?;
        let widths = self.config.stage_widths();
        let mut skip_grads = vec![None; self.config.depth];
        // decoders ran deepest first, so unwind from level 0
        for (level, dec) in self.decoders.iter_mut().enumerate() {
            let gc = dec.block.backward(&g)?;
            let (gs, gu) = split_channels(&gc, widths[level])?;
            skip_grads[level] = Some(gs);
            g = dec.up.backward(&gu)?;
        }
        g = self.bottleneck.backward(&g)?;
        for (level, enc) in self.encoders.iter_mut().enumerate().rev() {
            let gp = maxpool2x2_backward(&g, &cache.pool[level])?;
            let gs = skip_grads[level].take().expect("every level has a skip gradient");
            g = enc.backward(&add(&gp, &gs)?)?;
        }
        Ok(g)
    }

    /// Copy all tensors (parameters and buffers) from `other`.
    pub fn load_state_from(&mut self, other: &UNet<T>) -> Result<()> {
        let mut src = Vec::new();
        other.visit("", &mut |_, t, _| src.push(t.clone()));
        self.load_tensors(src)
    }

    /// All tensors in traversal order.
    pub fn state(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t, _| {
            let mut t = t.clone();
            t.clear_grad();
            out.push(t)
        });
        out
    }

    /// Replace all tensors, in traversal order. Shapes must match exactly.
    pub fn load_tensors(&mut self, tensors: Vec<Tensor<T>>) -> Result<()> {
        let mut expected = Vec::new();
        self.visit("", &mut |name, t, _| expected.push((name.to_string(), t.shape().clone())));
        if expected.len() != tensors.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(&tensors) {
            if t.shape() != shape {
                return Err(Error::Format(format!(
                    "tensor `{name}` has shape {}, model expects {shape}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        self.visit_mut("", &mut |_, t, _| {
            *t = it.next().expect("length checked above");
        });
        Ok(())
    }
}

impl<T: Scalar> Module<T> for UNet<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        for (i, enc) in self.encoders.iter().enumerate() {
            enc.visit(&join(prefix, &format!("encoder.{i}")), f);
        }
        self.bottleneck.visit(&join(prefix, "bottleneck"), f);
        for (i, dec) in self.decoders.iter().enumerate().rev() {
            let p = join(prefix, &format!("decoder.{i}"));
            dec.up.visit(&join(&p, "up"), f);
            dec.block.visit(&join(&p, "block"), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        for (i, enc) in self.encoders.iter_mut().enumerate() {
            enc.visit_mut(&join(prefix, &format!("encoder.{i}")), f);
        }
        self.bottleneck.visit_mut(&join(prefix, "bottleneck"), f);
        for (i, dec) in self.decoders.iter_mut().enumerate().rev() {
            let p = join(prefix, &format!("decoder.{i}"));
            dec.up.visit_mut(&join(&p, "up"), f);
            dec.block.visit_mut(&join(&p, "block"), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

impl<T: Scalar> Layer<T> for UNet<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        UNet::forward(self, x, mode)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        UNet::infer(self, x)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        UNet::backward(self, grad_out)
    }
}
