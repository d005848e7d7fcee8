use super::{join, Dense, Initializer, Layer, Module, TensorRole};
use crate::error::{Error, Result};
use crate::tensor::{
    add, channelwise_scale, channelwise_scale_backward, global_avg_pool,
    global_avg_pool_backward, relu, relu_backward, sigmoid, sigmoid_backward, Mode, Scalar,
    Tensor,
};

pub const DEFAULT_SE_RATIO: usize = 16;

/// Squeeze-and-excitation gate.
///
/// `z = mean_hw(x)`, `s = sigmoid(fc2(relu(fc1(z))))`, `y = x * s` per
/// channel. The bottleneck width is `max(C / ratio, 1)`.
#[derive(Debug, Clone)]
pub struct SeBlock<T: Scalar> {
    pub channels: usize,
    pub ratio: usize,
    pub fc1: Dense<T>,
    pub fc2: Dense<T>,
    cache: Option<SeCache<T>>,
}

#[derive(Debug, Clone)]
struct SeCache<T: Scalar> {
    x: Tensor<T>,
    hidden: Tensor<T>,
    gate: Tensor<T>,
}

impl<T: Scalar> SeBlock<T> {
    pub fn new(channels: usize, ratio: usize, init: &mut Initializer) -> Result<Self> {
        if ratio == 0 {
            return Err(Error::invalid("se_block", "ratio must be >= 1"));
        }
        let reduced = Self::reduced_width(channels, ratio);
        Ok(SeBlock {
            channels,
            ratio,
            fc1: Dense::new(channels, reduced, init)?,
            fc2: Dense::new(reduced, channels, init)?,
            cache: None,
        })
    }

    pub fn reduced_width(channels: usize, ratio: usize) -> usize {
        (channels / ratio).max(1)
    }

    /// Trainable scalars of one gate with these dimensions.
    pub fn param_count_for(channels: usize, ratio: usize) -> usize {
        let r = Self::reduced_width(channels, ratio);
        (channels * r + r) + (r * channels + channels)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, _, _) = x.dims4("se_block")?;
        if c != self.channels {
            return Err(Error::shape(
                "se_block",
                format!("{} channels", self.channels),
                x.shape(),
            ));
        }
        Ok(())
    }

    /// Per-channel gate values in `(0, 1)`, shape `[B, C]`.
    pub fn gate(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let z = global_avg_pool(x)?;
        let h = relu(&self.fc1.infer(&z)?);
        Ok(sigmoid(&self.fc2.infer(&h)?))
    }
}

impl<T: Scalar> Module<T> for SeBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

impl<T: Scalar> Layer<T> for SeBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Eval {
            return self.infer(x);
        }
        self.check_input(x)?;
        let z = global_avg_pool(x)?;
        let hidden = self.fc1.forward(&z, mode)?;
        let u = self.fc2.forward(&relu(&hidden), mode)?;
        let gate = sigmoid(&u);
        let y = channelwise_scale(x, &gate)?;
        self.cache = Some(SeCache {
            x: x.clone(),
            hidden,
            gate,
        });
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        channelwise_scale(x, &self.gate(x)?)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(Error::MissingContext("se_block"))?;
        let (gx_direct, g_gate) = channelwise_scale_backward(grad_out, &cache.x, &cache.gate)?;
        let gu = sigmoid_backward(&g_gate, &cache.gate)?;
        let ga = self.fc2.backward(&gu)?;
        let gh = relu_backward(&ga, &cache.hidden)?;
        let gz = self.fc1.backward(&gh)?;
        let gx_squeeze = global_avg_pool_backward(&gz, cache.x.dims())?;
        add(&gx_direct, &gx_squeeze)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::fd::{max_rel_err, numeric_grad};
    use crate::nn::param_count;
    use crate::tensor::dense;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeroed(channels: usize) -> SeBlock<f64> {
        let mut se = SeBlock::new(channels, 4, &mut Initializer::new(0)).unwrap();
        for d in [&mut se.fc1, &mut se.fc2] {
            d.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
            d.bias.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        se
    }

    #[test]
    fn zero_parameters_halve_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let se = zeroed(8);
        let x = Tensor::<f64>::randn(vec![2, 8, 4, 4], 3.0, &mut rng).unwrap();
        let y = se.infer(&x).unwrap();
        assert_eq!(y, x.map(|v| 0.5 * v));
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let se = SeBlock::<f32>::new(8, 2, &mut Initializer::new(9)).unwrap();
        let x = Tensor::zeros(vec![1, 8, 3, 3]).unwrap();
        assert!(se.infer(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bottleneck_width_is_clamped() {
        assert_eq!(SeBlock::<f32>::reduced_width(16, 16), 1);
        assert_eq!(SeBlock::<f32>::reduced_width(8, 16), 1);
        assert_eq!(SeBlock::<f32>::reduced_width(64, 16), 4);
        let se = SeBlock::<f32>::new(64, 16, &mut Initializer::new(0)).unwrap();
        assert_eq!(param_count(&se), SeBlock::<f32>::param_count_for(64, 16));
        assert_eq!(param_count(&se), 64 * 4 + 4 + 4 * 64 + 64);
    }

    #[test]
    fn matches_composition_of_primitives() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut se = SeBlock::<f64>::new(8, 4, &mut Initializer::new(3)).unwrap();
        se.fc1.bias = Tensor::randn(vec![2], 0.3, &mut rng).unwrap();
        se.fc2.bias = Tensor::randn(vec![8], 0.3, &mut rng).unwrap();
        let x = Tensor::<f64>::randn(vec![2, 8, 4, 4], 1.0, &mut rng).unwrap();

        // squeeze by explicit loops, excitation by the dense primitive
        let mut z = vec![0.0; 16];
        for (p, zv) in z.iter_mut().enumerate() {
            *zv = x.data()[p * 16..(p + 1) * 16].iter().sum::<f64>() / 16.0;
        }
        let z = Tensor::new(vec![2, 8], z).unwrap();
        let h = relu(&dense(&z, &se.fc1.weight, &se.fc1.bias).unwrap());
        let u = dense(&h, &se.fc2.weight, &se.fc2.bias).unwrap();
        let s: Vec<f64> = u.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let mut want = x.clone();
        for (p, plane) in want.data_mut().chunks_mut(16).enumerate() {
            plane.iter_mut().for_each(|v| *v *= s[p]);
        }
        let got = se.infer(&x).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() < 1e-6);
    }

    #[test]
    fn output_magnitude_bounded_by_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let se = SeBlock::<f32>::new(16, 4, &mut Initializer::new(7)).unwrap();
        let x = Tensor::<f32>::randn(vec![3, 16, 5, 5], 4.0, &mut rng).unwrap();
        let y = se.infer(&x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!(a.abs() <= b.abs());
        }
        let s = se.gate(&x).unwrap();
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn offset_in_one_channel_only_moves_that_pooled_statistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::<f64>::randn(vec![1, 4, 3, 3], 1.0, &mut rng).unwrap();
        let mut shifted = x.clone();
        shifted.data_mut()[2 * 9..3 * 9].iter_mut().for_each(|v| *v += 1.5);
        let z0 = global_avg_pool(&x).unwrap();
        let z1 = global_avg_pool(&shifted).unwrap();
        for c in 0..4 {
            let d = z1.data()[c] - z0.data()[c];
            if c == 2 {
                assert!((d - 1.5).abs() < 1e-12);
            } else {
                assert_eq!(d, 0.0);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut se = SeBlock::<f64>::new(8, 2, &mut Initializer::new(4)).unwrap();
        se.fc1.bias = Tensor::randn(vec![4], 0.5, &mut rng).unwrap();
        let x = Tensor::<f64>::randn(vec![2, 8, 3, 3], 1.0, &mut rng).unwrap();
        let r = Tensor::<f64>::randn(vec![2, 8, 3, 3], 1.0, &mut rng).unwrap();
        let probe = se.clone();
        se.forward(&x, Mode::Train).unwrap();
        let gx = se.backward(&r).unwrap();
        let num = numeric_grad(&x, 1e-5, |x| probe.infer(x).unwrap().dot(&r).unwrap());
        assert!(max_rel_err(gx.data(), &num) < 1e-4);
        let gw = se.fc1.weight.grad().unwrap().to_vec();
        let num_w = numeric_grad(&probe.fc1.weight, 1e-5, |w| {
            let mut s = probe.clone();
            s.fc1.weight = w.clone();
            s.infer(&x).unwrap().dot(&r).unwrap()
        });
        assert!(max_rel_err(&gw, &num_w) < 1e-4);
    }
}
