use super::{Mode, Scalar, Tensor};
use crate::error::{Error, Result};

/// Per-channel running mean and (unbiased) variance used in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T: Scalar> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    /// Mean 0, variance 1.
    pub fn new(channels: usize) -> Result<Self> {
        Ok(RunningStats {
            mean: Tensor::zeros(vec![channels])?,
            var: Tensor::ones(vec![channels])?,
        })
    }
}

/// Context saved by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T: Scalar> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Batch normalization over `(B, H, W)` per channel.
///
/// Train mode normalizes with batch statistics, updates `running` (when given)
/// with `momentum`, and returns the context for the backward pass. Eval mode
/// requires running statistics and returns no context.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d_forward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: Option<&mut RunningStats<T>>,
    mode: Mode,
    momentum: f64,
    eps: f64,
) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
    let op = "batchnorm2d";
    if eps <= 0.0 {
        return Err(Error::invalid(op, "epsilon must be positive"));
    }
    let (b, c, h, w) = input.dims4(op)?;
    for p in [gamma, beta] {
        if p.dims() != [c] {
            return Err(Error::shape(op, format!("[{c}]"), p.shape()));
        }
    }
    let hw = h * w;
    let x = input.data();
    let eps_t = T::of_f64(eps);
    let (g, bt) = (gamma.data(), beta.data());

    match mode {
        Mode::Eval => {
            let stats = running.ok_or_else(|| {
                Error::invalid(op, "eval mode requires running statistics")
            })?;
            let mut out = Vec::with_capacity(x.len());
            for (p, plane) in x.chunks(hw).enumerate() {
                let ch = p % c;
                let inv = T::one() / (stats.var.data()[ch] + eps_t).sqrt();
                let mean = stats.mean.data()[ch];
                out.extend(plane.iter().map(|&v| g[ch] * (v - mean) * inv + bt[ch]));
            }
            Ok((Tensor::from_shape(input.shape().clone(), out)?, None))
        }
        Mode::Train => {
            let count = b * hw;
            let n = T::of_usize(count);
            let mut mean = vec![T::zero(); c];
            for (p, plane) in x.chunks(hw).enumerate() {
                mean[p % c] += plane.iter().copied().sum::<T>();
            }
            mean.iter_mut().for_each(|m| *m = *m / n);
            let mut var = vec![T::zero(); c];
            for (p, plane) in x.chunks(hw).enumerate() {
                let m = mean[p % c];
                var[p % c] += plane.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
            }
            var.iter_mut().for_each(|v| *v = *v / n);
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();

            let mut x_hat = Vec::with_capacity(x.len());
            let mut out = Vec::with_capacity(x.len());
            for (p, plane) in x.chunks(hw).enumerate() {
                let ch = p % c;
                for &v in plane {
                    let xh = (v - mean[ch]) * inv_std[ch];
                    x_hat.push(xh);
                    out.push(g[ch] * xh + bt[ch]);
                }
            }

            if let Some(stats) = running {
                let m = T::of_f64(momentum);
                let keep = T::one() - m;
                let unbias = if count > 1 {
                    n / (n - T::one())
                } else {
                    T::one()
                };
                for ch in 0..c {
                    let rm = &mut stats.mean.data_mut()[ch];
                    *rm = keep * *rm + m * mean[ch];
                    let rv = &mut stats.var.data_mut()[ch];
                    *rv = keep * *rv + m * var[ch] * unbias;
                }
            }

            let cache = BatchNormCache {
                x_hat: Tensor::from_shape(input.shape().clone(), x_hat)?,
                inv_std,
            };
            Ok((Tensor::from_shape(input.shape().clone(), out)?, Some(cache)))
        }
    }
}

/// Train-mode batch normalization backward.
pub fn batchnorm2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let op = "batchnorm2d_backward";
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(Error::shape(op, cache.x_hat.shape(), grad_out.shape()));
    }
    let (b, c, h, w) = grad_out.dims4(op)?;
    let hw = h * w;
    let n = T::of_usize(b * hw);
    let (g, xh) = (grad_out.data(), cache.x_hat.data());

    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for (p, (gp, xp)) in g.chunks(hw).zip(xh.chunks(hw)).enumerate() {
        let ch = p % c;
        for (&gv, &xv) in gp.iter().zip(xp) {
            sum_g[ch] += gv;
            sum_gx[ch] += gv * xv;
        }
    }

    let mut dx = Vec::with_capacity(g.len());
    for (p, (gp, xp)) in g.chunks(hw).zip(xh.chunks(hw)).enumerate() {
        let ch = p % c;
        let k = gamma.data()[ch] * cache.inv_std[ch] / n;
        for (&gv, &xv) in gp.iter().zip(xp) {
            dx.push(k * (n * gv - sum_g[ch] - xv * sum_gx[ch]));
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::from_shape(grad_out.shape().clone(), dx)?,
        gamma: Tensor::new(vec![c], sum_gx)?,
        beta: Tensor::new(vec![c], sum_g)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_params(c: usize) -> (Tensor<f64>, Tensor<f64>) {
        (Tensor::ones(vec![c]).unwrap(), Tensor::zeros(vec![c]).unwrap())
    }

    #[test]
    fn standardized_batch_passes_through() {
        // each channel holds +-1 in equal measure: mean 0, variance 1
        let x = Tensor::<f64>::from_fn(vec![2, 2, 2, 2], |i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .unwrap();
        let (g, b) = unit_params(2);
        let (y, _) = batchnorm2d_forward(&x, &g, &b, None, Mode::Train, 0.1, 1e-5).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-4);
    }

    #[test]
    fn train_output_is_standardized_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::<f64>::randn(vec![3, 2, 4, 4], 3.0, &mut rng)
            .unwrap()
            .map(|v| v + 5.0);
        let (g, b) = unit_params(2);
        let (y, _) = batchnorm2d_forward(&x, &g, &b, None, Mode::Train, 0.1, 1e-5).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|n| y.data()[(n * 2 + ch) * 16..(n * 2 + ch + 1) * 16].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let x = Tensor::<f64>::from_fn(vec![1, 1, 1, 4], |i| i as f64).unwrap();
        let (g, b) = unit_params(1);
        let mut rs = RunningStats::new(1).unwrap();
        batchnorm2d_forward(&x, &g, &b, Some(&mut rs), Mode::Train, 0.1, 1e-5).unwrap();
        // batch mean 1.5, unbiased variance 5/3
        assert!((rs.mean.data()[0] - 0.15).abs() < 1e-12);
        assert!((rs.var.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn eval_without_running_stats_is_an_error() {
        let x = Tensor::<f64>::zeros(vec![1, 1, 2, 2]).unwrap();
        let (g, b) = unit_params(1);
        assert!(batchnorm2d_forward(&x, &g, &b, None, Mode::Eval, 0.1, 1e-5).is_err());
        assert!(batchnorm2d_forward(&x, &g, &b, None, Mode::Train, 0.1, 0.0).is_err());
    }
}
