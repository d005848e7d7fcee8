//! Per-channel normalization fitted on the training split.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel max, then mean and population std of `x / max`. A channel
/// with zero max is left unscaled; a channel with zero std is only centred.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub max: Vec<f32>,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

fn channels_of(images: &[&Tensor<f32>]) -> Result<usize> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("normalize", "no images to fit statistics on"))?;
    let c = first
        .dims()
        .first()
        .copied()
        .filter(|_| first.dims().len() == 3)
        .ok_or_else(|| Error::shape("normalize", "[C, H, W]", first.shape()))?;
    for im in images {
        if im.dims().len() != 3 || im.dims()[0] != c {
            return Err(Error::shape("normalize", format!("[{c}, H, W]"), im.shape()));
        }
    }
    Ok(c)
}

impl NormStats {
    /// Two-pass statistics over `[C, H, W]` images, accumulated in f64.
    pub fn fit(images: &[&Tensor<f32>]) -> Result<Self> {
        let c = channels_of(images)?;
        let planes = |ch: usize| {
            images.iter().flat_map(move |im| {
                let hw = im.dims()[1] * im.dims()[2];
                im.data()[ch * hw..(ch + 1) * hw].iter().map(|&v| v as f64)
            })
        };
        let mut stats = NormStats {
            max: vec![0.0; c],
            mean: vec![0.0; c],
            std: vec![0.0; c],
        };
        for ch in 0..c {
            let max = planes(ch).fold(0.0f64, f64::max);
            let scale = if max > 0.0 { max } else { 1.0 };
            let n = planes(ch).count() as f64;
            let mean = planes(ch).map(|v| v / scale).sum::<f64>() / n;
            let var = planes(ch).map(|v| (v / scale - mean).powi(2)).sum::<f64>() / n;
            stats.max[ch] = scale as f32;
            stats.mean[ch] = mean as f32;
            stats.std[ch] = var.sqrt() as f32;
        }
        Ok(stats)
    }

    pub fn channels(&self) -> usize {
        self.max.len()
    }

    /// Normalized copy of a `[C, H, W]` image.
    pub fn apply(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        let c = channels_of(&[image])?;
        if c != self.channels() {
            return Err(Error::shape(
                "normalize",
                format!("{} channels", self.channels()),
                format!("{c} channels"),
            ));
        }
        let hw = image.dims()[1] * image.dims()[2];
        let mut out = image.clone();
        for (ch, plane) in out.data_mut().chunks_mut(hw).enumerate() {
            let (max, mean, std) = (self.max[ch] as f64, self.mean[ch] as f64, self.std[ch] as f64);
            let div = if std > 0.0 { std } else { 1.0 };
            for v in plane {
                *v = ((*v as f64 / max - mean) / div) as f32;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_becomes_zero() {
        let im = Tensor::from_fn(vec![2, 3, 3], |i| if i < 9 { 7.0 } else { i as f32 }).unwrap();
        let s = NormStats::fit(&[&im]).unwrap();
        assert_eq!(s.std[0], 0.0);
        let out = s.apply(&im).unwrap();
        assert!(out.data()[..9].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardized_training_data() {
        let a = Tensor::from_fn(vec![1, 4, 4], |i| (i * i) as f32).unwrap();
        let b = Tensor::from_fn(vec![1, 4, 4], |i| (3 * i + 1) as f32).unwrap();
        let s = NormStats::fit(&[&a, &b]).unwrap();
        let na = s.apply(&a).unwrap();
        let nb = s.apply(&b).unwrap();
        let all: Vec<f64> = na.data().iter().chain(nb.data()).map(|&v| v as f64).collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn matches_loop_oracle() {
        let a = Tensor::from_fn(vec![3, 5, 2], |i| ((i * 37) % 255) as f32).unwrap();
        let s = NormStats::fit(&[&a]).unwrap();
        for ch in 0..3 {
            let vals = &a.data()[ch * 10..(ch + 1) * 10];
            let mut max = 0.0f64;
            for &v in vals {
                if v as f64 > max {
                    max = v as f64;
                }
            }
            let mut sum = 0.0;
            for &v in vals {
                sum += v as f64 / max;
            }
            let mean = sum / 10.0;
            let mut ss = 0.0;
            for &v in vals {
                ss += (v as f64 / max - mean).powi(2);
            }
            assert!((s.max[ch] as f64 - max).abs() < 1e-6);
            assert!((s.mean[ch] as f64 - mean).abs() < 1e-6);
            assert!((s.std[ch] as f64 - (ss / 10.0).sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let a = Tensor::zeros(vec![3, 2, 2]).unwrap();
        let s = NormStats::fit(&[&a]).unwrap();
        assert!(s.apply(&Tensor::zeros(vec![1, 2, 2]).unwrap()).is_err());
        assert!(NormStats::fit(&[]).is_err());
    }
}
