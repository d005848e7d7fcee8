//! On-the-fly augmentation: flips, quarter turns and brightness jitter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSpec {
    pub hflip: bool,
    pub vflip: bool,
    pub rot90: bool,
    /// Image is multiplied by `u` drawn uniformly from `[1 - b, 1 + b]`.
    pub brightness: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            hflip: true,
            vflip: true,
            rot90: true,
            brightness: 0.1,
        }
    }
}

impl AugmentationSpec {
    pub fn disabled() -> Self {
        AugmentationSpec {
            hflip: false,
            vflip: false,
            rot90: false,
            brightness: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.brightness) {
            return Err(Error::Config(format!(
                "brightness jitter {} must be in [0, 1)",
                self.brightness
            )));
        }
        Ok(())
    }
}

/// Geometric part of an augmentation: optional flips then `quarter_turns`
/// counter-clockwise rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GeometricTransform {
    pub hflip: bool,
    pub vflip: bool,
    pub quarter_turns: u8,
}

impl GeometricTransform {
    pub fn is_identity(&self) -> bool {
        !self.hflip && !self.vflip && self.quarter_turns % 4 == 0
    }

    /// Apply to a `[C, H, W]` or `[B, C, H, W]` tensor. Rotations need `H == W`.
    pub fn apply(&self, t: &Tensor<f32>) -> Result<Tensor<f32>> {
        let d = t.dims();
        if d.len() < 2 {
            return Err(Error::shape("augment", "[.., H, W]", t.shape()));
        }
        let (h, w) = (d[d.len() - 2], d[d.len() - 1]);
        let turns = self.quarter_turns % 4;
        if turns % 2 == 1 && h != w {
            return Err(Error::invalid("augment", "rotation needs a square raster"));
        }
        if self.is_identity() {
            return Ok(t.clone());
        }
        let mut out = t.data().to_vec();
        for (src, dst) in t.data().chunks(h * w).zip(out.chunks_mut(h * w)) {
            for y in 0..h {
                for x in 0..w {
                    // source coordinate after flips
                    let (mut sx, mut sy) = (x, y);
                    // undo rotation: output (x, y) reads from the rotated-back position
                    for _ in 0..turns {
                        let (nx, ny) = (w - 1 - sy, sx);
                        sx = nx;
                        sy = ny;
                    }
                    if self.vflip {
                        sy = h - 1 - sy;
                    }
                    if self.hflip {
                        sx = w - 1 - sx;
                    }
                    dst[y * w + x] = src[sy * w + sx];
                }
            }
        }
        Tensor::from_shape(t.shape().clone(), out)
    }
}

/// Draw a transform and brightness factor from `spec`. Disabled options consume no randomness.
pub fn sample_transform<R: Rng + ?Sized>(spec: &AugmentationSpec, rng: &mut R) -> (GeometricTransform, f32) {
    let hflip = spec.hflip && rng.gen_bool(0.5);
    let vflip = spec.vflip && rng.gen_bool(0.5);
    let quarter_turns = if spec.rot90 { rng.gen_range(0..4u8) } else { 0 };
    let scale = if spec.brightness > 0.0 {
        rng.gen_range(1.0 - spec.brightness..=1.0 + spec.brightness) as f32
    } else {
        1.0
    };
    (
        GeometricTransform {
            hflip,
            vflip,
            quarter_turns,
        },
        scale,
    )
}

/// Augmented copy of `sample`: the same geometric transform for image and
/// mask, brightness on the image only.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, spec: &AugmentationSpec, rng: &mut R) -> Result<Sample> {
    let (geo, scale) = sample_transform(spec, rng);
    let mut image = geo.apply(&sample.image)?;
    if scale != 1.0 {
        image.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    Ok(Sample {
        image,
        mask: geo.apply(&sample.mask)?,
        origin: sample.origin.clone(),
    })
}
