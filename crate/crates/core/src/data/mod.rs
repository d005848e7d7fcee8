//! Ground truth, scenes and samples: rasterization, tiling and stitching,
//! augmentation, normalization, splits, synthetic data and file formats.

mod augment;
pub mod io;
mod normalize;
mod raster;
mod synth;
mod tile;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use io::{LabelledScene, ManifestEntry};
pub use augment::{augment, sample_transform, AugmentationSpec, GeometricTransform};
pub use normalize::NormStats;
pub use raster::{point_in_polygon, rasterize, validate_polygons, Polygon};
pub use synth::{synth_dataset, synth_scene_id, SynthScene, MIN_SYNTH_SIZE, SYNTH_CHANNELS};
pub use tile::{covering_origins, crop, stitch, tile_origins, tile_scene, tile_scene_covering};

/// Polygon label document for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelFile {
    pub scene_id: String,
    pub polygons: Vec<Polygon>,
}

/// Raw `[C, H, W]` intensities of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub image: Tensor<f32>,
    pub source: String,
}

impl Scene {
    pub fn new(scene_id: &str, image: Tensor<f32>, source: impl Into<String>) -> Result<Self> {
        if image.dims().len() != 3 {
            return Err(Error::shape("scene", "[C, H, W]", image.shape()));
        }
        Ok(Scene {
            scene_id: scene_id.to_string(),
            image,
            source: source.into(),
        })
    }

    /// `(C, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let d = self.image.dims();
        (d[0], d[1], d[2])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileOrigin {
    pub scene_id: String,
    pub x0: usize,
    pub y0: usize,
}

/// One network input: image `[C, IS, IS]` and mask `[1, IS, IS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub origin: TileOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split `{s}` (train, val or test)"))),
        }
    }
}

/// Scene ids assigned to the held-out side of a scene-level split: a seeded
/// shuffle of the sorted ids, taking `round(fraction * n)` clamped to `1..n`.
pub fn held_out_scenes<'a>(
    scene_ids: impl IntoIterator<Item = &'a str>,
    fraction: f64,
    seed: u64,
) -> Result<BTreeSet<String>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("split", format!("fraction {fraction} outside (0, 1)")));
    }
    let mut ids: Vec<String> = scene_ids
        .into_iter()
        .map(str::to_string)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if ids.len() < 2 {
        return Err(Error::invalid("split", "a scene-level split needs at least two scenes"));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let k = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    Ok(ids.into_iter().take(k).collect())
}

/// Partition samples by scene: every tile of a scene lands on the same side.
pub fn split(samples: Vec<Sample>, fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let held = held_out_scenes(samples.iter().map(|s| s.origin.scene_id.as_str()), fraction, seed)?;
    Ok(samples
        .into_iter()
        .partition(|s| !held.contains(&s.origin.scene_id)))
}
