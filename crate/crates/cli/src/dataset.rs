//! Turning manifest scenes into normalized training and evaluation tiles.

use std::path::Path;

use cropseg_core::data::{
    held_out_scenes, tile_scene, tile_scene_covering, LabelledScene, NormStats, Sample, Scene, Split,
};

use crate::config::data_error;
use crate::error::{CliError, CliResult};

/// Scenes assigned to `split` in manifest order.
pub fn scenes_of(scenes: &[LabelledScene], split: Split) -> Vec<&LabelledScene> {
    scenes.iter().filter(|s| s.split == split).collect()
}

/// Training and validation scenes. Manifest `val` scenes are used when
/// present; otherwise `val_fraction` of the training scenes is held out by
/// seeded scene-level split (nothing is held out with fewer than two scenes).
pub fn train_val_scenes(
    scenes: &[LabelledScene],
    val_fraction: f64,
    seed: u64,
) -> CliResult<(Vec<&LabelledScene>, Vec<&LabelledScene>)> {
    let train = scenes_of(scenes, Split::Train);
    if train.is_empty() {
        return Err(CliError::Config("the manifest lists no `train` scenes".into()));
    }
    let val = scenes_of(scenes, Split::Val);
    if !val.is_empty() || val_fraction == 0.0 || train.len() < 2 {
        return Ok((train, val));
    }
    let held = held_out_scenes(train.iter().map(|s| s.scene.scene_id.as_str()), val_fraction, seed)?;
    Ok(train.into_iter().partition(|s| !held.contains(&s.scene.scene_id)))
}

/// Normalization statistics of the raw training images.
pub fn fit_norm(scenes: &[&LabelledScene]) -> CliResult<NormStats> {
    let images: Vec<_> = scenes.iter().map(|s| &s.scene.image).collect();
    Ok(NormStats::fit(&images)?)
}

/// Image channel count shared by all scenes.
pub fn channel_count(scenes: &[LabelledScene]) -> CliResult<usize> {
    let first = scenes
        .first()
        .ok_or_else(|| CliError::Config("the manifest lists no scenes".into()))?;
    let c = first.scene.dims().0;
    for s in scenes {
        if s.scene.dims().0 != c {
            return Err(data_error(
                Path::new(&s.scene.source),
                format!("{} channels, expected {c}", s.scene.dims().0),
            ));
        }
    }
    Ok(c)
}

/// Normalize each scene and cut it into `tile`-sized samples. `covering`
/// adds edge-flush tiles so that every pixel is included.
pub fn tiles(
    scenes: &[&LabelledScene],
    norm: &NormStats,
    tile: usize,
    stride: usize,
    covering: bool,
) -> CliResult<Vec<Sample>> {
    let mut out = Vec::new();
    for s in scenes {
        let source = Path::new(&s.scene.source);
        let (_, h, w) = s.scene.dims();
        if h < tile || w < tile {
            return Err(data_error(source, format!("scene {h}x{w} is smaller than the {tile}x{tile} tile")));
        }
        let image = norm.apply(&s.scene.image).map_err(|e| data_error(source, e))?;
        let scene = Scene::new(&s.scene.scene_id, image, s.scene.source.clone())?;
        let cut = if covering {
            tile_scene_covering(&scene, &s.mask, tile, stride)
        } else {
            tile_scene(&scene, &s.mask, tile, stride)
        };
        out.extend(cut.map_err(|e| data_error(source, e))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cropseg_core::Tensor;

    fn scene(id: &str, split: Split, size: usize) -> LabelledScene {
        LabelledScene {
            scene: Scene::new(
                id,
                Tensor::from_fn(vec![3, size, size], |i| (i % 7) as f32).unwrap(),
                format!("{id}.png"),
            )
            .unwrap(),
            mask: Tensor::zeros(vec![1, size, size]).unwrap(),
            split,
        }
    }

    #[test]
    fn manifest_val_scenes_take_priority() {
        let s = vec![scene("a", Split::Train, 8), scene("b", Split::Val, 8), scene("c", Split::Train, 8)];
        let (t, v) = train_val_scenes(&s, 0.5, 0).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(v[0].scene.scene_id, "b");
    }

    #[test]
    fn hold_out_when_manifest_has_no_val() {
        let s: Vec<_> = ["a", "b", "c", "d"].iter().map(|id| scene(id, Split::Train, 8)).collect();
        let (t, v) = train_val_scenes(&s, 0.25, 3).unwrap();
        assert_eq!((t.len(), v.len()), (3, 1));
        let (t, v) = train_val_scenes(&s, 0.0, 3).unwrap();
        assert_eq!((t.len(), v.len()), (4, 0));
        let one = vec![scene("a", Split::Train, 8)];
        assert_eq!(train_val_scenes(&one, 0.5, 0).unwrap().1.len(), 0);
        let none = vec![scene("a", Split::Test, 8)];
        assert!(train_val_scenes(&none, 0.5, 0).is_err());
    }

    #[test]
    fn tiles_are_normalized_and_sized() {
        let s = [scene("a", Split::Train, 12)];
        let refs: Vec<_> = s.iter().collect();
        let norm = fit_norm(&refs).unwrap();
        let t = tiles(&refs, &norm, 8, 8, false).unwrap();
        assert_eq!(t.len(), 1);
        let t = tiles(&refs, &norm, 8, 8, true).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t[0].image.dims(), &[3, 8, 8]);
        let normalized = norm.apply(&s[0].scene.image).unwrap();
        assert_eq!(t[3].image, cropseg_core::data::crop(&normalized, 4, 4, 8).unwrap());
        let err = tiles(&refs, &norm, 16, 8, false).unwrap_err();
        assert!(err.to_string().contains("a.png"), "{err}");
    }

    #[test]
    fn mixed_channel_counts_rejected() {
        let mut s = vec![scene("a", Split::Train, 8), scene("b", Split::Train, 8)];
        assert_eq!(channel_count(&s).unwrap(), 3);
        s[1].scene.image = Tensor::zeros(vec![1, 8, 8]).unwrap();
        assert!(channel_count(&s).is_err());
    }
}
