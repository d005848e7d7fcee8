//! Seeded inputs shared by the criterion benchmarks in `benches/`.

use cropseg_core::data::{synth_dataset, tile_scene, NormStats, Sample, Scene};
use cropseg_core::{Tensor, UNet, UNetConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn randn(dims: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::randn(dims.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).expect("valid dims")
}

pub fn model(name: &str) -> UNet<f32> {
    UNet::build(&UNetConfig::parse(name).expect("valid name"), 0).expect("buildable")
}

/// Normalized `size`-pixel tiles cut from `n` synthetic scenes.
pub fn samples(n: usize, size: usize) -> Vec<Sample> {
    let scenes = synth_dataset(n, size, 0).expect("synthetic scenes");
    let images: Vec<_> = scenes.iter().map(|s| &s.scene.image).collect();
    let norm = NormStats::fit(&images).expect("statistics");
    scenes
        .iter()
        .flat_map(|s| {
            let scene = Scene::new(&s.scene.scene_id, norm.apply(&s.scene.image).expect("normalize"), "synth")
                .expect("scene");
            tile_scene(&scene, &s.mask, size, size).expect("tiles")
        })
        .collect()
}
