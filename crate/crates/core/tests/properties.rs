//! Cross-module invariants checked against independent oracles.

use cropseg_core::data::{
    augment, covering_origins, crop, rasterize, split, stitch, tile_origins, AugmentationSpec, NormStats, Polygon,
    Sample, TileOrigin,
};
use cropseg_core::metrics::soft_dice;
use cropseg_core::model::{read_checkpoint, write_checkpoint, Checkpoint};
use cropseg_core::tensor::{conv2d_forward, transposed_conv2x2_forward};
use cropseg_core::{Tensor, UNet, UNetConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn binary(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let p = rng.gen_range(0.05..0.95);
    (0..n).map(|_| rng.gen_bool(p) as u8 as f64).collect()
}

/// Even-odd ray cast from `(px, py)` towards +x.
fn ray_cast(ring: &[[f64; 2]], px: f64, py: f64) -> bool {
    let mut inside = false;
    let mut j = ring.len() - 1;
    for i in 0..ring.len() {
        let ([xi, yi], [xj, yj]) = (ring[i], ring[j]);
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn star_polygon(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<[f64; 2]> {
    let n = rng.gen_range(3..=10);
    let (cx, cy) = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
    let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles
        .iter()
        .map(|a| {
            let r = rng.gen_range(1.0..w.max(h) as f64);
            [cx + r * a.cos(), cy + r * a.sin()]
        })
        .collect()
}

fn sample(id: &str, image: Tensor<f32>, mask: Tensor<f32>) -> Sample {
    Sample {
        image,
        mask,
        origin: TileOrigin {
            scene_id: id.into(),
            x0: 0,
            y0: 0,
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn soft_dice_of_binary_masks_is_set_dice(h in 1usize..=32, w in 1usize..=32, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut a, b) = (binary(h * w, &mut rng), binary(h * w, &mut rng));
        a[0] = 1.0;
        let inter = a.iter().zip(&b).filter(|(x, y)| **x + **y == 2.0).count() as f64;
        let total = a.iter().chain(&b).sum::<f64>();
        let got = soft_dice(&Tensor::new(vec![1, 1, h, w], a).unwrap(), &Tensor::new(vec![1, 1, h, w], b).unwrap(), 0.0).unwrap();
        prop_assert!((got - 2.0 * inter / total).abs() <= 1e-12);
    }

    #[test]
    fn rasterize_matches_ray_cast(w in 1usize..=64, h in 1usize..=64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ring = star_polygon(&mut rng, w, h);
        let mask = rasterize(&[Polygon::new(vec![ring.clone()])], w, h).unwrap();
        for y in 0..h {
            for x in 0..w {
                let want = ray_cast(&ring, x as f64 + 0.5, y as f64 + 0.5);
                prop_assert_eq!(mask.data()[y * w + x] == 1.0, want, "pixel ({}, {})", x, y);
            }
        }
    }

    #[test]
    fn tiling_then_stitching_is_identity(is in prop::sample::select(vec![4usize, 8, 16]), ky in 1usize..=4, kx in 1usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (is * ky, is * kx);
        let raster = Tensor::<f32>::randn(vec![1, h, w], 1.0, &mut rng).unwrap();
        let tiles: Vec<_> = tile_origins(h, w, is, is).unwrap().into_iter()
            .map(|(x, y)| ((x, y), crop(&raster, x, y, is).unwrap()))
            .collect();
        prop_assert_eq!(tiles.len(), ky * kx);
        prop_assert_eq!(stitch(&tiles, h, w).unwrap(), raster);
    }

    #[test]
    fn overlapping_crops_stitch_back(is in 2usize..=12, extra_h in 0usize..=20, extra_w in 0usize..=20, stride in 1usize..=12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (is + extra_h, is + extra_w);
        let raster = Tensor::<f32>::randn(vec![1, h, w], 1.0, &mut rng).unwrap();
        let tiles: Vec<_> = covering_origins(h, w, is, stride.min(is)).unwrap().into_iter()
            .map(|(x, y)| ((x, y), crop(&raster, x, y, is).unwrap()))
            .collect();
        let back = stitch(&tiles, h, w).unwrap();
        for (a, b) in back.data().iter().zip(raster.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn geometric_augmentation_keeps_masks_binary_and_paired(n in 1usize..=12, seed in any::<u64>(), hflip: bool, vflip: bool, rot90: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = Tensor::new(vec![1, n, n], binary(n * n, &mut rng).into_iter().map(|v| v as f32).collect()).unwrap();
        let noise = Tensor::<f32>::randn(vec![1, n, n], 1.0, &mut rng).unwrap();
        let image = Tensor::new(vec![2, n, n], [mask.data(), noise.data()].concat()).unwrap();
        let spec = AugmentationSpec { hflip, vflip, rot90, brightness: 0.0 };
        let out = augment(&sample("s", image.clone(), mask.clone()), &spec, &mut rng).unwrap();
        prop_assert!(out.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert_eq!(out.mask.data().iter().sum::<f32>(), mask.data().iter().sum::<f32>());
        prop_assert_eq!(&out.image.data()[..n * n], out.mask.data());
        let mut before = image.data().to_vec();
        let mut after = out.image.data().to_vec();
        before.sort_by(f32::total_cmp);
        after.sort_by(f32::total_cmp);
        prop_assert_eq!(before, after);
    }

    #[test]
    fn upconv_is_adjoint_of_stride2_conv(b in 1usize..=2, ci in 1usize..=4, co in 1usize..=4, h in 1usize..=5, w in 1usize..=5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::randn(vec![b, ci, 2 * h, 2 * w], 1.0, &mut rng).unwrap();
        let y = Tensor::<f64>::randn(vec![b, co, h, w], 1.0, &mut rng).unwrap();
        let weight = Tensor::<f64>::randn(vec![co, ci, 2, 2], 1.0, &mut rng).unwrap();
        let cx = conv2d_forward(&x, &weight, &Tensor::zeros(vec![co]).unwrap(), 2, 0).unwrap();
        let cty = transposed_conv2x2_forward(&y, &weight, None).unwrap();
        let (lhs, rhs) = (cx.dot(&y).unwrap(), x.dot(&cty).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn scene_split_is_a_partition(scenes in 2usize..=12, per in 1usize..=4, fraction in 0.05f64..0.95, seed in any::<u64>()) {
        let samples: Vec<Sample> = (0..scenes)
            .flat_map(|s| (0..per).map(move |_| sample(&format!("s{s}"), Tensor::zeros(vec![1, 1, 1]).unwrap(), Tensor::zeros(vec![1, 1, 1]).unwrap())))
            .collect();
        let (train, val) = split(samples, fraction, seed).unwrap();
        prop_assert_eq!(train.len() + val.len(), scenes * per);
        prop_assert!(!train.is_empty() && !val.is_empty());
        for v in &val {
            prop_assert!(train.iter().all(|t| t.origin.scene_id != v.origin.scene_id));
        }
    }

    #[test]
    fn normalized_channels_are_standardized(c in 1usize..=4, n in 2usize..=16, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let im = Tensor::<f32>::from_fn(vec![c, n, n], |_| rng.gen_range(0.0..255.0)).unwrap();
        let norm = NormStats::fit(&[&im]).unwrap();
        let out = norm.apply(&im).unwrap();
        for ch in out.data().chunks(n * n) {
            let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / ch.len() as f64;
            let var = ch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / ch.len() as f64;
            prop_assert!(mean.abs() < 1e-4);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-3);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn checkpoint_roundtrip_preserves_every_tensor(seed in any::<u64>(), se: bool) {
        let cfg = UNetConfig::new(16, 32, 2, se).unwrap();
        let model = UNet::<f32>::build(&cfg, seed).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &Checkpoint::from_model(model.clone())).unwrap();
        let back = read_checkpoint(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(back.model.config(), model.config());
        prop_assert_eq!(back.model.state(), model.state());
    }
}
