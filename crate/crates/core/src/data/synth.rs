//! Deterministic synthetic scenes: striped "vineyard" fields inside convex
//! quadrilaterals on a noisy background, with exact polygon labels.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::raster::{rasterize, Polygon};
use super::{LabelFile, Scene};

pub const SYNTH_CHANNELS: usize = 3;
/// Smallest scene side the generator accepts.
pub const MIN_SYNTH_SIZE: usize = 16;
const MIN_FIELD_FRACTION: f64 = 0.01;
const MAX_FIELD_FRACTION: f64 = 0.60;
const MAX_ATTEMPTS: usize = 200;

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub scene: Scene,
    pub labels: LabelFile,
    pub mask: Tensor<f32>,
}

pub fn synth_scene_id(index: usize) -> String {
    format!("scene_{index:03}")
}

fn is_convex(v: &[[f64; 2]]) -> bool {
    let n = v.len();
    (0..n).all(|i| {
        let [ax, ay] = v[i];
        let [bx, by] = v[(i + 1) % n];
        let [cx, cy] = v[(i + 2) % n];
        (bx - ax) * (cy - by) - (by - ay) * (cx - bx) > 0.0
    })
}

/// Convex quadrilateral with one vertex per quadrant around a random centre.
fn quadrilateral(rng: &mut ChaCha8Rng, size: f64) -> Vec<[f64; 2]> {
    loop {
        let cx = rng.gen_range(0.2 * size..0.8 * size);
        let cy = rng.gen_range(0.2 * size..0.8 * size);
        let spin = rng.gen_range(0.0..FRAC_PI_2);
        let v: Vec<[f64; 2]> = (0..4)
            .map(|q| {
                let a = spin + q as f64 * FRAC_PI_2 + rng.gen_range(0.2..FRAC_PI_2 - 0.2);
                let r = rng.gen_range(0.12 * size..0.4 * size);
                [cx + r * a.cos(), cy + r * a.sin()]
            })
            .collect();
        if is_convex(&v) {
            return v;
        }
    }
}

fn closed(mut ring: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    ring.push(ring[0]);
    ring
}

fn draw_fields(rng: &mut ChaCha8Rng, size: usize) -> Result<Vec<Polygon>> {
    let area = (size * size) as f64;
    let wanted = rng.gen_range(1..=2);
    let mut union = vec![false; size * size];
    let mut polygons = Vec::new();
    for _ in 0..MAX_ATTEMPTS {
        if polygons.len() == wanted {
            break;
        }
        let p = Polygon::new(vec![closed(quadrilateral(rng, size as f64))]);
        let m = rasterize(std::slice::from_ref(&p), size, size)?;
        let frac = m.sum() as f64 / area;
        let overlaps = m.data().iter().zip(&union).any(|(&v, &u)| v > 0.0 && u);
        if (MIN_FIELD_FRACTION..=MAX_FIELD_FRACTION).contains(&frac) && !overlaps {
            for (u, &v) in union.iter_mut().zip(m.data()) {
                *u |= v > 0.0;
            }
            polygons.push(p);
        }
    }
    if polygons.is_empty() {
        let s = size as f64;
        polygons.push(Polygon::rect(0.25 * s, 0.25 * s, 0.75 * s, 0.75 * s));
    }
    Ok(polygons)
}

fn render(rng: &mut ChaCha8Rng, size: usize, polygons: &[Polygon]) -> Result<Tensor<f32>> {
    let hw = size * size;
    let mut image = vec![0f32; SYNTH_CHANNELS * hw];
    let base: Vec<f64> = (0..SYNTH_CHANNELS).map(|_| rng.gen_range(80.0..120.0)).collect();
    for c in 0..SYNTH_CHANNELS {
        for px in &mut image[c * hw..(c + 1) * hw] {
            *px = (base[c] + rng.gen_range(-30.0..30.0)).round().clamp(0.0, 255.0) as f32;
        }
    }
    const VINE: [f64; 3] = [45.0, 125.0, 50.0];
    const SOIL: [f64; 3] = [165.0, 130.0, 95.0];
    for p in polygons {
        let m = rasterize(std::slice::from_ref(p), size, size)?;
        let theta = rng.gen_range(0.0..PI);
        let period = rng.gen_range(4.0..8.0);
        let (ct, st) = (theta.cos(), theta.sin());
        for y in 0..size {
            for x in 0..size {
                let i = y * size + x;
                if m.data()[i] == 0.0 {
                    continue;
                }
                let phase = ((x as f64 + 0.5) * ct + (y as f64 + 0.5) * st) / period;
                let colour = if phase.rem_euclid(1.0) < 0.5 { VINE } else { SOIL };
                for c in 0..SYNTH_CHANNELS {
                    let v = colour[c] + rng.gen_range(-10.0..10.0);
                    image[c * hw + i] = v.round().clamp(0.0, 255.0) as f32;
                }
            }
        }
    }
    Tensor::new(vec![SYNTH_CHANNELS, size, size], image)
}

/// `n_scenes` square scenes of side `size`. Fully determined by `seed`.
pub fn synth_dataset(n_scenes: usize, size: usize, seed: u64) -> Result<Vec<SynthScene>> {
    if size < MIN_SYNTH_SIZE {
        return Err(Error::invalid(
            "synth_dataset",
            format!("scene size {size} below {MIN_SYNTH_SIZE}"),
        ));
    }
    (0..n_scenes)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let polygons = draw_fields(&mut rng, size)?;
            let image = render(&mut rng, size, &polygons)?;
            let mask = rasterize(&polygons, size, size)?;
            let scene_id = synth_scene_id(i);
            Ok(SynthScene {
                scene: Scene::new(&scene_id, image, "synthetic")?,
                labels: LabelFile { scene_id, polygons },
                mask,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_dataset(3, 48, 7).unwrap();
        let b = synth_dataset(3, 48, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.scene.image, y.scene.image);
            assert_eq!(x.labels, y.labels);
        }
        let c = synth_dataset(1, 48, 8).unwrap();
        assert_ne!(a[0].scene.image, c[0].scene.image);
    }

    #[test]
    fn field_area_bounds() {
        for s in synth_dataset(12, 64, 3).unwrap() {
            for p in &s.labels.polygons {
                let frac = rasterize(std::slice::from_ref(p), 64, 64).unwrap().sum() / (64.0 * 64.0);
                assert!((0.01..=0.60).contains(&frac), "{frac}");
            }
        }
    }

    #[test]
    fn mask_is_rasterized_labels() {
        for s in synth_dataset(4, 40, 1).unwrap() {
            assert_eq!(s.mask, rasterize(&s.labels.polygons, 40, 40).unwrap());
            assert!(s.scene.image.data().iter().all(|&v| v.fract() == 0.0 && (0.0..=255.0).contains(&v)));
        }
    }

    #[test]
    fn too_small_rejected() {
        assert!(synth_dataset(1, 8, 0).is_err());
    }
}
