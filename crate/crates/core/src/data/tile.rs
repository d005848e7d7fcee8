//! Fixed-size tiling of scenes and averaging stitch of tile predictions.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Sample, Scene, TileOrigin};

fn check_tiling(op: &'static str, h: usize, w: usize, tile: usize, stride: usize) -> Result<()> {
    if tile == 0 || stride == 0 {
        return Err(Error::invalid(op, "tile size and stride must be >= 1"));
    }
    if tile > h || tile > w {
        return Err(Error::invalid(op, format!("tile size {tile} exceeds scene {h}x{w}")));
    }
    Ok(())
}

fn positions(extent: usize, tile: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..=(extent - tile) / stride).map(move |i| i * stride)
}

/// Origins `(x0, y0)` on the stride grid whose tile lies fully inside, row-major.
pub fn tile_origins(h: usize, w: usize, tile: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    check_tiling("tile_origins", h, w, tile, stride)?;
    Ok(positions(h, tile, stride)
        .flat_map(|y| positions(w, tile, stride).map(move |x| (x, y)))
        .collect())
}

/// Stride-grid origins plus a final tile flush with the right and bottom
/// edges when the grid leaves them uncovered.
pub fn covering_origins(
    h: usize,
    w: usize,
    tile: usize,
    stride: usize,
) -> Result<Vec<(usize, usize)>> {
    check_tiling("covering_origins", h, w, tile, stride)?;
    let axis = |extent: usize| {
        let mut v: Vec<usize> = positions(extent, tile, stride).collect();
        if *v.last().unwrap() + tile < extent {
            v.push(extent - tile);
        }
        v
    };
    let (ys, xs) = (axis(h), axis(w));
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect())
}

/// Copy the `size x size` window at `(x0, y0)` out of a `[C, H, W]` tensor.
pub fn crop(t: &Tensor<f32>, x0: usize, y0: usize, size: usize) -> Result<Tensor<f32>> {
    let d = t.dims();
    if d.len() != 3 {
        return Err(Error::shape("crop", "[C, H, W]", t.shape()));
    }
    let (c, h, w) = (d[0], d[1], d[2]);
    if x0 + size > w || y0 + size > h {
        return Err(Error::invalid("crop", format!("window at ({x0}, {y0}) leaves {h}x{w}")));
    }
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in y0..y0 + size {
            let base = (ch * h + y) * w;
            out.extend_from_slice(&t.data()[base + x0..base + x0 + size]);
        }
    }
    Tensor::new(vec![c, size, size], out)
}

fn tiles_at(scene: &Scene, mask: &Tensor<f32>, tile: usize, origins: &[(usize, usize)]) -> Result<Vec<Sample>> {
    let (_, h, w) = scene.dims();
    if mask.dims() != [1, h, w] {
        return Err(Error::shape("tile_scene", format!("[1x{h}x{w}]"), mask.shape()));
    }
    origins
        .iter()
        .map(|&(x0, y0)| {
            Ok(Sample {
                image: crop(&scene.image, x0, y0, tile)?,
                mask: crop(mask, x0, y0, tile)?,
                origin: TileOrigin {
                    scene_id: scene.scene_id.clone(),
                    x0,
                    y0,
                },
            })
        })
        .collect()
}

/// Cut a scene and its mask into tiles on the stride grid.
pub fn tile_scene(scene: &Scene, mask: &Tensor<f32>, tile: usize, stride: usize) -> Result<Vec<Sample>> {
    let (_, h, w) = scene.dims();
    let origins = tile_origins(h, w, tile, stride)?;
    tiles_at(scene, mask, tile, &origins)
}

/// Like [`tile_scene`] but with [`covering_origins`], so every pixel is in a tile.
pub fn tile_scene_covering(
    scene: &Scene,
    mask: &Tensor<f32>,
    tile: usize,
    stride: usize,
) -> Result<Vec<Sample>> {
    let (_, h, w) = scene.dims();
    let origins = covering_origins(h, w, tile, stride)?;
    tiles_at(scene, mask, tile, &origins)
}

/// Average `[1, IS, IS]` tile predictions placed at `(x0, y0)` into a
/// `[1, h, w]` raster. Every pixel must be covered at least once.
pub fn stitch(tiles: &[((usize, usize), Tensor<f32>)], h: usize, w: usize) -> Result<Tensor<f32>> {
    let mut sum = vec![0f64; h * w];
    let mut count = vec![0u32; h * w];
    for ((x0, y0), t) in tiles {
        let d = t.dims();
        if d.len() != 3 || d[0] != 1 || d[1] != d[2] {
            return Err(Error::shape("stitch", "[1, IS, IS]", t.shape()));
        }
        let size = d[1];
        if x0 + size > w || y0 + size > h {
            return Err(Error::invalid("stitch", format!("tile at ({x0}, {y0}) leaves {h}x{w}")));
        }
        for ty in 0..size {
            let row = &t.data()[ty * size..(ty + 1) * size];
            let base = (y0 + ty) * w + x0;
            for (tx, &v) in row.iter().enumerate() {
                sum[base + tx] += v as f64;
                count[base + tx] += 1;
            }
        }
    }
    if let Some(i) = count.iter().position(|&c| c == 0) {
        return Err(Error::CoverageGap { x: i % w, y: i / w });
    }
    let data = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| (s / c as f64) as f32)
        .collect();
    Tensor::new(vec![1, h, w], data)
}
