//! `predict`: tile a full scene, run the model, stitch and binarize.

use std::path::{Path, PathBuf};

use cropseg_core::data::io::{read_labels, read_scene_image, write_mask, write_png};
use cropseg_core::data::{covering_origins, crop, rasterize, stitch, NormStats};
use cropseg_core::metrics::binarize;
use cropseg_core::{Tensor, UNet};

use crate::config::data_error;
use crate::error::CliResult;
use crate::eval::load_model;

const BATCH: usize = 8;
const FILL_ALPHA: f32 = 0.45;
const AGREE: [f32; 3] = [40.0, 200.0, 60.0];
const FALSE_POSITIVE: [f32; 3] = [230.0, 40.0, 40.0];
const MISSED: [f32; 3] = [40.0, 90.0, 230.0];
const BOUNDARY: [u8; 3] = [255, 230, 0];

/// Stitched `[1, H, W]` probabilities for a raw `[C, H, W]` scene, using
/// tiles on the `stride` grid plus edge-flush tiles.
pub fn predict_scene(model: &UNet<f32>, norm: &NormStats, image: &Tensor<f32>, stride: usize) -> CliResult<Tensor<f32>> {
    let is = model.config().input_size;
    let normalized = norm.apply(image)?;
    let (h, w) = (image.dims()[1], image.dims()[2]);
    let origins = covering_origins(h, w, is, stride)?;
    let mut tiles = Vec::with_capacity(origins.len());
    for chunk in origins.chunks(BATCH) {
        let crops = chunk
            .iter()
            .map(|&(x, y)| crop(&normalized, x, y, is))
            .collect::<Result<Vec<_>, _>>()?;
        let probs = model.infer(&Tensor::stack(&crops)?)?;
        for (b, &origin) in chunk.iter().enumerate() {
            tiles.push((origin, probs.batch_item(b)?.reshape(vec![1, is, is])?));
        }
    }
    Ok(stitch(&tiles, h, w)?)
}

/// RGB rendering: the scene, prediction as a translucent fill coloured by
/// agreement with the ground truth, and the ground-truth boundary on top.
pub fn overlay(image: &Tensor<f32>, pred: &Tensor<f32>, truth: &Tensor<f32>) -> Vec<u8> {
    let (c, h, w) = (image.dims()[0], image.dims()[1], image.dims()[2]);
    let (p, t) = (pred.data(), truth.data());
    let inside = |x: isize, y: isize| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && t[y as usize * w + x as usize] >= 0.5;
    let mut out = vec![0u8; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (pi, ti) = (p[i] >= 0.5, t[i] >= 0.5);
            let (xi, yi) = (x as isize, y as isize);
            let edge = ti && !(inside(xi - 1, yi) && inside(xi + 1, yi) && inside(xi, yi - 1) && inside(xi, yi + 1));
            for ch in 0..3 {
                let base = image.data()[ch.min(c - 1) * h * w + i].clamp(0.0, 255.0);
                let fill = match (pi, ti) {
                    (true, true) => Some(AGREE[ch]),
                    (true, false) => Some(FALSE_POSITIVE[ch]),
                    (false, true) => Some(MISSED[ch]),
                    (false, false) => None,
                };
                let v = fill.map_or(base, |f| (1.0 - FILL_ALPHA) * base + FILL_ALPHA * f);
                out[3 * i + ch] = if edge { BOUNDARY[ch] } else { v.round() as u8 };
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    pub labels: Option<PathBuf>,
    /// Tile stride; half the tile size when absent.
    pub stride: Option<usize>,
    pub threshold: f64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub probabilities: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub files: Vec<PathBuf>,
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or("scene".into(), |s| s.to_string_lossy().into_owned())
}

/// Write `<stem>_prob.png` (probability x 255), `<stem>_mask.png` (0/255)
/// and, with labels, `<stem>_overlay.png`.
pub fn cmd_predict(args: &PredictArgs) -> CliResult<Prediction> {
    let (model, norm) = load_model(&args.checkpoint)?;
    let is = model.config().input_size;
    let image = read_scene_image(&args.image)?;
    let (c, h, w) = (image.dims()[0], image.dims()[1], image.dims()[2]);
    if h < is || w < is {
        return Err(data_error(&args.image, format!("scene {h}x{w} is smaller than the {is}x{is} tile")));
    }
    if c != norm.channels() {
        return Err(data_error(&args.image, format!("{c} channels, the model expects {}", norm.channels())));
    }
    let truth = match &args.labels {
        Some(p) => Some(rasterize(&read_labels(p)?.polygons, w, h).map_err(|e| data_error(p, e))?),
        None => None,
    };
    let probabilities = predict_scene(&model, &norm, &image, args.stride.unwrap_or((is / 2).max(1)))?;
    let mask = binarize(&probabilities, args.threshold)?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| data_error(&args.out_dir, e))?;
    let stem = stem(&args.image);
    let prob_path = args.out_dir.join(format!("{stem}_prob.png"));
    let gray: Vec<u8> = probabilities.data().iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    write_png(&prob_path, w, h, 1, &gray)?;
    let mask_path = args.out_dir.join(format!("{stem}_mask.png"));
    write_mask(&mask_path, &mask)?;
    let mut files = vec![prob_path, mask_path];
    if let Some(t) = &truth {
        let path = args.out_dir.join(format!("{stem}_overlay.png"));
        write_png(&path, w, h, 3, &overlay(&image, &mask, t))?;
        files.push(path);
    }
    Ok(Prediction {
        probabilities,
        mask,
        files,
    })
}
