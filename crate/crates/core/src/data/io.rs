//! Files: 8-bit PNG scenes and masks, JSON label documents, CSV manifests.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::raster::{rasterize, validate_polygons};
use super::{LabelFile, Scene, Split};

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::data(path, e.to_string())
}

/// Write an 8-bit PNG with 1 (gray) or 3 (RGB) interleaved channels.
pub fn write_png(path: &Path, width: usize, height: usize, channels: usize, pixels: &[u8]) -> Result<()> {
    let color = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        _ => return Err(Error::invalid("write_png", format!("{channels} channels"))),
    };
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| io_err(path, e))?;
    w.write_image_data(pixels).map_err(|e| io_err(path, e))?;
    w.finish().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Decode an 8-bit PNG into `[C, H, W]` raw intensities. Alpha is dropped.
pub fn read_png(path: &Path) -> Result<Tensor<f32>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| io_err(path, e))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| io_err(path, e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(io_err(path, "only 8-bit images are supported"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let (stored, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(io_err(path, "unexpanded palette image")),
    };
    let mut data = vec![0f32; keep * h * w];
    for i in 0..h * w {
        for c in 0..keep {
            data[c * h * w + i] = buf[i * stored + c] as f32;
        }
    }
    Tensor::new(vec![keep, h, w], data)
}

fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn band_path(path: &Path, k: usize) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scene");
    path.with_file_name(format!("{stem}_band{k}.png"))
}

/// Save raw intensities: one RGB file for 3 channels, otherwise one gray
/// file per band named `<stem>_band<k>.png`. Returns the files written.
pub fn write_scene_image(path: &Path, image: &Tensor<f32>) -> Result<Vec<PathBuf>> {
    let d = image.dims();
    if d.len() != 3 {
        return Err(Error::shape("write_scene_image", "[C, H, W]", image.shape()));
    }
    let (c, h, w) = (d[0], d[1], d[2]);
    if c == 3 {
        let mut px = vec![0u8; 3 * h * w];
        for i in 0..h * w {
            for ch in 0..3 {
                px[i * 3 + ch] = to_u8(image.data()[ch * h * w + i]);
            }
        }
        write_png(path, w, h, 3, &px)?;
        return Ok(vec![path.to_path_buf()]);
    }
    (0..c)
        .map(|k| {
            let p = band_path(path, k);
            let px: Vec<u8> = image.data()[k * h * w..(k + 1) * h * w].iter().map(|&v| to_u8(v)).collect();
            write_png(&p, w, h, 1, &px)?;
            Ok(p)
        })
        .collect()
}

/// Load a scene image from `path`, or from its `_band<k>` files when `path`
/// itself does not exist.
pub fn read_scene_image(path: &Path) -> Result<Tensor<f32>> {
    if path.exists() {
        return read_png(path);
    }
    let mut bands = Vec::new();
    while band_path(path, bands.len()).exists() {
        let b = read_png(&band_path(path, bands.len()))?;
        if b.dims()[0] != 1 {
            return Err(io_err(&band_path(path, bands.len()), "band file is not single-channel"));
        }
        bands.push(b);
    }
    if bands.is_empty() {
        return Err(io_err(path, "image not found (no file and no _band0 file)"));
    }
    let (h, w) = (bands[0].dims()[1], bands[0].dims()[2]);
    if bands.iter().any(|b| b.dims()[1..] != [h, w]) {
        return Err(io_err(path, "band files differ in size"));
    }
    let c = bands.len();
    let data = bands.into_iter().flat_map(|b| b.into_data()).collect();
    Tensor::new(vec![c, h, w], data)
}

/// Binary `[1, H, W]` mask as an 8-bit gray PNG: 0 background, 255 crop.
pub fn write_mask(path: &Path, mask: &Tensor<f32>) -> Result<()> {
    let d = mask.dims();
    if d.len() != 3 || d[0] != 1 {
        return Err(Error::shape("write_mask", "[1, H, W]", mask.shape()));
    }
    let px: Vec<u8> = mask.data().iter().map(|&v| if v >= 0.5 { 255 } else { 0 }).collect();
    write_png(path, d[2], d[1], 1, &px)
}

pub fn read_mask(path: &Path) -> Result<Tensor<f32>> {
    let t = read_png(path)?;
    if t.dims()[0] != 1 {
        return Err(io_err(path, "mask is not single-channel"));
    }
    Ok(t.map(|v| if v >= 128.0 { 1.0 } else { 0.0 }))
}

pub fn write_labels(path: &Path, labels: &LabelFile) -> Result<()> {
    let text = serde_json::to_string_pretty(labels).map_err(|e| io_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn read_labels(path: &Path) -> Result<LabelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let labels: LabelFile = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
    validate_polygons(&labels.polygons).map_err(|e| io_err(path, e))?;
    Ok(labels)
}

/// One manifest row. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub labels: PathBuf,
    pub split: Split,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for e in entries {
        w.serialize(e).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| io_err(path, e)))
        .collect()
}

/// A scene loaded from disk with its rasterized ground truth.
#[derive(Debug, Clone)]
pub struct LabelledScene {
    pub scene: Scene,
    pub mask: Tensor<f32>,
    pub split: Split,
}

/// Read every manifest entry, resolving paths against the manifest directory.
pub fn load_manifest_scenes(manifest: &Path) -> Result<Vec<LabelledScene>> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let image_path = dir.join(&e.image);
            let label_path = dir.join(&e.labels);
            let image = read_scene_image(&image_path)?;
            let labels = read_labels(&label_path)?;
            let (h, w) = (image.dims()[1], image.dims()[2]);
            let mask = rasterize(&labels.polygons, w, h).map_err(|err| io_err(&label_path, err))?;
            Ok(LabelledScene {
                scene: Scene::new(&labels.scene_id, image, image_path.display().to_string())?,
                mask,
                split: e.split,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Polygon;

    #[test]
    fn rgb_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let im = Tensor::from_fn(vec![3, 4, 5], |i| (i * 4 % 256) as f32).unwrap();
        assert_eq!(write_scene_image(&p, &im).unwrap(), vec![p.clone()]);
        assert_eq!(read_scene_image(&p).unwrap(), im);
    }

    #[test]
    fn band_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("multi.png");
        let im = Tensor::from_fn(vec![4, 3, 3], |i| i as f32).unwrap();
        let files = write_scene_image(&p, &im).unwrap();
        assert_eq!(files.len(), 4);
        assert!(files[2].ends_with("multi_band2.png"));
        assert_eq!(read_scene_image(&p).unwrap(), im);
        assert!(read_scene_image(&dir.path().join("none.png")).is_err());
    }

    #[test]
    fn mask_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = Tensor::new(vec![1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        write_mask(&p, &m).unwrap();
        let raw = read_png(&p).unwrap();
        assert_eq!(raw.data(), &[0.0, 255.0, 0.0]);
        assert_eq!(read_mask(&p).unwrap(), m);
    }

    #[test]
    fn label_and_manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let lp = dir.path().join("l.json");
        let labels = LabelFile {
            scene_id: "s0".into(),
            polygons: vec![Polygon::rect(1.0, 1.0, 3.5, 2.0)],
        };
        write_labels(&lp, &labels).unwrap();
        assert_eq!(read_labels(&lp).unwrap(), labels);

        let mp = dir.path().join("manifest.csv");
        let entries = vec![ManifestEntry {
            image: "s0.png".into(),
            labels: "l.json".into(),
            split: Split::Val,
        }];
        write_manifest(&mp, &entries).unwrap();
        assert!(std::fs::read_to_string(&mp).unwrap().starts_with("image,labels,split\n"));
        assert_eq!(read_manifest(&mp).unwrap(), entries);
    }

    #[test]
    fn bad_label_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let lp = dir.path().join("bad.json");
        std::fs::write(&lp, r#"{"scene_id":"x","polygons":[{"rings":[[[0,0],[1,1]]]}]}"#).unwrap();
        let err = read_labels(&lp).unwrap_err().to_string();
        assert!(err.contains("bad.json"), "{err}");
    }
}
