//! `synth`: write a synthetic scene set with labels, masks and a manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use cropseg_core::data::io::{write_labels, write_manifest, write_mask, write_scene_image, ManifestEntry};
use cropseg_core::data::{held_out_scenes, synth_dataset, Split};

use crate::config::data_error;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthArgs {
    pub out_dir: PathBuf,
    pub n_scenes: usize,
    pub size: usize,
    pub seed: u64,
    /// Share of the non-test scenes assigned to `val`.
    pub val_fraction: f64,
    /// Share of all scenes assigned to `test`.
    pub test_fraction: f64,
}

/// Split per scene id: `test` is held out first, then `val` from the rest.
/// A fraction of 0, or fewer than two scenes left, assigns nothing.
pub fn assign_splits(ids: &[String], val_fraction: f64, test_fraction: f64, seed: u64) -> CliResult<Vec<Split>> {
    for (key, f) in [("val_fraction", val_fraction), ("test_fraction", test_fraction)] {
        if !(0.0..1.0).contains(&f) {
            return Err(CliError::Config(format!("{key} {f} must be in [0, 1)")));
        }
    }
    let hold = |pool: &[&String], f: f64, seed: u64| -> CliResult<BTreeSet<String>> {
        if f == 0.0 || pool.len() < 2 {
            return Ok(BTreeSet::new());
        }
        Ok(held_out_scenes(pool.iter().map(|s| s.as_str()), f, seed)?)
    };
    let all: Vec<&String> = ids.iter().collect();
    let test = hold(&all, test_fraction, seed)?;
    let rest: Vec<&String> = ids.iter().filter(|id| !test.contains(*id)).collect();
    let val = hold(&rest, val_fraction, seed.wrapping_add(1))?;
    Ok(ids
        .iter()
        .map(|id| {
            if test.contains(id) {
                Split::Test
            } else if val.contains(id) {
                Split::Val
            } else {
                Split::Train
            }
        })
        .collect())
}

fn create_dir(p: &Path) -> CliResult<()> {
    std::fs::create_dir_all(p).map_err(|e| data_error(p, e))
}

/// Write `images/`, `labels/`, `masks/` and `manifest.csv` under `out_dir`.
/// Reruns with the same arguments produce identical files.
pub fn cmd_synth(args: &SynthArgs) -> CliResult<Vec<ManifestEntry>> {
    let scenes = synth_dataset(args.n_scenes, args.size, args.seed)?;
    let ids: Vec<String> = scenes.iter().map(|s| s.scene.scene_id.clone()).collect();
    let splits = assign_splits(&ids, args.val_fraction, args.test_fraction, args.seed)?;
    for sub in ["images", "labels", "masks"] {
        create_dir(&args.out_dir.join(sub))?;
    }
    let mut entries = Vec::with_capacity(scenes.len());
    for (s, split) in scenes.iter().zip(splits) {
        let id = &s.scene.scene_id;
        let image = PathBuf::from("images").join(format!("{id}.png"));
        let labels = PathBuf::from("labels").join(format!("{id}.json"));
        write_scene_image(&args.out_dir.join(&image), &s.scene.image)?;
        write_labels(&args.out_dir.join(&labels), &s.labels)?;
        write_mask(&args.out_dir.join("masks").join(format!("{id}.png")), &s.mask)?;
        entries.push(ManifestEntry { image, labels, split });
    }
    write_manifest(&args.out_dir.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}
