//! `eval`: score a checkpoint on one manifest split.

use std::path::{Path, PathBuf};

use cropseg_core::data::io::load_manifest_scenes;
use cropseg_core::data::{LabelledScene, NormStats, Split};
use cropseg_core::metrics::{MetricReport, METRIC_HEADER};
use cropseg_core::model::{load_checkpoint, save_checkpoint, Checkpoint};
use cropseg_core::train::evaluate;
use cropseg_core::{Error, UNet};

use crate::config::data_error;
use crate::dataset::{scenes_of, tiles};
use crate::error::{CliError, CliResult};

/// Read a checkpoint for inference: its model and normalization statistics.
pub fn load_model(path: &Path) -> CliResult<(UNet<f32>, NormStats)> {
    let ckpt = load_checkpoint(path).map_err(|e| match e {
        e @ Error::Data { .. } => CliError::Core(e),
        other => data_error(path, other),
    })?;
    let norm = ckpt
        .norm
        .ok_or_else(|| data_error(path, "checkpoint carries no normalization statistics"))?;
    if norm.channels() != ckpt.model.config().in_channels {
        return Err(data_error(path, "normalization and model channel counts differ"));
    }
    Ok((ckpt.model, norm))
}

/// Write via a temporary file so readers never see a partial checkpoint.
pub fn save_atomic(path: &Path, ckpt: &Checkpoint) -> CliResult<()> {
    let tmp = path.with_extension("ckpt.tmp");
    save_checkpoint(&tmp, ckpt).map_err(|e| data_error(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| data_error(path, e))
}

/// Metrics of `model` over every `IS` tile (edge-flush tiles included) of the
/// `split` scenes.
pub fn evaluate_scenes(
    model: &UNet<f32>,
    norm: &NormStats,
    scenes: &[&LabelledScene],
    epsilon: f64,
    threshold: f64,
) -> CliResult<MetricReport> {
    let is = model.config().input_size;
    let samples = tiles(scenes, norm, is, is, true)?;
    Ok(evaluate(model, &samples, epsilon, threshold)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub split: Split,
    pub out_dir: PathBuf,
    /// Architecture the caller's configuration names, if any.
    pub expect_model: Option<String>,
    pub epsilon: f64,
    pub threshold: f64,
}

pub fn metrics_file(out_dir: &Path, split: Split) -> PathBuf {
    let name = match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    };
    out_dir.join(format!("metrics_{name}.csv"))
}

/// Evaluate and write `metrics_<split>.csv`. Returns the report and its record.
pub fn cmd_eval(args: &EvalArgs) -> CliResult<(MetricReport, String)> {
    let (model, norm) = load_model(&args.checkpoint)?;
    let cfg = model.config().clone();
    if let Some(name) = &args.expect_model {
        if *name != cfg.name() {
            return Err(CliError::Config(format!(
                "{} holds {} but the configuration names {name}",
                args.checkpoint.display(),
                cfg.name()
            )));
        }
    }
    let scenes = load_manifest_scenes(&args.manifest)?;
    let chosen = scenes_of(&scenes, args.split);
    if chosen.is_empty() {
        return Err(data_error(&args.manifest, format!("no scenes in split {:?}", args.split)));
    }
    if let Some(s) = chosen.iter().find(|s| s.scene.dims().0 != cfg.in_channels) {
        return Err(CliError::Config(format!(
            "{} has {} channels but {} expects {}",
            s.scene.source,
            s.scene.dims().0,
            cfg.name(),
            cfg.in_channels
        )));
    }
    let report = evaluate_scenes(&model, &norm, &chosen, args.epsilon, args.threshold)?;
    let record = report.to_record(&cfg);
    std::fs::create_dir_all(&args.out_dir).map_err(|e| data_error(&args.out_dir, e))?;
    let path = metrics_file(&args.out_dir, args.split);
    std::fs::write(&path, format!("{METRIC_HEADER}\n{record}\n")).map_err(|e| data_error(&path, e))?;
    Ok((report, record))
}
