//! `train`: fit a model on the manifest's training scenes.

use std::path::{Path, PathBuf};

use cropseg_core::data::io::load_manifest_scenes;
use cropseg_core::data::{LabelledScene, NormStats};
use cropseg_core::model::{load_checkpoint, Checkpoint};
use cropseg_core::train::{Trainer, HISTORY_HEADER};
use cropseg_core::UNet;

use crate::config::{data_error, RunConfig};
use crate::dataset::{channel_count, fit_norm, tiles, train_val_scenes};
use crate::error::{CliError, CliResult};
use crate::eval::save_atomic;

pub const BEST_FILE: &str = "best.ckpt";
pub const FINAL_FILE: &str = "final.ckpt";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub best: PathBuf,
    pub last: PathBuf,
    pub history: PathBuf,
    pub epochs_completed: u64,
    pub early_stopped: bool,
    pub best_model: UNet<f32>,
    pub norm: NormStats,
    pub warnings: Vec<String>,
}

/// History rows of an earlier run up to and including `epoch`.
fn prior_history(path: &Path, epoch: u64) -> CliResult<Vec<String>> {
    if epoch == 0 {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| data_error(path, e))?;
    let rows: Vec<String> = text
        .lines()
        .skip(1)
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|e| e.parse::<u64>().ok())
                .is_some_and(|e| e <= epoch)
        })
        .map(str::to_string)
        .collect();
    if rows.len() as u64 != epoch {
        return Err(data_error(path, format!("expected {epoch} rows to resume from, found {}", rows.len())));
    }
    Ok(rows)
}

fn append_history(path: &Path, row: &str) -> CliResult<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| data_error(path, e))?;
    writeln!(f, "{row}").map_err(|e| data_error(path, e))
}

fn write_history(path: &Path, rows: &[String]) -> CliResult<()> {
    let mut text = format!("{HISTORY_HEADER}\n");
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| data_error(path, e))
}

/// Train architecture `arch` on `scenes`, writing `best.ckpt`, `final.ckpt`
/// and `history.csv` under `out_dir`. After every epoch `final.ckpt` is
/// rewritten and a history row appended, so an interrupted run resumes from
/// `final.ckpt`.
pub fn run_training(
    cfg: &RunConfig,
    arch: &str,
    scenes: &[LabelledScene],
    out_dir: &Path,
    resume: Option<&Path>,
) -> CliResult<TrainSummary> {
    let unet_cfg = cfg.model.unet_config(arch, channel_count(scenes)?)?;
    let is = unet_cfg.input_size;
    let (train_scenes, val_scenes) = train_val_scenes(scenes, cfg.data.val_fraction, cfg.train.seed)?;
    let norm = fit_norm(&train_scenes)?;
    let train = tiles(&train_scenes, &norm, is, cfg.stride_for(is), false)?;
    let val = tiles(&val_scenes, &norm, is, is, true)?;
    std::fs::create_dir_all(out_dir).map_err(|e| data_error(out_dir, e))?;
    let (best_path, last_path, history_path) =
        (out_dir.join(BEST_FILE), out_dir.join(FINAL_FILE), out_dir.join(HISTORY_FILE));

    let (mut trainer, rows) = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path).map_err(|e| data_error(path, e))?;
            if *ckpt.model.config() != unet_cfg {
                return Err(CliError::Config(format!(
                    "{} holds {} but the configuration builds {}",
                    path.display(),
                    ckpt.model.config().name(),
                    unet_cfg.name()
                )));
            }
            if ckpt.norm.as_ref() != Some(&norm) {
                return Err(CliError::Config(format!(
                    "{} was trained on different data statistics",
                    path.display()
                )));
            }
            let epoch = ckpt.progress.as_ref().map_or(0, |p| p.epoch);
            let rows = prior_history(&history_path, epoch)?;
            (Trainer::resume(ckpt, &cfg.train)?, rows)
        }
        None => (Trainer::new(UNet::build(&unet_cfg, cfg.train.seed)?, &cfg.train)?, Vec::new()),
    };

    let save_last = |t: &Trainer| {
        let mut ckpt = t.checkpoint();
        ckpt.norm = Some(norm.clone());
        save_atomic(&last_path, &ckpt)
    };
    write_history(&history_path, &rows)?;
    while !trainer.finished() {
        let record = trainer.run_epoch(&train, &val)?;
        save_last(&trainer)?;
        append_history(&history_path, &record.to_line())?;
    }
    save_last(&trainer)?;
    let epochs_completed = trainer.progress().epoch;
    let early_stopped = trainer.early_stopped();
    let warnings = trainer.history().warnings.clone();
    // at most two model copies alive at once
    let mut best = Checkpoint::from_model(trainer.best_model()?);
    drop(trainer);
    best.norm = Some(norm.clone());
    save_atomic(&best_path, &best)?;

    Ok(TrainSummary {
        best: best_path,
        last: last_path,
        history: history_path,
        epochs_completed,
        early_stopped,
        best_model: best.model,
        norm,
        warnings,
    })
}

/// Train the configured model on the configured manifest.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> CliResult<TrainSummary> {
    cfg.prepare_paths()?;
    let arch = cfg.model_name()?;
    let scenes = load_manifest_scenes(&cfg.data.manifest)?;
    run_training(cfg, arch, &scenes, &cfg.data.output_dir, resume)
}
