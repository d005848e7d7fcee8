//! `benchmark`: train and score a list of architectures on the same data.

use std::path::PathBuf;
use std::time::Instant;

use cropseg_core::data::io::load_manifest_scenes;
use cropseg_core::data::Split;
use cropseg_core::parallel::reference_mode;
use cropseg_core::UNetConfig;

use crate::config::{data_error, RunConfig};
use crate::dataset::scenes_of;
use crate::error::{CliError, CliResult};
use crate::eval::evaluate_scenes;
use crate::train::run_training;

pub const BENCHMARK_HEADER: &str = "ARCHITECTURE,IS,N,MF,DICE,seed,seconds";
pub const BENCHMARK_FILE: &str = "benchmark.csv";

/// The architecture grid of the original results table, in its row order.
pub const REFERENCE_ARCHITECTURES: [&str; 10] = [
    "Unet96X2048X4",
    "Unet96X1024X4",
    "Unet96X512X4",
    "Unet96X256X4",
    "Unet192X1024X5",
    "Unet96X1024X5",
    "Unet48X1024X4",
    "Unet96X1024X4-SE",
    "Unet96X512X4-SE",
    "Unet96X256X4-SE",
];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub config: UNetConfig,
    /// Soft Dice of the best checkpoint on the evaluation split.
    pub dice: f64,
    pub seed: u64,
    pub seconds: f64,
}

impl BenchmarkRow {
    pub fn to_line(&self) -> String {
        let c = &self.config;
        format!(
            "{},{},{},{},{:.6},{},{:.3}",
            c.name(),
            c.input_size,
            c.depth,
            c.max_filters,
            self.dice,
            self.seed,
            self.seconds
        )
    }
}

pub fn benchmark_table(rows: &[BenchmarkRow]) -> String {
    let mut s = format!("{BENCHMARK_HEADER}\n");
    for r in rows {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

/// Per-architecture output directory, holding its checkpoints and history.
pub fn run_dir(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.data.output_dir.join("benchmark").join(name)
}

/// Parse every name, then train each architecture from scratch with the
/// configured seed and score its best checkpoint. Writes `benchmark.csv`.
pub fn cmd_benchmark(names: &[String], cfg: &RunConfig) -> CliResult<Vec<BenchmarkRow>> {
    for name in names {
        UNetConfig::parse(name)?;
    }
    cfg.prepare_paths()?;
    let mut rows = Vec::with_capacity(names.len());
    if !names.is_empty() {
        let scenes = load_manifest_scenes(&cfg.data.manifest)?;
        let split = cfg.data.eval_split.unwrap_or_else(|| {
            if scenes.iter().any(|s| s.split == Split::Test) {
                Split::Test
            } else {
                Split::Val
            }
        });
        let eval_scenes = scenes_of(&scenes, split);
        if eval_scenes.is_empty() {
            return Err(CliError::Config(format!(
                "{} has no {split:?} scenes to score on",
                cfg.data.manifest.display()
            )));
        }
        for name in names {
            let start = Instant::now();
            let run = run_training(cfg, name, &scenes, &run_dir(cfg, name), None)?;
            let report = evaluate_scenes(
                &run.best_model,
                &run.norm,
                &eval_scenes,
                cfg.train.dice_epsilon,
                cfg.train.threshold,
            )?;
            rows.push(BenchmarkRow {
                config: run.best_model.config().clone(),
                dice: report.soft_dice,
                seed: cfg.train.seed,
                seconds: if reference_mode() { 0.0 } else { start.elapsed().as_secs_f64() },
            });
        }
    }
    let path = cfg.data.output_dir.join(BENCHMARK_FILE);
    std::fs::write(&path, benchmark_table(&rows)).map_err(|e| data_error(&path, e))?;
    Ok(rows)
}
