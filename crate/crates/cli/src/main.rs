use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use cropseg_cli::error::{EXIT_CONFIG, EXIT_OK};
use cropseg_cli::{
    benchmark_table, cmd_benchmark, cmd_eval, cmd_gradcheck, cmd_predict, cmd_synth, cmd_train, require_pass,
    CliError, CliResult, EvalArgs, PredictArgs, RunConfig, SynthArgs, REFERENCE_ARCHITECTURES,
};
use cropseg_core::data::Split;
use cropseg_core::metrics::{DEFAULT_DICE_EPSILON, DEFAULT_THRESHOLD, METRIC_HEADER};
use cropseg_core::parallel::set_reference_mode;
use cropseg_core::train::Scope;

#[derive(Parser)]
#[command(name = "cropseg", version, about = "U-Net crop segmentation of overhead imagery")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Single-threaded kernels for bitwise reproducibility.
    #[arg(long, global = true)]
    reference_mode: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic scenes, polygon labels, masks and a manifest.
    Synth {
        #[arg(long, default_value_t = 8)]
        n_scenes: usize,
        #[arg(long, default_value_t = 192)]
        size: usize,
        /// Share of the non-test scenes marked `val`.
        #[arg(long, default_value_t = 0.25)]
        val_fraction: f64,
        /// Share of all scenes marked `test`.
        #[arg(long, default_value_t = 0.0)]
        test_fraction: f64,
    },
    /// Train the configured model; writes best.ckpt, final.ckpt and history.csv.
    Train {
        /// Continue from a final.ckpt of an interrupted run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on one split of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the configured manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Segment a full scene; writes probability, mask and optional overlay images.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Polygon label file; enables the overlay image.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Tile stride; half the tile size by default.
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Compare every backward pass against central finite differences.
    Gradcheck {
        /// layer, block or model; all when omitted.
        #[arg(long)]
        scope: Vec<String>,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Train and score each named architecture; writes benchmark.csv.
    Benchmark {
        /// Architecture names such as Unet96X1024X4-SE.
        names: Vec<String>,
        /// Use the ten reference architectures.
        #[arg(long, conflicts_with = "names")]
        reference_table: bool,
    },
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs --config <path>".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.data.output_dir = out.clone();
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> CliResult<PathBuf> {
    cli.out
        .clone()
        .or_else(|| cfg.map(|c| c.data.output_dir.clone()))
        .ok_or_else(|| CliError::Config("this command needs --out <dir> or --config <path>".into()))
}

fn optional_config(cli: &Cli) -> CliResult<Option<RunConfig>> {
    cli.config.as_ref().map(|_| load_config(cli)).transpose()
}

fn run(cli: &Cli) -> CliResult<()> {
    if cli.reference_mode {
        set_reference_mode(true);
    }
    match &cli.command {
        Command::Synth {
            n_scenes,
            size,
            val_fraction,
            test_fraction,
        } => {
            let entries = cmd_synth(&SynthArgs {
                out_dir: out_dir(cli, None)?,
                n_scenes: *n_scenes,
                size: *size,
                seed: cli.seed.unwrap_or(0),
                val_fraction: *val_fraction,
                test_fraction: *test_fraction,
            })?;
            println!("wrote {} scenes", entries.len());
        }
        Command::Train { resume } => {
            let cfg = load_config(cli)?;
            set_reference_mode(cli.reference_mode || cfg.reference_mode);
            let s = cmd_train(&cfg, resume.as_deref())?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{} epochs{}; best {}, final {}, history {}",
                s.epochs_completed,
                if s.early_stopped { " (early stop)" } else { "" },
                s.best.display(),
                s.last.display(),
                s.history.display()
            );
        }
        Command::Eval {
            checkpoint,
            manifest,
            split,
        } => {
            let cfg = optional_config(cli)?;
            if let Some(c) = &cfg {
                set_reference_mode(cli.reference_mode || c.reference_mode);
            }
            let manifest = manifest
                .clone()
                .or_else(|| cfg.as_ref().map(|c| c.data.manifest.clone()))
                .ok_or_else(|| CliError::Config("eval needs --manifest or --config".into()))?;
            let (_, record) = cmd_eval(&EvalArgs {
                checkpoint: checkpoint.clone(),
                manifest,
                split: Split::from_str(split)?,
                out_dir: out_dir(cli, cfg.as_ref())?,
                expect_model: cfg.as_ref().and_then(|c| c.model.name.clone()),
                epsilon: cfg.as_ref().map_or(DEFAULT_DICE_EPSILON, |c| c.train.dice_epsilon),
                threshold: cfg.as_ref().map_or(DEFAULT_THRESHOLD, |c| c.train.threshold),
            })?;
            println!("{METRIC_HEADER}\n{record}");
        }
        Command::Predict {
            checkpoint,
            image,
            labels,
            stride,
            threshold,
        } => {
            let cfg = optional_config(cli)?;
            let p = cmd_predict(&PredictArgs {
                checkpoint: checkpoint.clone(),
                image: image.clone(),
                labels: labels.clone(),
                stride: *stride,
                threshold: *threshold,
                out_dir: out_dir(cli, cfg.as_ref())?,
            })?;
            for f in &p.files {
                println!("{}", f.display());
            }
        }
        Command::Gradcheck { scope, inject_fault } => {
            let scopes = scope
                .iter()
                .map(|s| Scope::from_str(s))
                .collect::<Result<Vec<_>, _>>()?;
            let report = cmd_gradcheck(&scopes, cli.seed.unwrap_or(0), inject_fault.as_deref(), cli.out.as_deref())?;
            print!("{}", report.to_table());
            require_pass(&report)?;
        }
        Command::Benchmark { names, reference_table } => {
            let cfg = load_config(cli)?;
            set_reference_mode(cli.reference_mode || cfg.reference_mode);
            let names: Vec<String> = if *reference_table {
                REFERENCE_ARCHITECTURES.iter().map(|s| s.to_string()).collect()
            } else {
                names.clone()
            };
            print!("{}", benchmark_table(&cmd_benchmark(&names, &cfg)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK } as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
