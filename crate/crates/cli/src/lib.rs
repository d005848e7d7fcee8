//! Commands of the `cropseg` binary as library functions: synthesize data,
//! train, evaluate, predict full scenes, check gradients and benchmark
//! architectures.

pub mod benchmark;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod predict;
pub mod synth;
pub mod train;

pub use benchmark::{benchmark_table, cmd_benchmark, BenchmarkRow, BENCHMARK_HEADER, REFERENCE_ARCHITECTURES};
pub use config::{DataSection, ModelSection, RunConfig};
pub use error::{CliError, CliResult};
pub use eval::{cmd_eval, EvalArgs};
pub use gradcheck::{cmd_gradcheck, require_pass};
pub use predict::{cmd_predict, predict_scene, PredictArgs, Prediction};
pub use synth::{cmd_synth, SynthArgs};
pub use train::{cmd_train, run_training, TrainSummary};
