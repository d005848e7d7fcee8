//! Architecture names, the U-Net graph and checkpoint files.

mod checkpoint;
mod config;
mod unet;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    OptimizerKind, OptimizerSnapshot, TrainProgress, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::UNetConfig;
pub use unet::{DecoderStage, EncoderStage, UNet};
