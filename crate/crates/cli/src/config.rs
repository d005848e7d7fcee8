//! The TOML run document shared by `train`, `eval` and `benchmark`.

use std::path::{Path, PathBuf};

use cropseg_core::data::Split;
use cropseg_core::nn::DEFAULT_SE_RATIO;
use cropseg_core::train::TrainConfig;
use cropseg_core::{Error, UNetConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Architecture switches. `name` follows `Unet{IS}X{MF}X{N}[-SE]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub name: Option<String>,
    pub residual: bool,
    pub batchnorm: bool,
    pub se_ratio: usize,
    /// Input channels; inferred from the scenes when absent.
    pub in_channels: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            name: None,
            residual: false,
            batchnorm: true,
            se_ratio: DEFAULT_SE_RATIO,
            in_channels: None,
        }
    }
}

impl ModelSection {
    /// Build the architecture for `name` with these switches and the data's
    /// channel count.
    pub fn unet_config(&self, name: &str, data_channels: usize) -> CliResult<UNetConfig> {
        if let Some(c) = self.in_channels {
            if c != data_channels {
                return Err(CliError::Config(format!(
                    "model.in_channels = {c} but the scenes have {data_channels} channels"
                )));
            }
        }
        let mut cfg = UNetConfig::parse(name)?;
        cfg.use_residual = self.residual;
        cfg.batchnorm = self.batchnorm;
        cfg.se_ratio = self.se_ratio;
        cfg.in_channels = data_channels;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Dataset location and tiling. Relative paths are resolved against the
/// directory holding the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    /// Training tile stride; half the tile size when absent.
    #[serde(default)]
    pub stride: Option<usize>,
    /// Share of training scenes held out for validation when the manifest
    /// lists no `val` scenes. 0 trains without validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Split scored by `benchmark`; `test` if the manifest has one, else `val`.
    #[serde(default)]
    pub eval_split: Option<Split>,
}

fn default_val_fraction() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainConfig,
    /// Single-threaded kernels for bitwise reproducibility.
    #[serde(default)]
    pub reference_mode: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse `path` and resolve its relative paths against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.data.manifest = base.join(&cfg.data.manifest);
        cfg.data.output_dir = base.join(&cfg.data.output_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        if let Some(name) = &self.model.name {
            UNetConfig::parse(name)?;
        }
        if self.model.se_ratio == 0 {
            return Err(CliError::Config("model.se_ratio must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            return Err(CliError::Config(format!(
                "data.val_fraction {} must be in [0, 1)",
                self.data.val_fraction
            )));
        }
        if self.data.stride == Some(0) {
            return Err(CliError::Config("data.stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Fail unless the manifest exists; create the output directory.
    pub fn prepare_paths(&self) -> CliResult<()> {
        if !self.data.manifest.is_file() {
            return Err(data_error(&self.data.manifest, "manifest not found"));
        }
        std::fs::create_dir_all(&self.data.output_dir).map_err(|e| data_error(&self.data.output_dir, e))
    }

    pub fn model_name(&self) -> CliResult<&str> {
        self.model
            .name
            .as_deref()
            .ok_or_else(|| CliError::Config("missing key `model.name`".into()))
    }

    /// Training stride for tile size `input_size`.
    pub fn stride_for(&self, input_size: usize) -> usize {
        self.data.stride.unwrap_or((input_size / 2).max(1))
    }
}

pub(crate) fn data_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Core(Error::Data {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
