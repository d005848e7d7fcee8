//! Checkpoint file layout, all integers little-endian:
//!
//! ```text
//! "CSEGCKPT" | version u32
//! config     : u32 length + UTF-8 `key = value` block
//! tensors    : u32 count, then per tensor u32 name length + name + snapshot
//! optimizer  : u8 present [u8 kind | u64 step | u32 slots | snapshots]
//! progress   : u8 present [u64 epoch | u64 seed | u8 has_best | f64 best dice
//!                          | u64 best epoch | u64 stale epochs]
//! best       : u8 present [u32 count | snapshots]
//! normalize  : u8 present [u32 channels | f32 max, mean, std per channel]
//! ```
//!
//! Tensors follow the model's depth-first traversal order and use the tensor
//! snapshot encoding. The training RNG is a pure function of `(seed, epoch)`,
//! so those two values are its complete state.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{UNet, UNetConfig};
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::snapshot::{read_exact, read_snapshot, read_u32, write_snapshot, write_u32};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CSEGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Optimizer state slots in parameter order: Adam stores first moments then
/// second moments, SGD stores velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSnapshot {
    pub kind: OptimizerKind,
    pub step: u64,
    pub slots: Vec<Tensor<f32>>,
}

/// Where a training run stands after `epoch` completed epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainProgress {
    pub epoch: u64,
    pub seed: u64,
    pub best_val_dice: Option<f64>,
    pub best_epoch: u64,
    pub stale_epochs: u64,
}

/// A model plus everything needed to resume training or run inference.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: UNet<f32>,
    pub optimizer: Option<OptimizerSnapshot>,
    pub progress: Option<TrainProgress>,
    /// Best-on-validation tensors so far, in traversal order.
    pub best: Option<Vec<Tensor<f32>>>,
    pub norm: Option<NormStats>,
}

impl Checkpoint {
    pub fn from_model(model: UNet<f32>) -> Self {
        Checkpoint {
            model,
            optimizer: None,
            progress: None,
            best: None,
            norm: None,
        }
    }
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

fn read_flag<R: Read>(r: &mut R, what: &str) -> Result<bool> {
    match read_u8(r)? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(Error::Format(format!("bad {what} flag {v}"))),
    }
}

fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_string<R: Read>(r: &mut R, limit: usize) -> Result<String> {
    let n = read_u32(r)? as usize;
    if n > limit {
        return Err(Error::Format(format!("string length {n} exceeds {limit}")));
    }
    let mut b = vec![0u8; n];
    read_exact(r, &mut b)?;
    String::from_utf8(b).map_err(|_| Error::Format("string is not UTF-8".into()))
}

fn write_tensor_list<W: Write>(w: &mut W, tensors: &[Tensor<f32>]) -> Result<()> {
    write_u32(w, tensors.len() as u32)?;
    for t in tensors {
        write_snapshot(w, t)?;
    }
    Ok(())
}

fn read_tensor_list<R: Read>(r: &mut R) -> Result<Vec<Tensor<f32>>> {
    let n = read_u32(r)? as usize;
    (0..n).map(|_| read_snapshot(r)).collect()
}

pub fn write_checkpoint<W: Write>(w: &mut W, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(w, CHECKPOINT_VERSION)?;
    write_string(w, &ckpt.model.config().to_canonical_text())?;

    let mut named = Vec::new();
    ckpt.model.visit("", &mut |name, t, _| named.push((name.to_string(), t.clone())));
    write_u32(w, named.len() as u32)?;
    for (name, t) in &named {
        write_string(w, name)?;
        write_snapshot(w, t)?;
    }

    match &ckpt.optimizer {
        None => w.write_all(&[0])?,
        Some(opt) => {
            w.write_all(&[1, match opt.kind {
                OptimizerKind::Adam => 0,
                OptimizerKind::Sgd => 1,
            }])?;
            write_u64(w, opt.step)?;
            write_tensor_list(w, &opt.slots)?;
        }
    }

    match &ckpt.progress {
        None => w.write_all(&[0])?,
        Some(p) => {
            w.write_all(&[1])?;
            write_u64(w, p.epoch)?;
            write_u64(w, p.seed)?;
            w.write_all(&[p.best_val_dice.is_some() as u8])?;
            w.write_all(&p.best_val_dice.unwrap_or(0.0).to_le_bytes())?;
            write_u64(w, p.best_epoch)?;
            write_u64(w, p.stale_epochs)?;
        }
    }

    match &ckpt.best {
        None => w.write_all(&[0])?,
        Some(best) => {
            w.write_all(&[1])?;
            write_tensor_list(w, best)?;
        }
    }

    match &ckpt.norm {
        None => w.write_all(&[0])?,
        Some(n) => {
            w.write_all(&[1])?;
            write_u32(w, n.channels() as u32)?;
            for c in 0..n.channels() {
                for v in [n.max[c], n.mean[c], n.std[c]] {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    read_exact(r, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let config = UNetConfig::from_canonical_text(&read_string(r, 1 << 16)?)?;

    let n = read_u32(r)? as usize;
    let mut names = Vec::with_capacity(n.min(4096));
    let mut tensors = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        names.push(read_string(r, 1 << 12)?);
        tensors.push(read_snapshot(r)?);
    }
    let mut model = UNet::<f32>::build(&config, 0)?;
    let mut expected = Vec::new();
    model.visit("", &mut |name, _, _| expected.push(name.to_string()));
    if expected != names {
        return Err(Error::Format(
            "tensor names disagree with the stored configuration".into(),
        ));
    }
    model.load_tensors(tensors)?;

    let optimizer = if read_flag(r, "optimizer")? {
        let kind = match read_u8(r)? {
            0 => OptimizerKind::Adam,
            1 => OptimizerKind::Sgd,
            v => return Err(Error::Format(format!("unknown optimizer kind {v}"))),
        };
        let step = read_u64(r)?;
        let slots = read_tensor_list(r)?;
        Some(OptimizerSnapshot { kind, step, slots })
    } else {
        None
    };

    let progress = if read_flag(r, "progress")? {
        let epoch = read_u64(r)?;
        let seed = read_u64(r)?;
        let has_best = read_flag(r, "best dice")?;
        let mut b = [0u8; 8];
        read_exact(r, &mut b)?;
        let best = f64::from_le_bytes(b);
        Some(TrainProgress {
            epoch,
            seed,
            best_val_dice: has_best.then_some(best),
            best_epoch: read_u64(r)?,
            stale_epochs: read_u64(r)?,
        })
    } else {
        None
    };

    let best = if read_flag(r, "best")? {
        let best = read_tensor_list(r)?;
        // validate against the model layout without keeping the copy
        model.clone().load_tensors(best.clone())?;
        Some(best)
    } else {
        None
    };

    let norm = if read_flag(r, "normalize")? {
        let c = read_u32(r)? as usize;
        if c > 4096 {
            return Err(Error::Format(format!("implausible channel count {c}")));
        }
        let (mut max, mut mean, mut std) = (vec![], vec![], vec![]);
        for _ in 0..c {
            let mut vals = [0f32; 3];
            for v in &mut vals {
                let mut b = [0u8; 4];
                read_exact(r, &mut b)?;
                *v = f32::from_le_bytes(b);
            }
            max.push(vals[0]);
            mean.push(vals[1]);
            std.push(vals[2]);
        }
        Some(NormStats { max, mean, std })
    } else {
        None
    };

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }

    Ok(Checkpoint {
        model,
        optimizer,
        progress,
        best,
        norm,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::data(path, e.to_string()))?;
    read_checkpoint(&mut BufReader::new(file))
}
