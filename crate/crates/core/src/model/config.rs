use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::DEFAULT_SE_RATIO;

/// Largest supported depth; keeps `2^N` far from overflow.
const MAX_DEPTH: usize = 16;

/// Architecture description. Names follow `Unet{IS}X{MF}X{N}` with an optional
/// `-SE` suffix, where IS is the square input size, MF the bottleneck width
/// and N the number of downsample/upsample stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UNetConfig {
    pub input_size: usize,
    pub max_filters: usize,
    pub depth: usize,
    pub use_se: bool,
    pub use_residual: bool,
    pub in_channels: usize,
    pub se_ratio: usize,
    pub batchnorm: bool,
}

impl UNetConfig {
    pub fn new(input_size: usize, max_filters: usize, depth: usize, use_se: bool) -> Result<Self> {
        let cfg = UNetConfig {
            input_size,
            max_filters,
            depth,
            use_se,
            use_residual: false,
            in_channels: 3,
            se_ratio: DEFAULT_SE_RATIO,
            batchnorm: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse an architecture name such as `Unet96X1024X4-SE`.
    pub fn parse(name: &str) -> Result<Self> {
        let fail = |reason: &str| Error::ConfigName {
            name: name.to_string(),
            reason: reason.to_string(),
        };
        let body = name
            .strip_prefix("Unet")
            .ok_or_else(|| fail("expected prefix `Unet`"))?;
        let (dims, use_se) = match body.split_once('-') {
            None => (body, false),
            Some((dims, "SE")) => (dims, true),
            Some((_, suffix)) => return Err(fail(&format!("unknown suffix `-{suffix}`"))),
        };
        let parts: Vec<&str> = dims.split('X').collect();
        let [is, mf, n] = parts[..] else {
            return Err(fail("expected `Unet{IS}X{MF}X{N}`"));
        };
        let number = |field: &str, s: &str| -> Result<usize> {
            let valid = !s.is_empty()
                && s.bytes().all(|b| b.is_ascii_digit())
                && !(s.len() > 1 && s.starts_with('0'));
            if !valid {
                return Err(fail(&format!("{field} `{s}` is not a positive integer")));
            }
            s.parse::<usize>()
                .map_err(|_| fail(&format!("{field} `{s}` out of range")))
        };
        let cfg = UNetConfig::new(number("IS", is)?, number("MF", mf)?, number("N", n)?, use_se)
            .map_err(|e| match e {
                Error::Config(reason) => fail(&reason),
                other => other,
            })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.depth < 1 || self.depth > MAX_DEPTH {
            return bad(format!("depth N = {} must be in 1..={MAX_DEPTH}", self.depth));
        }
        let scale = 1usize << self.depth;
        if self.input_size == 0 || self.input_size % scale != 0 {
            return bad(format!(
                "input size IS = {} is not divisible by 2^N = {scale}",
                self.input_size
            ));
        }
        if self.max_filters < scale || self.max_filters % scale != 0 {
            return bad(format!(
                "max filters MF = {} is not a positive multiple of 2^N = {scale}",
                self.max_filters
            ));
        }
        if self.in_channels == 0 {
            return bad("in_channels must be >= 1".into());
        }
        if self.se_ratio == 0 {
            return bad("se_ratio must be >= 1".into());
        }
        Ok(())
    }

    /// Canonical name; residual and normalization switches are not part of it.
    pub fn name(&self) -> String {
        format!(
            "Unet{}X{}X{}{}",
            self.input_size,
            self.max_filters,
            self.depth,
            if self.use_se { "-SE" } else { "" }
        )
    }

    /// Width of encoder stage 0, `MF / 2^N`.
    pub fn base_filters(&self) -> usize {
        self.max_filters >> self.depth
    }

    /// Encoder widths `F0 * 2^i` for `i in 0..N`.
    pub fn stage_widths(&self) -> Vec<usize> {
        (0..self.depth).map(|i| self.base_filters() << i).collect()
    }

    /// `key = value` lines stored inside checkpoints.
    pub fn to_canonical_text(&self) -> String {
        format!(
            "name = {}\ninput_size = {}\nmax_filters = {}\ndepth = {}\nuse_se = {}\n\
             use_residual = {}\nin_channels = {}\nse_ratio = {}\nbatchnorm = {}\n",
            self.name(),
            self.input_size,
            self.max_filters,
            self.depth,
            self.use_se,
            self.use_residual,
            self.in_channels,
            self.se_ratio,
            self.batchnorm
        )
    }

    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("config line `{line}` has no `=`")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .ok_or_else(|| Error::Format(format!("config block lacks `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("config `{k}` is not an integer")))
        };
        let flag = |k: &str| -> Result<bool> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("config `{k}` is not a boolean")))
        };
        let cfg = UNetConfig {
            input_size: num("input_size")?,
            max_filters: num("max_filters")?,
            depth: num("depth")?,
            use_se: flag("use_se")?,
            use_residual: flag("use_residual")?,
            in_channels: num("in_channels")?,
            se_ratio: num("se_ratio")?,
            batchnorm: flag("batchnorm")?,
        };
        cfg.validate()?;
        if get("name")? != &cfg.name() {
            return Err(Error::Format("config name disagrees with its fields".into()));
        }
        Ok(cfg)
    }
}

impl FromStr for UNetConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UNetConfig::parse(s)
    }
}

impl fmt::Display for UNetConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}
