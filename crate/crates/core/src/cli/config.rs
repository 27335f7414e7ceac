//! Flat `key = value` run settings shared by the config file and the flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::optimizer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "32" => Ok(Self::F32),
            "f64" | "64" => Ok(Self::F64),
            other => Err(Error::Config(format!("unknown precision `{other}` (f32 or f64)"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        })
    }
}

/// Everything `train` needs beyond the data itself. `d` and `n_objects` in
/// `train` are filled from the dataset; `hidden` defaults to `2d`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
    pub hidden: Option<usize>,
    pub precision: Precision,
    /// write an extra checkpoint every k epochs, never when 0
    pub checkpoint_every: usize,
}

pub const KEYS: [&str; 17] = [
    "data",
    "out",
    "epochs",
    "batch_size",
    "seed",
    "variant",
    "dropout",
    "hidden",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "clip",
    "loss_exponent",
    "loss_unit",
    "precision",
    "checkpoint_every",
];

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

impl RunConfig {
    /// Sets one key; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "variant" => t.variant = parse(key, value)?,
            "dropout" => t.dropout = parse(key, value)?,
            "hidden" => self.hidden = Some(parse(key, value)?),
            "lr" => t.adam.lr = parse(key, value)?,
            "beta1" => t.adam.beta1 = parse(key, value)?,
            "beta2" => t.adam.beta2 = parse(key, value)?,
            "eps" => t.adam.eps = parse(key, value)?,
            "clip" => {
                t.clip = match value {
                    "none" | "off" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "loss_exponent" => t.loss.exponent = parse(key, value)?,
            "loss_unit" => t.loss.unit = parse(key, value)?,
            "precision" => self.precision = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown key `{other}` (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies a config file's lines on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{origin}:{}: {}", i + 1, strip(e))))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Effective settings in the same format the file is read in.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut lines = Vec::new();
        if let Some(p) = &self.data {
            lines.push(format!("data = {}", p.display()));
        }
        if let Some(p) = &self.out {
            lines.push(format!("out = {}", p.display()));
        }
        lines.extend([
            format!("epochs = {}", t.epochs),
            format!("batch_size = {}", t.batch_size),
            format!("seed = {}", t.seed),
            format!("variant = {}", t.variant),
            format!("dropout = {}", t.dropout),
            format!("hidden = {}", self.hidden.unwrap_or(t.hidden)),
            format!("lr = {}", t.adam.lr),
            format!("beta1 = {}", t.adam.beta1),
            format!("beta2 = {}", t.adam.beta2),
            format!("eps = {}", t.adam.eps),
            format!("clip = {}", t.clip.map_or("none".to_string(), |c| c.to_string())),
            format!("loss_exponent = {}", t.loss.exponent),
            format!("loss_unit = {}", t.loss.unit),
            format!("precision = {}", self.precision),
            format!("checkpoint_every = {}", self.checkpoint_every),
        ]);
        lines.join("\n") + "\n"
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
