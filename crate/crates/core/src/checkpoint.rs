//! Model checkpoint files.
//!
//! Layout (little-endian): magic `FACK`, version `u16`, `d`, `N`, `hidden`
//! as `u32`, variant code `u8`, parameter count `u32`, then for each
//! parameter its name (`u16` length + UTF-8), rank `u8` and dims `u32`,
//! followed by every parameter's values as `f32` in the same order.

use std::fs;
use std::path::Path;

use crate::error::{Error, FormatErrorKind, Result};
use crate::fa_block::FaVariant;
use crate::model::{Model, ModelConfig, ModelParams};
use crate::tensor::{Real, Tensor};

const MAGIC: &[u8; 4] = b"FACK";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn encode<T: Real>(model: &Model<T>) -> Vec<u8> {
    let cfg = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [cfg.d, cfg.n_objects, cfg.hidden] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(cfg.variant.code());
    let mut entries = Vec::new();
    model.params.visit(&mut |name, t| entries.push((name, t)));
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in &entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &dim in t.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
    }
    for (_, t) in &entries {
        for v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn save<T: Real>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, kind: FormatErrorKind) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            kind,
            offset: self.pos as u64,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(FormatErrorKind::Truncated {
                expected: (self.pos + n) as u64,
                found: self.bytes.len() as u64,
            }));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parsed file contents before they are matched against a model layout.
#[derive(Debug, Clone)]
pub struct RawCheckpoint {
    pub config: ModelConfig,
    pub entries: Vec<(String, Tensor<f32>)>,
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<RawCheckpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        r.pos = 0;
        return Err(r.fail(FormatErrorKind::BadMagic));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        r.pos -= 2;
        return Err(r.fail(FormatErrorKind::UnsupportedVersion(version)));
    }
    let d = r.u32()? as usize;
    let n = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let code = r.u8()?;
    let variant = FaVariant::from_code(code).ok_or_else(|| {
        r.pos -= 1;
        r.fail(FormatErrorKind::InvalidHeader(format!("unknown variant code {code}")))
    })?;
    let count = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.fail(FormatErrorKind::InvalidHeader("parameter name is not UTF-8".into())))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        manifest.push((name, shape));
    }
    let mut entries = Vec::with_capacity(manifest.len());
    for (name, shape) in manifest {
        let len: usize = shape.iter().product();
        let raw = r.take(len * 4)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(r.fail(FormatErrorKind::TrailingBytes));
    }
    Ok(RawCheckpoint {
        config: ModelConfig {
            d,
            n_objects: n,
            hidden,
            variant,
        },
        entries,
    })
}

impl RawCheckpoint {
    /// Fills a model laid out for `config`, naming the first layer whose
    /// name or shape disagrees.
    pub fn into_model<T: Real>(self, config: &ModelConfig) -> Result<Model<T>> {
        let mut params = ModelParams::<Tensor<T>>::zeros(config);
        let mut entries = self.entries.into_iter();
        let mut failure = None;
        params.visit_mut(&mut |name, slot| {
            if failure.is_some() {
                return;
            }
            match entries.next() {
                None => {
                    failure = Some(Error::Checkpoint {
                        layer: name.into(),
                        detail: "missing from checkpoint".into(),
                    })
                }
                Some((found, _)) if found != name => {
                    failure = Some(Error::Checkpoint {
                        layer: name.into(),
                        detail: format!("checkpoint has `{found}` in its place"),
                    })
                }
                Some((_, t)) if t.shape() != slot.shape() => {
                    failure = Some(Error::Checkpoint {
                        layer: name.into(),
                        detail: format!("expected shape {:?}, found {:?}", slot.shape(), t.shape()),
                    })
                }
                Some((_, t)) => *slot = t.cast(),
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if let Some((extra, _)) = entries.next() {
            return Err(Error::Checkpoint {
                layer: extra,
                detail: format!("not part of a {} model", config.variant),
            });
        }
        Ok(Model {
            config: *config,
            params,
        })
    }
}

/// Loads a checkpoint using the configuration stored in it.
pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = decode(&bytes, path)?;
    let config = raw.config;
    raw.into_model(&config)
}

/// Loads a checkpoint into a model of the given configuration.
pub fn load_for<T: Real>(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Model<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)?.into_model(config)
}
