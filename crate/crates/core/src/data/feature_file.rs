//! One binary file per video, little-endian throughout:
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `FAAB` |
//! | 2 | version |
//! | 4 × 3 | `S`, `N`, `d` |
//! | 4 | fps (`f32`) |
//! | 1 | label, 1 = accident |
//! | 4 | tau, `0xFFFFFFFF` for none |
//! | S | object count per frame |
//! | S·(N+1)·d·4 | per frame: full-frame feature, then `N` object rows |

use std::fs;
use std::path::Path;

use crate::error::{Error, FormatErrorKind, Result};
use crate::sample::{Label, VideoSample};

const MAGIC: &[u8; 4] = b"FAAB";
pub const FEATURE_VERSION: u16 = 1;
/// Bytes before the per-frame object counts.
pub const HEADER_LEN: usize = 27;
const NO_TAU: u32 = u32::MAX;

pub fn encode_feature_file(sample: &VideoSample) -> Result<Vec<u8>> {
    sample.validate()?;
    let (s, n, d) = (sample.frames, sample.n_objects, sample.dim);
    if n > u8::MAX as usize {
        return Err(Error::Contract(format!("N = {n} does not fit the u8 object counts")));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + s + s * (n + 1) * d * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    for v in [s, n, d] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&sample.fps.to_le_bytes());
    out.push(u8::from(sample.label.is_positive()));
    out.extend_from_slice(&sample.tau.map_or(NO_TAU, |t| t as u32).to_le_bytes());
    out.extend(sample.object_counts.iter().map(|&c| c as u8));
    for t in 0..s {
        let frame = &sample.frame_feats[t * d..(t + 1) * d];
        let objects = &sample.object_feats[t * n * d..(t + 1) * n * d];
        for v in frame.iter().chain(objects) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_feature_file(sample: &VideoSample, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_feature_file(sample)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<VideoSample> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_file(&bytes, path)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn decode_feature_file(bytes: &[u8], path: &Path) -> Result<VideoSample> {
    let fail = |kind, offset: usize| Error::Format {
        path: path.to_path_buf(),
        kind,
        offset: offset as u64,
    };
    let truncated = |expected: usize| {
        fail(
            FormatErrorKind::Truncated {
                expected: expected as u64,
                found: bytes.len() as u64,
            },
            bytes.len(),
        )
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(fail(FormatErrorKind::BadMagic, 0));
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEATURE_VERSION {
        return Err(fail(FormatErrorKind::UnsupportedVersion(version), 4));
    }
    let (s, n, d) = (u32_at(bytes, 6) as usize, u32_at(bytes, 10) as usize, u32_at(bytes, 14) as usize);
    if s == 0 || d == 0 {
        return Err(fail(FormatErrorKind::InvalidHeader(format!("S = {s}, d = {d}")), 6));
    }
    let fps = f32::from_le_bytes(bytes[18..22].try_into().unwrap());
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(fail(FormatErrorKind::InvalidHeader(format!("fps {fps}")), 18));
    }
    let label = match bytes[22] {
        0 => Label::Normal,
        1 => Label::Accident,
        other => return Err(fail(FormatErrorKind::InvalidHeader(format!("label byte {other}")), 22)),
    };
    let raw_tau = u32_at(bytes, 23);
    let tau = match (label, raw_tau) {
        (Label::Normal, NO_TAU) => None,
        (Label::Accident, t) if t != NO_TAU => {
            if t == 0 || t as usize > s {
                return Err(fail(FormatErrorKind::TauOutOfRange(t), 23));
            }
            Some(t as usize)
        }
        _ => return Err(fail(FormatErrorKind::LabelTauMismatch, 22)),
    };
    let payload_start = HEADER_LEN + s;
    let total = (s * (n + 1) * d)
        .checked_mul(4)
        .and_then(|p| p.checked_add(payload_start))
        .ok_or_else(|| fail(FormatErrorKind::InvalidHeader("dimensions overflow".into()), 6))?;
    if bytes.len() < payload_start {
        return Err(truncated(total));
    }
    let mut object_counts = Vec::with_capacity(s);
    for (i, &c) in bytes[HEADER_LEN..payload_start].iter().enumerate() {
        if c as usize > n {
            return Err(fail(FormatErrorKind::ObjectCountOverflow { count: c, max: n as u32 }, HEADER_LEN + i));
        }
        object_counts.push(c as usize);
    }
    if bytes.len() < total {
        return Err(truncated(total));
    }
    if bytes.len() > total {
        return Err(fail(FormatErrorKind::TrailingBytes, total));
    }
    let mut frame_feats = Vec::with_capacity(s * d);
    let mut object_feats = Vec::with_capacity(s * n * d);
    for (i, chunk) in bytes[payload_start..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(fail(FormatErrorKind::NonFinite, payload_start + 4 * i));
        }
        if (i / d) % (n + 1) == 0 {
            frame_feats.push(v);
        } else {
            object_feats.push(v);
        }
    }
    Ok(VideoSample {
        frames: s,
        n_objects: n,
        dim: d,
        object_feats,
        frame_feats,
        object_counts,
        label,
        tau,
        fps,
    })
}
