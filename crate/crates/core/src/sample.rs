use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Default frame rate of dashcam footage.
pub const DEFAULT_FPS: f32 = 20.0;

/// Video-level class. Probability vectors are ordered `[accident, normal]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Accident,
    Normal,
}

impl Label {
    /// Column of this class in a `[accident, normal]` probability row.
    pub fn index(self) -> usize {
        match self {
            Self::Accident => ACCIDENT,
            Self::Normal => 1,
        }
    }

    pub fn one_hot(self) -> [f32; 2] {
        match self {
            Self::Accident => [1.0, 0.0],
            Self::Normal => [0.0, 1.0],
        }
    }

    pub fn is_positive(self) -> bool {
        self == Self::Accident
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Accident => "accident",
            Self::Normal => "normal",
        })
    }
}

/// Column of the accident probability.
pub const ACCIDENT: usize = 0;

/// Per-frame features of one video.
///
/// `object_feats` is `frames × n_objects × dim` with rows beyond a frame's
/// object count zero-padded; `frame_feats` is `frames × dim`. Frame indices
/// in the public API (and `tau`) are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub frames: usize,
    pub n_objects: usize,
    pub dim: usize,
    pub object_feats: Vec<f32>,
    pub frame_feats: Vec<f32>,
    pub object_counts: Vec<usize>,
    pub label: Label,
    /// first accident frame, `None` for normal videos
    pub tau: Option<usize>,
    pub fps: f32,
}

impl VideoSample {
    /// Full contract check: shapes, label/tau agreement, finite values.
    pub fn validate(&self) -> Result<()> {
        self.check_shapes()?;
        check_label_tau(self.label, self.tau, self.frames)?;
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Contract(format!("fps must be positive, got {}", self.fps)));
        }
        if !self.object_feats.iter().chain(&self.frame_feats).all(|x| x.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        Ok(())
    }

    /// Array lengths agree with `frames`, `n_objects` and `dim`.
    pub fn check_shapes(&self) -> Result<()> {
        let (s, n, d) = (self.frames, self.n_objects, self.dim);
        if s == 0 || d == 0 {
            return Err(Error::Contract(format!("empty video: S = {s}, d = {d}")));
        }
        if self.object_feats.len() != s * n * d {
            return Err(Error::ShapeData {
                shape: vec![s, n, d],
                len: self.object_feats.len(),
            });
        }
        if self.frame_feats.len() != s * d {
            return Err(Error::ShapeData {
                shape: vec![s, d],
                len: self.frame_feats.len(),
            });
        }
        if self.object_counts.len() != s {
            return Err(Error::Contract(format!(
                "{} object counts for {s} frames",
                self.object_counts.len()
            )));
        }
        if let Some(&c) = self.object_counts.iter().find(|&&c| c > n) {
            return Err(Error::Contract(format!("object count {c} exceeds N = {n}")));
        }
        Ok(())
    }

    /// Valid object rows of frame `t` (1-based), `[count × d]`.
    pub fn objects<T: Real>(&self, t: usize) -> Tensor<T> {
        let (n, d) = (self.n_objects, self.dim);
        let count = self.object_counts[t - 1];
        let start = (t - 1) * n * d;
        let data = self.object_feats[start..start + count * d]
            .iter()
            .map(|&x| T::of(f64::from(x)))
            .collect();
        Tensor::new(vec![count, d], data).expect("object slice")
    }

    /// Full-frame feature of frame `t` (1-based), `[d]`.
    pub fn frame<T: Real>(&self, t: usize) -> Tensor<T> {
        let d = self.dim;
        let data = self.frame_feats[(t - 1) * d..t * d].iter().map(|&x| T::of(f64::from(x))).collect();
        Tensor::new(vec![d], data).expect("frame slice")
    }

    /// The first `k` frames as a video of its own.
    pub fn prefix(&self, k: usize) -> Self {
        let k = k.min(self.frames);
        let (n, d) = (self.n_objects, self.dim);
        Self {
            frames: k,
            object_feats: self.object_feats[..k * n * d].to_vec(),
            frame_feats: self.frame_feats[..k * d].to_vec(),
            object_counts: self.object_counts[..k].to_vec(),
            ..self.clone()
        }
    }
}

pub(crate) fn check_label_tau(label: Label, tau: Option<usize>, frames: usize) -> Result<()> {
    match (label, tau) {
        (Label::Accident, Some(t)) if (1..=frames).contains(&t) => Ok(()),
        (Label::Accident, Some(t)) => Err(Error::Contract(format!("tau {t} outside [1, {frames}]"))),
        (Label::Accident, None) => Err(Error::Contract("accident video without a finite tau".into())),
        (Label::Normal, Some(t)) => Err(Error::Contract(format!("normal video with finite tau {t}"))),
        (Label::Normal, None) => Ok(()),
    }
}
