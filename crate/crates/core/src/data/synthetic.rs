//! Synthetic feature sequences with a planted collision pattern.
//!
//! Every object track sits near one of a few fixed cluster centres and
//! jitters from frame to frame. In accident videos, tracks 0 and 1 also carry
//! a component along a shared unit "collision signature" whose amplitude
//! ramps up until the accident frame and stays high afterwards. Cluster
//! centres and per-frame noise are kept orthogonal to the signature, so the
//! signature projection of a colliding track changes only through the ramp.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::sample::{Label, VideoSample, DEFAULT_FPS};

const STRUCTURE_SEED: u64 = 0x5EED_FAAB;
const CLUSTERS: usize = 5;
const CENTRE_STD: f64 = 1.0;
const TRACK_STD: f64 = 0.3;
const FRAME_NOISE_STD: f64 = 0.5;
/// Signature amplitude of a colliding track at full difficulty.
const SIGNAL: f64 = 10.0;
/// Fraction of the signal that shows in the full-frame feature.
const FRAME_SHARE: f64 = 0.25;
const DROP_PROB: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub count_pos: usize,
    pub count_neg: usize,
    pub frames: usize,
    pub n_objects: usize,
    pub dim: usize,
    pub fps: f32,
    pub tau: usize,
    pub seed: u64,
    /// signal strength in [0, 1]; 0 makes the classes indistinguishable
    pub difficulty: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            count_pos: 20,
            count_neg: 20,
            frames: 100,
            n_objects: 9,
            dim: 256,
            fps: DEFAULT_FPS,
            tau: 90,
            seed: 0,
            difficulty: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count_pos + self.count_neg == 0 {
            return Err(Error::Parameter("no videos requested".into()));
        }
        if self.frames == 0 || self.dim == 0 || self.n_objects < 2 || self.n_objects > u8::MAX as usize {
            return Err(Error::Parameter(format!(
                "need S >= 1, d >= 1 and 2 <= N <= 255 (got S = {}, d = {}, N = {})",
                self.frames, self.dim, self.n_objects
            )));
        }
        if !(1..=self.frames).contains(&self.tau) {
            return Err(Error::Parameter(format!("tau {} outside [1, {}]", self.tau, self.frames)));
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(Error::Parameter(format!("difficulty {} outside [0, 1]", self.difficulty)));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Parameter(format!("fps {} must be positive", self.fps)));
        }
        Ok(())
    }

    /// Signature amplitude multiplier of a colliding track at frame `t`.
    pub fn ramp(&self, t: usize) -> f64 {
        if t > self.tau {
            1.5
        } else if self.tau == 1 {
            1.0
        } else {
            0.6 + 0.4 * (t - 1) as f64 / (self.tau - 1) as f64
        }
    }
}

struct Structure {
    signature: Vec<f64>,
    centres: Vec<Vec<f64>>,
}

fn reject(v: &mut [f64], s: &[f64]) {
    let dot: f64 = v.iter().zip(s).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(s).for_each(|(a, b)| *a -= dot * b);
}

fn gaussian<R: Rng>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("valid std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

impl Structure {
    fn new(d: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(STRUCTURE_SEED ^ d as u64);
        let signature = loop {
            let v = gaussian(&mut rng, d, 1.0);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                break v.into_iter().map(|x| x / norm).collect::<Vec<_>>();
            }
        };
        let centres = (0..CLUSTERS)
            .map(|_| {
                let mut c = gaussian(&mut rng, d, CENTRE_STD);
                reject(&mut c, &signature);
                c
            })
            .collect();
        Self { signature, centres }
    }

    fn orthogonal_noise<R: Rng>(&self, rng: &mut R, std: f64) -> Vec<f64> {
        let mut v = gaussian(rng, self.signature.len(), std);
        reject(&mut v, &self.signature);
        v
    }
}

/// Unit collision direction shared by every dataset of dimension `d`.
pub fn collision_signature(d: usize) -> Vec<f64> {
    Structure::new(d).signature
}

/// Builds `count_pos` accident and `count_neg` normal videos in a seeded
/// random order.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<VideoSample>> {
    cfg.validate()?;
    let structure = Structure::new(cfg.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels: Vec<Label> = std::iter::repeat_n(Label::Accident, cfg.count_pos)
        .chain(std::iter::repeat_n(Label::Normal, cfg.count_neg))
        .collect();
    labels.shuffle(&mut rng);
    Ok(labels.into_iter().map(|l| video(cfg, &structure, l, &mut rng)).collect())
}

fn video<R: Rng>(cfg: &SyntheticConfig, st: &Structure, label: Label, rng: &mut R) -> VideoSample {
    let (s, n, d) = (cfg.frames, cfg.n_objects, cfg.dim);
    let sig = &st.signature;
    let base_count = rng.random_range(n.saturating_sub(3).max(2)..=n);
    let scene = {
        let mut v = st.centres[rng.random_range(0..CLUSTERS)].clone();
        v.iter_mut().zip(st.orthogonal_noise(rng, TRACK_STD)).for_each(|(a, b)| *a += b);
        v
    };
    let tracks: Vec<(Vec<f64>, f64)> = (0..n)
        .map(|_| {
            let mut v = st.centres[rng.random_range(0..CLUSTERS)].clone();
            v.iter_mut().zip(st.orthogonal_noise(rng, TRACK_STD)).for_each(|(a, b)| *a += b);
            let along = Normal::new(0.0, TRACK_STD).unwrap().sample(rng);
            (v, along)
        })
        .collect();

    let mut object_feats = vec![0f32; s * n * d];
    let mut frame_feats = Vec::with_capacity(s * d);
    let mut object_counts = Vec::with_capacity(s);
    let strength = if label.is_positive() { cfg.difficulty * SIGNAL } else { 0.0 };
    for t in 1..=s {
        let amp = strength * cfg.ramp(t);
        let count = if rng.random_bool(DROP_PROB) { (base_count - 1).max(2) } else { base_count };
        object_counts.push(count);
        let noise = st.orthogonal_noise(rng, FRAME_NOISE_STD);
        frame_feats.extend((0..d).map(|k| (scene[k] + noise[k] + FRAME_SHARE * amp * sig[k]) as f32));
        for (j, (centre, along)) in tracks.iter().enumerate() {
            let noise = st.orthogonal_noise(rng, FRAME_NOISE_STD);
            if j >= count {
                continue;
            }
            let a = along + if j < 2 { amp } else { 0.0 };
            let row = &mut object_feats[((t - 1) * n + j) * d..((t - 1) * n + j + 1) * d];
            for k in 0..d {
                row[k] = (centre[k] + noise[k] + a * sig[k]) as f32;
            }
        }
    }
    VideoSample {
        frames: s,
        n_objects: n,
        dim: d,
        object_feats,
        frame_feats,
        object_counts,
        label,
        tau: label.is_positive().then_some(cfg.tau),
        fps: cfg.fps,
    }
}
