//! Frame-level precision/recall sweep, average precision and
//! time-to-accident.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sample::Label;

/// Threshold placed above every probability so the sweep starts at zero
/// recall.
pub const TOP_SENTINEL: f64 = 1.0 + 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct VideoScore {
    /// accident probability per frame
    pub probs: Vec<f64>,
    pub label: Label,
    pub tau: Option<usize>,
    pub fps: f64,
}

impl VideoScore {
    pub fn new(probs: Vec<f64>, label: Label, tau: Option<usize>, fps: f64) -> Self {
        Self { probs, label, tau, fps }
    }

    /// First 1-based frame whose probability reaches `beta`.
    pub fn first_crossing(&self, beta: f64) -> Option<usize> {
        self.probs.iter().position(|&p| p >= beta).map(|i| i + 1)
    }

    /// Seconds between the first crossing and the accident, clamped at 0.
    /// Zero when the video never crosses or is not an accident video.
    pub fn tta(&self, beta: f64) -> f64 {
        match (self.tau, self.first_crossing(beta)) {
            (Some(tau), Some(t)) if self.label.is_positive() => tau.saturating_sub(t) as f64 / self.fps,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// Per-frame counts over every frame of every video; a frame is flagged when
/// its probability is at least `beta`.
pub fn confusion_at(scores: &[VideoScore], beta: f64) -> Confusion {
    let mut c = Confusion::default();
    for s in scores {
        for &p in &s.probs {
            match (s.label.is_positive(), p >= beta) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    c
}

/// `(precision, recall)`, with precision 1 when nothing is flagged and
/// recall 0 when there are no positives.
pub fn precision_recall(c: Confusion) -> (f64, f64) {
    let p = if c.tp + c.fp == 0 {
        1.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    };
    let r = if c.tp + c.fn_ == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    };
    (p, r)
}

/// Mean TTA over the positive videos at one threshold.
pub fn tta_at(scores: &[VideoScore], beta: f64) -> f64 {
    let positives: Vec<&VideoScore> = scores.iter().filter(|s| s.label.is_positive()).collect();
    if positives.is_empty() {
        return 0.0;
    }
    positives.iter().map(|s| s.tta(beta)).sum::<f64>() / positives.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApMode {
    /// precision interpolated as the best precision at any higher recall
    #[default]
    Interpolated,
    /// trapezoids between consecutive raw points
    Trapezoid,
}

impl std::str::FromStr for ApMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interpolated" => Ok(Self::Interpolated),
            "trapezoid" => Ok(Self::Trapezoid),
            other => Err(Error::Parameter(format!("unknown AP mode `{other}` (interpolated or trapezoid)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub mean_tta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// thresholds strictly decreasing
    pub points: Vec<PrPoint>,
    pub map: f64,
    pub atta: f64,
}

/// Sweep thresholds: the top sentinel, each distinct probability in
/// descending order, then 0.
pub fn sweep_thresholds(scores: &[VideoScore]) -> Vec<f64> {
    let mut probs: Vec<f64> = scores.iter().flat_map(|s| s.probs.iter().copied()).collect();
    probs.sort_by(|a, b| b.total_cmp(a));
    probs.dedup();
    let mut out = Vec::with_capacity(probs.len() + 2);
    out.push(TOP_SENTINEL);
    out.extend(probs.into_iter().filter(|&p| p < TOP_SENTINEL && p > 0.0));
    out.push(0.0);
    out
}

fn check_positives(scores: &[VideoScore]) -> Result<()> {
    if scores.iter().any(|s| s.label.is_positive() && !s.probs.is_empty()) {
        Ok(())
    } else {
        Err(Error::UndefinedMetric("no positive frames to score"))
    }
}

/// Counts of flagged positive and negative frames for many thresholds.
struct Sweep {
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl Sweep {
    fn new(scores: &[VideoScore]) -> Self {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for s in scores {
            if s.label.is_positive() {
                pos.extend_from_slice(&s.probs);
            } else {
                neg.extend_from_slice(&s.probs);
            }
        }
        pos.sort_by(f64::total_cmp);
        neg.sort_by(f64::total_cmp);
        Self { pos, neg }
    }

    fn at(&self, beta: f64) -> Confusion {
        let tp = self.pos.len() - self.pos.partition_point(|&p| p < beta);
        let fp = self.neg.len() - self.neg.partition_point(|&p| p < beta);
        Confusion {
            tp,
            fp,
            tn: self.neg.len() - fp,
            fn_: self.pos.len() - tp,
        }
    }
}

/// Area under a PR point list ordered by decreasing threshold.
pub fn area(points: &[(f64, f64)], mode: ApMode) -> f64 {
    let mut ap = 0.0;
    match mode {
        ApMode::Interpolated => {
            let mut best = vec![0.0; points.len()];
            let mut running = f64::NEG_INFINITY;
            for i in (0..points.len()).rev() {
                running = running.max(points[i].0);
                best[i] = running;
            }
            let mut prev_r = 0.0;
            for (i, &(_, r)) in points.iter().enumerate() {
                if r > prev_r {
                    ap += best[i] * (r - prev_r);
                    prev_r = r;
                }
            }
        }
        ApMode::Trapezoid => {
            for w in points.windows(2) {
                ap += (w[1].1 - w[0].1) * (w[0].0 + w[1].0) / 2.0;
            }
        }
    }
    ap.clamp(0.0, 1.0)
}

pub fn pr_curve(scores: &[VideoScore], mode: ApMode) -> Result<PrCurve> {
    check_positives(scores)?;
    let sweep = Sweep::new(scores);
    let positives: Vec<(&VideoScore, Vec<f64>)> = scores
        .iter()
        .filter(|s| s.label.is_positive())
        .map(|s| {
            let mut run = f64::NEG_INFINITY;
            let prefix_max = s
                .probs
                .iter()
                .map(|&p| {
                    run = run.max(p);
                    run
                })
                .collect();
            (s, prefix_max)
        })
        .collect();
    let mean_tta = |beta: f64| {
        let total: f64 = positives
            .iter()
            .map(|(s, pm)| {
                let idx = pm.partition_point(|&m| m < beta);
                match s.tau {
                    Some(tau) if idx < pm.len() => tau.saturating_sub(idx + 1) as f64 / s.fps,
                    _ => 0.0,
                }
            })
            .sum();
        total / positives.len() as f64
    };
    let points: Vec<PrPoint> = sweep_thresholds(scores)
        .into_iter()
        .map(|beta| {
            let (precision, recall) = precision_recall(sweep.at(beta));
            PrPoint {
                threshold: beta,
                precision,
                recall,
                mean_tta: mean_tta(beta),
            }
        })
        .collect();
    let pr: Vec<(f64, f64)> = points.iter().map(|p| (p.precision, p.recall)).collect();
    let map = area(&pr, mode);
    // the top sentinel is outside the probability range and is left out
    let atta = points[1..].iter().map(|p| p.mean_tta).sum::<f64>() / (points.len() - 1) as f64;
    Ok(PrCurve { points, map, atta })
}

pub fn mean_average_precision(scores: &[VideoScore]) -> Result<f64> {
    Ok(pr_curve(scores, ApMode::Interpolated)?.map)
}

pub fn average_tta(scores: &[VideoScore]) -> Result<f64> {
    Ok(pr_curve(scores, ApMode::Interpolated)?.atta)
}

/// Mean of [`tta_at`] over an explicit threshold set.
pub fn average_tta_over(scores: &[VideoScore], thresholds: &[f64]) -> Result<f64> {
    check_positives(scores)?;
    if thresholds.is_empty() {
        return Err(Error::UndefinedMetric("empty threshold set"));
    }
    Ok(thresholds.iter().map(|&b| tta_at(scores, b)).sum::<f64>() / thresholds.len() as f64)
}

pub fn pr_curve_csv(curve: &PrCurve) -> String {
    let mut s = String::from("threshold,precision,recall,mean_tta\n");
    for p in &curve.points {
        let _ = writeln!(s, "{},{},{},{}", p.threshold, p.precision, p.recall, p.mean_tta);
    }
    let _ = writeln!(s, "mAP,{},ATTA,{}", curve.map, curve.atta);
    s
}

pub fn export_pr_curve(curve: &PrCurve, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, pr_curve_csv(curve)).map_err(|e| Error::io(path, e))
}

pub fn parse_pr_curve(text: &str) -> Result<PrCurve> {
    let bad = |line: usize, m: &str| Error::Config(format!("pr curve line {line}: {m}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "threshold,precision,recall,mean_tta")) => {}
        _ => return Err(bad(1, "missing header")),
    }
    let mut points = Vec::new();
    let mut summary = None;
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(i + 1, "expected 4 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1, "not a number"));
        if f[0] == "mAP" && f[2] == "ATTA" {
            summary = Some((num(f[1])?, num(f[3])?));
        } else {
            points.push(PrPoint {
                threshold: num(f[0])?,
                precision: num(f[1])?,
                recall: num(f[2])?,
                mean_tta: num(f[3])?,
            });
        }
    }
    let (map, atta) = summary.ok_or_else(|| bad(0, "missing summary row"))?;
    Ok(PrCurve { points, map, atta })
}

pub fn read_pr_curve(path: impl AsRef<Path>) -> Result<PrCurve> {
    let path = path.as_ref();
    parse_pr_curve(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// `video_id,frame,probability` rows, frames 1-based.
pub fn probabilities_csv(rows: &[(String, Vec<f64>)]) -> String {
    let mut s = String::from("video_id,frame,probability\n");
    for (id, probs) in rows {
        for (t, p) in probs.iter().enumerate() {
            let _ = writeln!(s, "{id},{},{p}", t + 1);
        }
    }
    s
}

pub fn parse_probabilities(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = |m: &str| Error::Config(format!("probabilities line {}: {m}", i + 1));
        let f: Vec<&str> = line.rsplitn(3, ',').collect();
        if f.len() != 3 {
            return Err(bad("expected video_id,frame,probability"));
        }
        let (p, t, id) = (f[0], f[1], f[2]);
        let p: f64 = p.parse().map_err(|_| bad("bad probability"))?;
        let t: usize = t.parse().map_err(|_| bad("bad frame"))?;
        match out.last_mut() {
            Some((last, probs)) if last == id && t == probs.len() + 1 => probs.push(p),
            _ if t == 1 => out.push((id.to_string(), vec![p])),
            _ => return Err(bad("frames must be consecutive from 1")),
        }
    }
    Ok(out)
}
