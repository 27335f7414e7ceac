//! Brute-force metric definitions and the shared four-video fixture.

use anticipate::metrics::VideoScore;
use anticipate::Label;

/// Four videos of five frames at 20 fps, probabilities covering every
/// multiple of 0.05 in [0, 0.95] once.
pub fn fixture() -> Vec<VideoScore> {
    vec![
        VideoScore::new(vec![0.15, 0.35, 0.55, 0.8, 0.95], Label::Accident, Some(4), 20.0),
        VideoScore::new(vec![0.05, 0.6, 0.4, 0.7, 0.9], Label::Accident, Some(5), 20.0),
        VideoScore::new(vec![0.1, 0.2, 0.65, 0.3, 0.25], Label::Normal, None, 20.0),
        VideoScore::new(vec![0.45, 0.5, 0.75, 0.85, 0.0], Label::Normal, None, 20.0),
    ]
}

/// Exhaustive frame count straight from the definition.
pub fn brute_confusion(scores: &[VideoScore], beta: f64) -> (usize, usize, usize, usize) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for s in scores {
        for &p in &s.probs {
            let flagged = p >= beta;
            if s.label == Label::Accident {
                if flagged {
                    tp += 1
                } else {
                    fn_ += 1
                }
            } else if flagged {
                fp += 1
            } else {
                tn += 1
            }
        }
    }
    (tp, fp, tn, fn_)
}

pub fn brute_tta(scores: &[VideoScore], beta: f64) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for s in scores.iter().filter(|s| s.label == Label::Accident) {
        count += 1;
        for (i, &p) in s.probs.iter().enumerate() {
            if p >= beta {
                let tau = s.tau.unwrap() as f64;
                total += ((tau - (i + 1) as f64) / s.fps).max(0.0);
                break;
            }
        }
    }
    total / count as f64
}

/// Interpolated AP and mean TTA over a uniform grid from 1 down to 0.
pub fn dense_grid(scores: &[VideoScore], steps: usize) -> (f64, f64) {
    let mut points = Vec::new();
    let mut tta = 0.0;
    for k in (0..=steps).rev() {
        let beta = k as f64 / steps as f64;
        let (tp, fp, _, fn_) = brute_confusion(scores, beta);
        let p = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = tp as f64 / (tp + fn_) as f64;
        points.push((p, r));
        tta += brute_tta(scores, beta);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for i in 0..points.len() {
        let r = points[i].1;
        if r > prev_r {
            let best = points[i..].iter().map(|q| q.0).fold(0.0, f64::max);
            ap += best * (r - prev_r);
            prev_r = r;
        }
    }
    (ap, tta / (steps + 1) as f64)
}
