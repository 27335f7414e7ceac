//! Unvectorised reference computations in f64, written loop by loop from
//! the model equations and sharing no code with the library.
#![allow(clippy::needless_range_loop)]

use anticipate::fa_block::{FaParams, FaVariant};
use anticipate::model::ModelParams;
use anticipate::recurrent::LstmParams;
use anticipate::{Tensor, VideoSample};

/// `x · W` for a row vector `x` and `W` stored `in × out`.
fn vecmat(x: &[f64], w: &Tensor<f64>) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    assert_eq!(rows, x.len());
    let mut y = vec![0.0; cols];
    for k in 0..cols {
        let mut acc = 0.0;
        for i in 0..rows {
            acc += x[i] * w.data()[i * cols + k];
        }
        y[k] = acc;
    }
    y
}

fn plus(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub struct FaResult {
    pub m: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
}

pub fn fa(objects: &[Vec<f64>], h: &[f64], p: &FaParams<Tensor<f64>>, variant: FaVariant) -> FaResult {
    let n = objects.len();
    let d = objects[0].len();
    let u = vecmat(h, &p.w_u);
    let act = |x: f64| if variant == FaVariant::Relu { x.max(0.0) } else { x.tanh() };

    let mut a = Vec::new();
    let mut b = Vec::new();
    for o in objects {
        let (q, k) = if variant == FaVariant::NoProjection {
            (o.clone(), o.clone())
        } else {
            let q = plus(&vecmat(o, p.w_theta.as_ref().unwrap()), p.b_theta.as_ref().unwrap().data());
            let k = plus(&vecmat(o, p.w_phi.as_ref().unwrap()), p.b_phi.as_ref().unwrap().data());
            (q, k)
        };
        a.push((0..d).map(|c| act(u[c] + q[c])).collect::<Vec<_>>());
        b.push((0..d).map(|c| act(u[c] + k[c])).collect::<Vec<_>>());
    }

    let mut e = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            e[i][j] = if variant == FaVariant::RelationNet {
                let w = p.w_r.as_ref().unwrap().data();
                let mut s = p.b_r.as_ref().unwrap().data()[0];
                for c in 0..d {
                    s += a[i][c] * w[c] + b[j][c] * w[d + c];
                }
                s.max(0.0)
            } else {
                let mut s = 0.0;
                for c in 0..d {
                    s += a[i][c] * b[j][c];
                }
                s
            };
        }
    }

    let alpha: Vec<Vec<f64>> = e
        .iter()
        .map(|row| {
            if variant == FaVariant::MeanScale {
                row.iter().map(|v| v / n as f64).collect()
            } else {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = ex.iter().sum();
                ex.iter().map(|v| v / z).collect()
            }
        })
        .collect();

    let g: Vec<Vec<f64>> = objects.iter().map(|o| plus(&vecmat(o, &p.w_g), p.b_g.data())).collect();
    let mut m = vec![0.0; d];
    for i in 0..n {
        for c in 0..d {
            let mut z = objects[i][c];
            for j in 0..n {
                z += alpha[i][j] * g[j][c];
            }
            m[c] += z / n as f64;
        }
    }
    FaResult { m, alpha }
}

/// One peephole LSTM step; returns `(h, c)`.
pub fn lstm(x: &[f64], h: &[f64], c: &[f64], p: &LstmParams<Tensor<f64>>) -> (Vec<f64>, Vec<f64>) {
    let hidden = h.len();
    let xi = vecmat(x, &p.w_i);
    let hi = vecmat(h, &p.u_i);
    let ci = vecmat(c, &p.v_i);
    let xf = vecmat(x, &p.w_f);
    let hf = vecmat(h, &p.u_f);
    let cf = vecmat(c, &p.v_f);
    let xc = vecmat(x, &p.w_c);
    let hc = vecmat(h, &p.u_c);
    let mut c_new = vec![0.0; hidden];
    for k in 0..hidden {
        let i = sigmoid(xi[k] + hi[k] + ci[k] + p.b_i.data()[k]);
        let f = sigmoid(xf[k] + hf[k] + cf[k] + p.b_f.data()[k]);
        let cand = (xc[k] + hc[k] + p.b_c.data()[k]).tanh();
        c_new[k] = f * c[k] + i * cand;
    }
    let xq = vecmat(x, &p.w_q);
    let hq = vecmat(h, &p.u_q);
    let cq = vecmat(&c_new, &p.v_q);
    let h_new = (0..hidden)
        .map(|k| sigmoid(xq[k] + hq[k] + cq[k] + p.b_q.data()[k]) * c_new[k].tanh())
        .collect();
    (h_new, c_new)
}

/// Per-frame `[p(accident), p(normal)]` for a whole video.
pub fn video(sample: &VideoSample, p: &ModelParams<Tensor<f64>>, variant: FaVariant) -> Vec<[f64; 2]> {
    let (n, d) = (sample.n_objects, sample.dim);
    let hidden = p.head.w_o.shape()[0];
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut out = Vec::new();
    for t in 0..sample.frames {
        let objects: Vec<Vec<f64>> = (0..sample.object_counts[t])
            .map(|j| {
                let start = (t * n + j) * d;
                sample.object_feats[start..start + d].iter().map(|&v| f64::from(v)).collect()
            })
            .collect();
        let m = if objects.is_empty() { vec![0.0; d] } else { fa(&objects, &h, &p.fa, variant).m };
        let mut x: Vec<f64> = sample.frame_feats[t * d..(t + 1) * d].iter().map(|&v| f64::from(v)).collect();
        x.extend(m);
        let (h2, c2) = lstm(&x, &h, &c, &p.lstm);
        h = h2;
        c = c2;
        let logits = plus(&vecmat(&h, &p.head.w_o), p.head.b_o.data());
        let max = logits[0].max(logits[1]);
        let e0 = (logits[0] - max).exp();
        let e1 = (logits[1] - max).exp();
        out.push([e0 / (e0 + e1), e1 / (e0 + e1)]);
    }
    out
}
