//! Gradient checks and oracle comparisons shared by the oracle tests and
//! the acceptance run. Each returns the worst error it saw.

use anticipate::fa_block::{fa_forward, FaParams, FaVariant};
use anticipate::model::{anticipation_loss, forward_video, LossConfig, ModelParams};
use anticipate::params::bind;
use anticipate::recurrent::{lstm_step, Dropout, LstmParams, LstmState, StateVars};
use anticipate::tensor::{finite_diff_check, finite_diff_check_f32, ScalarFunction};
use anticipate::{ModelConfig, Real, Result, Tape, Tensor, Var, VideoSample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::fixtures::{random_model, random_sample, random_tensor, tiny_config};
use super::ops::CASES;
use super::oracle;

/// Worst relative errors of one check, 32-bit then 64-bit.
#[derive(Debug, Clone, Copy, Default)]
pub struct Worst {
    pub f32: f64,
    pub f64: f64,
}

impl Worst {
    pub fn merge(self, o: Worst) -> Worst {
        Worst {
            f32: self.f32.max(o.f32),
            f64: self.f64.max(o.f64),
        }
    }

    pub fn passes(&self) -> bool {
        self.f32 < 1e-4 && self.f64 < 1e-6
    }
}

pub fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    t.data().chunks(t.shape()[1]).map(<[f64]>::to_vec).collect()
}

pub fn no_dropout(rng: &mut ChaCha8Rng) -> Dropout<'_, ChaCha8Rng> {
    Dropout {
        rate: 0.0,
        training: false,
        rng,
    }
}

/// Parameters in declaration order.
pub fn flatten<T: Real>(p: &ModelParams<Tensor<T>>) -> Vec<Tensor<T>> {
    let mut out = Vec::new();
    p.visit(&mut |_, t| out.push(t.clone()));
    out
}

pub fn rebuild<Q: Clone>(template: &ModelParams<Tensor<f64>>, vars: &[Q]) -> ModelParams<Q> {
    let mut i = 0;
    template.map(&mut |_, _| {
        i += 1;
        vars[i - 1].clone()
    })
}

fn both<F: ScalarFunction>(f: &F, inputs: &[Tensor<f64>]) -> Worst {
    let r64 = finite_diff_check(|t, v| f.eval(t, v), inputs, 1e-6).unwrap();
    let narrow: Vec<Tensor<f32>> = inputs.iter().map(Tensor::cast).collect();
    let r32 = finite_diff_check_f32(f, &narrow, 1e-6).unwrap();
    Worst {
        f32: r32.max_rel_error,
        f64: r64.max_rel_error,
    }
}

/// Every tape op at ten random points each.
pub fn ops_gradcheck() -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = Worst::default();
    for case in CASES {
        for _ in 0..10 {
            let inputs = case.sample(&mut rng);
            let wide: Vec<Tensor<f64>> = inputs.iter().map(Tensor::cast).collect();
            let r32 = finite_diff_check_f32(&case, &inputs, 1e-6).unwrap();
            let r64 = finite_diff_check(|t, v| case.eval(t, v), &wide, 1e-6).unwrap();
            worst = worst.merge(Worst {
                f32: r32.max_rel_error,
                f64: r64.max_rel_error,
            });
        }
    }
    worst
}

struct FaCheck {
    variant: FaVariant,
    template: FaParams<Tensor<f64>>,
}

impl ScalarFunction for FaCheck {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, x: &[Var]) -> Result<Var> {
        let mut i = 2;
        let p = self.template.map(&mut |_, _| {
            i += 1;
            x[i - 1]
        });
        let out = fa_forward(tape, x[0], x[1], &p, self.variant)?;
        let n = tape.value(out.alpha).len();
        let w = tape.constant(Tensor::new(vec![3, 3], (0..n).map(|i| T::of((i as f64 * 0.7).cos())).collect())?);
        let wa = tape.mul(out.alpha, w)?;
        let a = tape.sum(wa);
        let d = tape.value(out.descriptor).len();
        let wm = tape.constant(Tensor::new(vec![d], (0..d).map(|i| T::of((i as f64 + 1.0).sin())).collect())?);
        let m = tape.mul(out.descriptor, wm)?;
        let m = tape.sum(m);
        tape.add(a, m)
    }
}

/// FA block with respect to objects, hidden state and all its parameters.
pub fn fa_gradcheck(variant: FaVariant) -> Worst {
    let model = random_model::<f64>(ModelConfig::new(3, 3, variant), 5, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut fa_params = Vec::new();
    model.params.fa.visit(&mut |_, t| fa_params.push(t.clone()));
    if variant == FaVariant::RelationNet {
        // keep the relation logits clear of the ReLU kink
        fa_params.last_mut().unwrap().data_mut()[0] = 2.0;
    }
    let mut inputs = vec![random_tensor::<f64>(&[3, 3], &mut rng, 1.0), random_tensor::<f64>(&[6], &mut rng, 0.5)];
    inputs.extend(fa_params);
    both(
        &FaCheck {
            variant,
            template: model.params.fa.clone(),
        },
        &inputs,
    )
}

struct LstmCheck {
    template: LstmParams<Tensor<f64>>,
}

impl ScalarFunction for LstmCheck {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, x: &[Var]) -> Result<Var> {
        let mut i = 3;
        let p = self.template.map(&mut |_, _| {
            i += 1;
            x[i - 1]
        });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = lstm_step(tape, x[0], StateVars { h: x[1], c: x[2] }, &p, &mut no_dropout(&mut rng))?;
        let s = tape.concat(out.state.h, out.state.c)?;
        let w = tape.constant(Tensor::new(vec![8], (0..8).map(|k| T::of(k as f64 - 3.5)).collect())?);
        let s = tape.mul(s, w)?;
        Ok(tape.sum(s))
    }
}

/// One peephole LSTM step with respect to input, state and parameters.
pub fn lstm_gradcheck() -> Worst {
    let model = random_model::<f64>(ModelConfig::new(2, 2, FaVariant::Final), 8, 0.6);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut inputs = vec![
        random_tensor::<f64>(&[4], &mut rng, 1.0),
        random_tensor::<f64>(&[4], &mut rng, 0.5),
        random_tensor::<f64>(&[4], &mut rng, 1.0),
    ];
    model.params.lstm.visit(&mut |_, t| inputs.push(t.clone()));
    both(
        &LstmCheck {
            template: model.params.lstm.clone(),
        },
        &inputs,
    )
}

struct WholeModel {
    config: ModelConfig,
    template: ModelParams<Tensor<f64>>,
    sample: VideoSample,
}

impl ScalarFunction for WholeModel {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, x: &[Var]) -> Result<Var> {
        let p = rebuild(&self.template, x);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = forward_video(tape, &p, &self.config, &self.sample, &mut no_dropout(&mut rng))?;
        anticipation_loss(tape, out.probs, self.sample.label, self.sample.tau, 2.0, LossConfig::default())
    }
}

/// Loss of the full model (d = 4, N = 2, S = 3) with respect to every parameter.
pub fn model_gradcheck(variant: FaVariant) -> Worst {
    let config = tiny_config(variant);
    let model = random_model::<f64>(config, 30, 0.4);
    let check = WholeModel {
        config,
        template: model.params.clone(),
        sample: random_sample(3, 2, 4, 31, None),
    };
    both(&check, &flatten(&model.params))
}

/// Largest gap between `fa_forward` and the straight-line oracle.
pub fn fa_oracle_gap(variant: FaVariant) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let model = random_model::<f64>(ModelConfig::new(2, 3, variant), 10 + seed, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let objects = random_tensor::<f64>(&[3, 2], &mut rng, 1.0);
        let h = random_tensor::<f64>(&[4], &mut rng, 0.5);
        let expected = oracle::fa(&rows(&objects), h.data(), &model.params.fa, variant);

        let mut tape = Tape::new();
        let p = bind(&mut tape, &model.params.fa, false);
        let o = tape.constant(objects);
        let hv = tape.constant(h);
        let out = fa_forward(&mut tape, o, hv, &p, variant).unwrap();
        for (a, b) in tape.value(out.descriptor).data().iter().zip(&expected.m) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in tape.value(out.alpha).data().iter().zip(expected.alpha.concat()) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

pub fn lstm_oracle_gap() -> f64 {
    let model = random_model::<f64>(ModelConfig::new(2, 2, FaVariant::Final), 3, 0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor::<f64>(&[4], &mut rng, 1.0);
    let h = random_tensor::<f64>(&[4], &mut rng, 0.5);
    let c = random_tensor::<f64>(&[4], &mut rng, 1.0);
    let (eh, ec) = oracle::lstm(x.data(), h.data(), c.data(), &model.params.lstm);

    let mut tape = Tape::new();
    let p = bind(&mut tape, &model.params.lstm, false);
    let xv = tape.constant(x);
    let state = StateVars::constant(&mut tape, &LstmState { h, c });
    let out = lstm_step(&mut tape, xv, state, &p, &mut no_dropout(&mut rng)).unwrap();
    let got = out.state.read(&tape);
    got.h
        .data()
        .iter()
        .zip(&eh)
        .chain(got.c.data().iter().zip(&ec))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Whole-video predictions against the oracle, with and without an empty frame.
pub fn video_oracle_gap(variant: FaVariant) -> f64 {
    let model = random_model::<f64>(tiny_config(variant), 21, 0.6);
    let mut worst: f64 = 0.0;
    for (seed, empty) in [(1, None), (2, Some(2))] {
        let sample = random_sample(3, 2, 4, seed, empty);
        let expected = oracle::video(&sample, &model.params, variant);
        let got = model.predict(&sample).unwrap();
        for (row, e) in got.data().chunks(2).zip(&expected) {
            worst = worst.max((row[0] - e[0]).abs()).max((row[1] - e[1]).abs());
        }
    }
    worst
}
