//! Adam and the mini-batch training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fa_block::FaVariant;
use crate::model::{LossConfig, Model, ModelConfig, ModelParams};
use crate::sample::VideoSample;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, shapes: &[&[usize]]) -> Self {
        let zeros = || shapes.iter().map(|s| Tensor::zeros(s.to_vec())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn for_params(config: AdamConfig, params: &ModelParams<Tensor<T>>) -> Self {
        let mut shapes = Vec::new();
        params.visit(&mut |_, t| shapes.push(t.shape()));
        Self::new(config, &shapes)
    }

    /// One bias-corrected update. Every parameter needs a gradient of its
    /// own shape.
    pub fn update(&mut self, params: &mut [&mut Tensor<T>], grads: &[Option<&Tensor<T>>]) -> Result<()> {
        let shapes: Vec<&[usize]> = params.iter().map(|p| p.shape()).collect();
        self.check(&shapes, grads)?;
        self.step += 1;
        for (i, p) in params.iter_mut().enumerate() {
            self.apply(i, p, grads[i].unwrap());
        }
        Ok(())
    }

    fn check(&self, shapes: &[&[usize]], grads: &[Option<&Tensor<T>>]) -> Result<()> {
        if shapes.len() != self.m.len() || grads.len() != shapes.len() {
            return Err(Error::Contract(format!(
                "adam state tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                shapes.len(),
                grads.len()
            )));
        }
        for (i, (&shape, g)) in shapes.iter().zip(grads).enumerate() {
            let g = g.ok_or_else(|| Error::Contract(format!("missing gradient for parameter {i}")))?;
            if g.shape() != shape || self.m[i].shape() != shape {
                return Err(Error::dim("adam_step", shape, g.shape()));
            }
        }
        Ok(())
    }

    fn apply(&mut self, i: usize, p: &mut Tensor<T>, g: &Tensor<T>) {
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let corr1 = T::of(1.0 - c.beta1.powi(t));
        let corr2 = T::of(1.0 - c.beta2.powi(t));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        let g = g.data();
        let m = self.m[i].data_mut();
        let v = self.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (T::one() - b1) * g[j];
            v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
            let m_hat = m[j] / corr1;
            let v_hat = v[j] / corr2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Applies one update to every model parameter; `None` marks a missing
/// gradient.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<Tensor<T>>,
    grads: &ModelParams<Option<Tensor<T>>>,
    state: &mut AdamState<T>,
) -> Result<()> {
    let mut g = Vec::new();
    grads.visit(&mut |_, t| g.push(t.as_ref()));
    let mut shapes = Vec::new();
    params.visit(&mut |_, t| shapes.push(t.shape()));
    state.check(&shapes, &g)?;
    state.step += 1;
    let mut i = 0;
    params.visit_mut(&mut |_, p| {
        state.apply(i, p, g[i].unwrap());
        i += 1;
    });
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub variant: FaVariant,
    pub dropout: f64,
    pub d: usize,
    pub n_objects: usize,
    pub hidden: usize,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    /// global-norm gradient clip, off when `None`
    pub clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 10,
            seed: 0,
            variant: FaVariant::Final,
            dropout: 0.5,
            d: 256,
            n_objects: 9,
            hidden: 512,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            clip: None,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            n_objects: self.n_objects,
            hidden: self.hidden,
            variant: self.variant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.adam.lr.is_nan() || self.adam.lr <= 0.0 {
            return Err(Error::Config(format!("learning rate {} must be positive", self.adam.lr)));
        }
        if let Some(c) = self.clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("clip norm {c} must be positive")));
            }
        }
        self.model_config().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

/// Training log as CSV with a header row.
pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,mean_loss,wall_seconds\n");
    for e in log {
        s.push_str(&format!("{},{},{:.3}\n", e.epoch, e.mean_loss, e.wall_seconds));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub log: Vec<EpochLog>,
}

/// Worker pool sized by `ANTICIPATE_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("ANTICIPATE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("ANTICIPATE_THREADS must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn video_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn global_norm<T: Real>(grads: &ModelParams<Tensor<T>>) -> f64 {
    let mut sq = 0.0;
    grads.visit(&mut |_, t| sq += t.data().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>());
    sq.sqrt()
}

pub fn train<T: Real>(samples: &[VideoSample], config: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with(samples, config, |_, _| Ok(()))
}

/// Trains from a fresh initialisation, calling `on_epoch` after each epoch.
pub fn train_with<T: Real, F>(samples: &[VideoSample], config: &TrainConfig, on_epoch: F) -> Result<TrainOutcome<T>>
where
    F: FnMut(&EpochLog, &Model<T>) -> Result<()>,
{
    config.validate()?;
    let model = Model::new(config.model_config(), config.seed)?;
    train_from(model, samples, config, on_epoch)
}

pub fn train_from<T: Real, F>(mut model: Model<T>, samples: &[VideoSample], config: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome<T>>
where
    F: FnMut(&EpochLog, &Model<T>) -> Result<()>,
{
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    for s in samples {
        s.validate()?;
    }
    let pool = thread_pool()?;
    let mut adam = AdamState::for_params(config.adam, &model.params);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let start = Instant::now();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let current = &model;
            let results: Vec<Result<(T, ModelParams<Tensor<T>>)>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let mut rng = ChaCha8Rng::seed_from_u64(video_seed(config.seed, epoch, i));
                        current.loss_and_grad(&samples[i], config.loss, config.dropout, &mut rng)
                    })
                    .collect()
            });
            let mut total: Option<ModelParams<Tensor<T>>> = None;
            for (r, &i) in results.into_iter().zip(batch) {
                let (loss, grads) = r.map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, video {i}: {m}")),
                    other => other,
                })?;
                epoch_loss += loss.as_f64();
                match total.as_mut() {
                    None => total = Some(grads),
                    Some(acc) => {
                        let mut flat = Vec::new();
                        grads.visit(&mut |_, g| flat.push(g));
                        let mut k = 0;
                        acc.visit_mut(&mut |_, a| {
                            for (x, y) in a.data_mut().iter_mut().zip(flat[k].data()) {
                                *x += *y;
                            }
                            k += 1;
                        });
                    }
                }
            }
            let mut grads = total.expect("non-empty batch");
            let mut scale = 1.0 / batch.len() as f64;
            if let Some(max_norm) = config.clip {
                let norm = global_norm(&grads) * scale;
                if norm > max_norm {
                    scale *= max_norm / norm;
                }
            }
            let scale = T::of(scale);
            grads.visit_mut(&mut |_, g| g.data_mut().iter_mut().for_each(|x| *x *= scale));
            let grads = grads.map(&mut |_, g| Some(g.clone()));
            adam_step(&mut model.params, &grads, &mut adam)?;
            if !model.params.is_finite() {
                return Err(Error::Numeric(format!("parameters became non-finite in epoch {epoch}")));
            }
        }
        let entry = EpochLog {
            epoch,
            mean_loss: epoch_loss / samples.len() as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log.push(entry);
        on_epoch(&entry, &model)?;
    }
    Ok(TrainOutcome { model, log })
}
