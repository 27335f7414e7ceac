//! Per-video forward pass and the anticipation loss.
//!
//! For each frame: the FA block refines the object features using the
//! previous hidden state, the mean refined feature is concatenated after the
//! full-frame feature, the LSTM advances one step, and a linear head with a
//! softmax gives `[p(accident), p(normal)]`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fa_block::{fa_forward, FaParams, FaVariant};
use crate::params::{bind, normal_init};
use crate::recurrent::{lstm_step, Dropout, LstmParams, LstmState, StateVars};
use crate::sample::{check_label_tau, Label, VideoSample, ACCIDENT};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Lower clamp applied before taking logarithms of probabilities.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// feature dimension of objects and full frames
    pub d: usize,
    /// object slots per frame
    pub n_objects: usize,
    pub hidden: usize,
    pub variant: FaVariant,
}

impl ModelConfig {
    /// Hidden size defaults to `2d`.
    pub fn new(d: usize, n_objects: usize, variant: FaVariant) -> Self {
        Self {
            d,
            n_objects,
            hidden: 2 * d,
            variant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_objects == 0 || self.hidden == 0 {
            return Err(Error::Parameter(format!(
                "d, N and hidden must be positive (got {}, {}, {})",
                self.d, self.n_objects, self.hidden
            )));
        }
        Ok(())
    }

    fn check_sample(&self, sample: &VideoSample) -> Result<()> {
        sample.check_shapes()?;
        if sample.dim != self.d || sample.n_objects != self.n_objects {
            return Err(Error::Dimension {
                op: "forward_video",
                lhs: vec![sample.n_objects, sample.dim],
                rhs: vec![self.n_objects, self.d],
            });
        }
        Ok(())
    }
}

/// Classifier head mapping the hidden state to two logits.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<P> {
    /// `hidden × 2`
    pub w_o: P,
    pub b_o: P,
}

impl<P> HeadParams<P> {
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'static str, &'a P)) {
        f("head.w_o", &self.w_o);
        f("head.b_o", &self.b_o);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&'static str, &mut P)) {
        f("head.w_o", &mut self.w_o);
        f("head.b_o", &mut self.b_o);
    }

    pub fn map<Q>(&self, f: &mut dyn FnMut(&'static str, &P) -> Q) -> HeadParams<Q> {
        HeadParams {
            w_o: f("head.w_o", &self.w_o),
            b_o: f("head.b_o", &self.b_o),
        }
    }
}

/// All learnable values, visited in a fixed declaration order (FA block,
/// LSTM, head) that checkpoints and the optimizer rely on.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<P> {
    pub fa: FaParams<P>,
    pub lstm: LstmParams<P>,
    pub head: HeadParams<P>,
}

impl<P> ModelParams<P> {
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'static str, &'a P)) {
        self.fa.visit(f);
        self.lstm.visit(f);
        self.head.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&'static str, &mut P)) {
        self.fa.visit_mut(f);
        self.lstm.visit_mut(f);
        self.head.visit_mut(f);
    }

    pub fn map<Q>(&self, f: &mut dyn FnMut(&'static str, &P) -> Q) -> ModelParams<Q> {
        ModelParams {
            fa: self.fa.map(f),
            lstm: self.lstm.map(f),
            head: self.head.map(f),
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut names = Vec::new();
        self.visit(&mut |n, _| names.push(n));
        names
    }
}

impl<T: Real> ModelParams<Tensor<T>> {
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let (d, h) = (config.d, config.hidden);
        Self {
            fa: FaParams::init(d, h, config.variant, rng),
            lstm: LstmParams::init(2 * d, h, rng),
            head: HeadParams {
                w_o: normal_init(&[h, 2], rng),
                b_o: normal_init(&[2], rng),
            },
        }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let (d, h) = (config.d, config.hidden);
        Self {
            fa: FaParams::zeros(d, h, config.variant),
            lstm: LstmParams::zeros(2 * d, h),
            head: HeadParams {
                w_o: Tensor::zeros(vec![h, 2]),
                b_o: Tensor::zeros(vec![2]),
            },
        }
    }

    /// Number of scalar parameters.
    pub fn count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    pub fn cast<U: Real>(&self) -> ModelParams<Tensor<U>> {
        self.map(&mut |_, t| t.cast())
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, t| ok &= t.is_finite());
        ok
    }
}

/// How the positive-video frame weights are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExponentMode {
    /// `exp(-max(0, τ - t) / scale)`: weights in (0, 1], largest at τ.
    #[default]
    Intent,
    /// `exp(τ - t)` taken literally, growing away from τ; overflows single
    /// precision for videos longer than about 88 frames before τ.
    Literal,
}

impl FromStr for ExponentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intent" => Ok(Self::Intent),
            "literal" => Ok(Self::Literal),
            other => Err(Error::Parameter(format!("unknown loss exponent `{other}` (intent or literal)"))),
        }
    }
}

impl fmt::Display for ExponentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Intent => "intent",
            Self::Literal => "literal",
        })
    }
}

/// Unit of the `τ - t` distance in [`ExponentMode::Intent`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExponentUnit {
    #[default]
    Seconds,
    Frames,
}

impl FromStr for ExponentUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seconds" => Ok(Self::Seconds),
            "frames" => Ok(Self::Frames),
            other => Err(Error::Parameter(format!("unknown exponent unit `{other}` (seconds or frames)"))),
        }
    }
}

impl fmt::Display for ExponentUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Seconds => "seconds",
            Self::Frames => "frames",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LossConfig {
    pub exponent: ExponentMode,
    pub unit: ExponentUnit,
}

/// Per-frame loss weights of a video (frames are 1-based). Normal videos
/// weight every frame by 1.
pub fn frame_weights<T: Real>(frames: usize, label: Label, tau: Option<usize>, fps: f64, cfg: LossConfig) -> Result<Vec<T>> {
    check_label_tau(label, tau, frames)?;
    let Some(tau) = tau else {
        return Ok(vec![T::one(); frames]);
    };
    let scale = match cfg.unit {
        ExponentUnit::Seconds => fps,
        ExponentUnit::Frames => 1.0,
    };
    let weights: Vec<T> = (1..=frames)
        .map(|t| {
            let gap = tau as f64 - t as f64;
            match cfg.exponent {
                ExponentMode::Intent => (T::of(-gap.max(0.0)) / T::of(scale)).exp(),
                ExponentMode::Literal => T::of(gap).exp(),
            }
        })
        .collect();
    if let Some(t) = weights.iter().position(|w| !w.is_finite()) {
        return Err(Error::Numeric(format!(
            "loss weight exp({}) at frame {} overflows {}-bit floats",
            tau as f64 - (t + 1) as f64,
            t + 1,
            8 * std::mem::size_of::<T>()
        )));
    }
    Ok(weights)
}

/// Frame-averaged weighted cross entropy of one video.
///
/// `probs` is `[S × 2]` with columns `[accident, normal]`.
pub fn anticipation_loss<T: Real>(
    tape: &mut Tape<T>,
    probs: Var,
    label: Label,
    tau: Option<usize>,
    fps: f64,
    cfg: LossConfig,
) -> Result<Var> {
    let shape = tape.value(probs).shape().to_vec();
    if shape.len() != 2 || shape[1] != 2 || shape[0] == 0 {
        return Err(Error::dim("anticipation_loss", &shape, &[0, 2]));
    }
    let frames = shape[0];
    let weights = frame_weights::<T>(frames, label, tau, fps, cfg)?;
    let logp = tape.log_clamped(probs, T::of(LOG_EPS));
    let target = tape.column(logp, label.index())?;
    let w = tape.constant(Tensor::new(vec![frames], weights)?);
    let weighted = tape.mul(target, w)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -T::one() / T::of(frames as f64)))
}

/// One frame of the model on a tape.
#[derive(Debug, Clone, Copy)]
pub struct FrameStep {
    /// `[p(accident), p(normal)]`
    pub probs: Var,
    pub state: StateVars,
    /// attention matrix, absent for frames without objects
    pub alpha: Option<Var>,
}

pub fn frame_step<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    params: &ModelParams<Var>,
    variant: FaVariant,
    objects: Tensor<T>,
    full_frame: Tensor<T>,
    state: StateVars,
    dropout: &mut Dropout<'_, R>,
) -> Result<FrameStep> {
    let d = full_frame.len();
    let (descriptor, alpha) = if objects.shape()[0] == 0 {
        // no detections: the descriptor is the zero vector
        (tape.constant(Tensor::zeros(vec![d])), None)
    } else {
        let o = tape.constant(objects);
        let out = fa_forward(tape, o, state.h, &params.fa, variant)?;
        (out.descriptor, Some(out.alpha))
    };
    let x_full = tape.constant(full_frame);
    let x = tape.concat(x_full, descriptor)?;
    let step = lstm_step(tape, x, state, &params.lstm, dropout)?;
    let logits = tape.matmul(step.output, params.head.w_o)?;
    let logits = tape.add(logits, params.head.b_o)?;
    let probs = tape.softmax_rows(logits)?;
    Ok(FrameStep {
        probs,
        state: step.state,
        alpha,
    })
}

#[derive(Debug, Clone)]
pub struct VideoForward {
    /// `[S × 2]`
    pub probs: Var,
    pub alphas: Vec<Option<Var>>,
}

/// Runs every frame of `sample` from the zero state.
pub fn forward_video<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    params: &ModelParams<Var>,
    config: &ModelConfig,
    sample: &VideoSample,
    dropout: &mut Dropout<'_, R>,
) -> Result<VideoForward> {
    config.check_sample(sample)?;
    let mut state = StateVars::constant(tape, &LstmState::zeros(config.hidden));
    let mut rows = Vec::with_capacity(sample.frames);
    let mut alphas = Vec::with_capacity(sample.frames);
    for t in 1..=sample.frames {
        let step = frame_step(tape, params, config.variant, sample.objects(t), sample.frame(t), state, dropout)?;
        state = step.state;
        rows.push(step.probs);
        alphas.push(step.alpha);
    }
    Ok(VideoForward {
        probs: tape.stack_rows(&rows)?,
        alphas,
    })
}

/// Probabilities and attention for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction<T> {
    pub probs: [T; 2],
    pub alpha: Option<Tensor<T>>,
}

impl<T: Real> FramePrediction<T> {
    pub fn accident(&self) -> T {
        self.probs[ACCIDENT]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams<Tensor<T>>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            params: ModelParams::init(&config, &mut rng),
            config,
        })
    }

    pub fn zeros(config: ModelConfig) -> Self {
        Self {
            params: ModelParams::zeros(&config),
            config,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config,
            params: self.params.cast(),
        }
    }

    /// Inference-mode probabilities `[S × 2]`.
    pub fn predict(&self, sample: &VideoSample) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.params, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut dropout = Dropout {
            rate: 0.0,
            training: false,
            rng: &mut rng,
        };
        let out = forward_video(&mut tape, &bound, &self.config, sample, &mut dropout)?;
        Ok(tape.value(out.probs).clone())
    }

    /// Accident probability per frame.
    pub fn accident_probs(&self, sample: &VideoSample) -> Result<Vec<T>> {
        let p = self.predict(sample)?;
        Ok(p.data().chunks(2).map(|r| r[ACCIDENT]).collect())
    }

    /// Inference with the attention matrices retained.
    pub fn predict_frames(&self, sample: &VideoSample) -> Result<Vec<FramePrediction<T>>> {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.params, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut dropout = Dropout {
            rate: 0.0,
            training: false,
            rng: &mut rng,
        };
        let out = forward_video(&mut tape, &bound, &self.config, sample, &mut dropout)?;
        let probs = tape.value(out.probs).data().to_vec();
        Ok(out
            .alphas
            .iter()
            .zip(probs.chunks(2))
            .map(|(a, p)| FramePrediction {
                probs: [p[0], p[1]],
                alpha: a.map(|a| tape.value(a).clone()),
            })
            .collect())
    }

    /// Loss of one video and its gradient with respect to every parameter.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        sample: &VideoSample,
        loss: LossConfig,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Result<(T, ModelParams<Tensor<T>>)> {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.params, true);
        let mut dropout = Dropout {
            rate: dropout_rate,
            training: true,
            rng,
        };
        let out = forward_video(&mut tape, &bound, &self.config, sample, &mut dropout)?;
        let l = anticipation_loss(&mut tape, out.probs, sample.label, sample.tau, f64::from(sample.fps), loss)?;
        let value = tape.value(l).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {value}")));
        }
        tape.backward(l)?;
        let grads = bound.map(&mut |_, &v| tape.grad(v).expect("parameter gradient").clone());
        Ok((value, grads))
    }

    /// Loss without gradients, in inference mode.
    pub fn loss(&self, sample: &VideoSample, loss: LossConfig) -> Result<T> {
        let mut tape = Tape::new();
        let probs = tape.constant(self.predict(sample)?);
        let l = anticipation_loss(&mut tape, probs, sample.label, sample.tau, f64::from(sample.fps), loss)?;
        Ok(tape.value(l).item())
    }

    pub fn stream(&self) -> StreamPredictor<'_, T> {
        StreamPredictor::new(self)
    }
}

/// Recurrent state of a stream between frames.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState<T> {
    pub frames_seen: usize,
    pub lstm: LstmState<T>,
}

const STREAM_MAGIC: &[u8; 4] = b"FAST";

impl<T: Real> StreamState<T> {
    /// Little-endian encoding: magic, element width, frames seen, hidden
    /// size, then `h` and `c`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let width = std::mem::size_of::<T>() as u8;
        let hidden = self.lstm.h.len();
        let mut out = Vec::with_capacity(17 + 2 * hidden * width as usize);
        out.extend_from_slice(STREAM_MAGIC);
        out.push(width);
        out.extend_from_slice(&(self.frames_seen as u64).to_le_bytes());
        out.extend_from_slice(&(hidden as u32).to_le_bytes());
        for v in self.lstm.h.data().iter().chain(self.lstm.c.data()) {
            if width == 4 {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Contract(format!("stream state: {m}"));
        if bytes.len() < 17 || &bytes[..4] != STREAM_MAGIC {
            return Err(bad("bad header"));
        }
        let width = bytes[4] as usize;
        if width != std::mem::size_of::<T>() {
            return Err(bad("precision mismatch"));
        }
        let frames_seen = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        let hidden = u32::from_le_bytes(bytes[13..17].try_into().unwrap()) as usize;
        let body = &bytes[17..];
        if body.len() != 2 * hidden * width {
            return Err(bad("truncated"));
        }
        let values: Vec<T> = body
            .chunks(width)
            .map(|c| {
                if width == 4 {
                    T::of(f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                } else {
                    T::of(f64::from_le_bytes(c.try_into().unwrap()))
                }
            })
            .collect();
        Ok(Self {
            frames_seen,
            lstm: LstmState {
                h: Tensor::new(vec![hidden], values[..hidden].to_vec())?,
                c: Tensor::new(vec![hidden], values[hidden..].to_vec())?,
            },
        })
    }
}

/// Frame-at-a-time inference that carries the recurrent state between
/// calls. Outputs equal the matching prefix of [`Model::predict`].
pub struct StreamPredictor<'m, T> {
    model: &'m Model<T>,
    state: StreamState<T>,
    latest: Option<T>,
}

impl<'m, T: Real> StreamPredictor<'m, T> {
    pub fn new(model: &'m Model<T>) -> Self {
        Self {
            model,
            state: StreamState {
                frames_seen: 0,
                lstm: LstmState::zeros(model.config.hidden),
            },
            latest: None,
        }
    }

    pub fn resume(model: &'m Model<T>, state: StreamState<T>) -> Result<Self> {
        if state.lstm.h.len() != model.config.hidden {
            return Err(Error::dim("stream resume", state.lstm.h.shape(), &[model.config.hidden]));
        }
        Ok(Self {
            model,
            state,
            latest: None,
        })
    }

    pub fn state(&self) -> &StreamState<T> {
        &self.state
    }

    pub fn frames_seen(&self) -> usize {
        self.state.frames_seen
    }

    /// Accident probability after the most recent frame.
    pub fn latest(&self) -> Option<T> {
        self.latest
    }

    /// Feeds frame `t` (1-based), which must directly follow the previous one.
    pub fn push(&mut self, t: usize, objects: Tensor<T>, full_frame: Tensor<T>) -> Result<T> {
        let expected = self.state.frames_seen + 1;
        if t != expected {
            return Err(Error::Contract(format!("frame {t} arrived out of order, expected {expected}")));
        }
        let cfg = &self.model.config;
        if full_frame.len() != cfg.d || objects.shape().len() != 2 || objects.shape()[1] != cfg.d || objects.shape()[0] > cfg.n_objects {
            return Err(Error::dim("stream push", objects.shape(), &[cfg.n_objects, cfg.d]));
        }
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.model.params, false);
        let state = StateVars::constant(&mut tape, &self.state.lstm);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut dropout = Dropout {
            rate: 0.0,
            training: false,
            rng: &mut rng,
        };
        let step = frame_step(&mut tape, &bound, cfg.variant, objects, full_frame, state, &mut dropout)?;
        let p = tape.value(step.probs).data()[ACCIDENT];
        self.state = StreamState {
            frames_seen: t,
            lstm: step.state.read(&tape),
        };
        self.latest = Some(p);
        Ok(p)
    }

    /// Feeds frame `t` of a stored video.
    pub fn push_sample_frame(&mut self, sample: &VideoSample, t: usize) -> Result<T> {
        if t == 0 || t > sample.frames {
            return Err(Error::Contract(format!("frame {t} outside [1, {}]", sample.frames)));
        }
        self.push(t, sample.objects(t), sample.frame(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs_tape(p: f64, frames: usize) -> (Tape<f64>, Var) {
        let mut tape = Tape::new();
        let data = (0..frames).flat_map(|_| [p, 1.0 - p]).collect();
        let v = tape.leaf(Tensor::new(vec![frames, 2], data).unwrap(), true);
        (tape, v)
    }

    #[test]
    fn positive_hand_case() {
        let (mut tape, probs) = probs_tape(0.5, 3);
        let l = anticipation_loss(&mut tape, probs, Label::Accident, Some(3), 1.0, LossConfig::default()).unwrap();
        let expected = ((-2f64).exp() + (-1f64).exp() + 1.0) * 2f64.ln() / 3.0;
        assert!((tape.value(l).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn negative_hand_case() {
        let (mut tape, probs) = probs_tape(0.5, 4);
        let l = anticipation_loss(&mut tape, probs, Label::Normal, None, 20.0, LossConfig::default()).unwrap();
        assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let (mut tape, probs) = probs_tape(1.0, 5);
        let l = anticipation_loss(&mut tape, probs, Label::Accident, Some(2), 20.0, LossConfig::default()).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn confident_miss_is_finite() {
        let (mut tape, probs) = probs_tape(0.0, 2);
        let l = anticipation_loss(&mut tape, probs, Label::Accident, Some(2), 1.0, LossConfig::default()).unwrap();
        assert!(tape.value(l).item().is_finite());
    }

    #[test]
    fn weights_peak_at_tau() {
        let w = frame_weights::<f64>(6, Label::Accident, Some(4), 2.0, LossConfig::default()).unwrap();
        assert_eq!(w[3], 1.0);
        assert_eq!(w[4], 1.0);
        assert_eq!(w[5], 1.0);
        assert!((w[0] - (-1.5f64).exp()).abs() < 1e-15);
        assert!(w.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn frame_unit_weights() {
        let cfg = LossConfig {
            unit: ExponentUnit::Frames,
            ..LossConfig::default()
        };
        let w = frame_weights::<f64>(3, Label::Accident, Some(3), 20.0, cfg).unwrap();
        assert!((w[0] - (-2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn literal_weights_overflow_in_f32_only() {
        let cfg = LossConfig {
            exponent: ExponentMode::Literal,
            ..LossConfig::default()
        };
        let err = frame_weights::<f32>(100, Label::Accident, Some(100), 20.0, cfg).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        let w = frame_weights::<f64>(100, Label::Accident, Some(100), 20.0, cfg).unwrap();
        assert!(w.iter().all(|x| x.is_finite()));
        assert!((w[0] - 99f64.exp()).abs() / 99f64.exp() < 1e-15);
    }

    #[test]
    fn label_tau_mismatch_is_rejected() {
        assert!(frame_weights::<f64>(3, Label::Normal, Some(2), 1.0, LossConfig::default()).is_err());
        assert!(frame_weights::<f64>(3, Label::Accident, None, 1.0, LossConfig::default()).is_err());
        assert!(frame_weights::<f64>(3, Label::Accident, Some(4), 1.0, LossConfig::default()).is_err());
    }

    #[test]
    fn bad_probability_shape() {
        let mut tape = Tape::<f64>::new();
        let v = tape.leaf(Tensor::zeros(vec![3, 3]), false);
        assert!(anticipation_loss(&mut tape, v, Label::Normal, None, 1.0, LossConfig::default()).is_err());
    }

    #[test]
    fn exponent_parsing() {
        assert_eq!("literal".parse::<ExponentMode>().unwrap(), ExponentMode::Literal);
        assert_eq!("frames".parse::<ExponentUnit>().unwrap(), ExponentUnit::Frames);
        assert!("other".parse::<ExponentMode>().is_err());
    }

    #[test]
    fn stream_state_round_trip() {
        let state = StreamState {
            frames_seen: 7,
            lstm: LstmState {
                h: Tensor::from_f64(vec![2], &[0.25, -1.5]).unwrap(),
                c: Tensor::from_f64(vec![2], &[3.0, 0.125]).unwrap(),
            },
        };
        let back = StreamState::<f32>::from_bytes(&state.to_bytes()).unwrap();
        assert_eq!(back, state);
        assert!(StreamState::<f64>::from_bytes(&state.to_bytes()).is_err());
        assert!(StreamState::<f32>::from_bytes(&state.to_bytes()[..20]).is_err());
    }
}
