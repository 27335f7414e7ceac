//! Python bindings: models in single precision, samples, training, metrics.

use std::path::PathBuf;

use anticipate::checkpoint;
use anticipate::data::{generate_synthetic as generate, read_feature_file, write_feature_file, SyntheticConfig};
use anticipate::metrics::{pr_curve as curve_of, tta_at as tta, ApMode, VideoScore};
use anticipate::model::{ExponentMode, LossConfig, StreamPredictor, StreamState};
use anticipate::optimizer::{train as fit, AdamConfig, TrainConfig};
use anticipate::{Error, FaVariant, Label, Model as CoreModel, ModelConfig, Tensor, VideoSample};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Format { .. } => PyIOError::new_err(e.to_string()),
        Error::Numeric(_) | Error::TapeReused => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn variant_of(name: &str) -> PyResult<FaVariant> {
    name.parse().map_err(py_err)
}

fn label_of(name: &str) -> PyResult<Label> {
    match name {
        "accident" => Ok(Label::Accident),
        "normal" => Ok(Label::Normal),
        other => Err(PyValueError::new_err(format!("label must be `accident` or `normal`, got `{other}`"))),
    }
}

/// One video of per-frame object and full-frame features.
#[pyclass(name = "VideoSample", module = "anticipate_py", from_py_object)]
#[derive(Clone)]
pub struct PySample {
    inner: VideoSample,
}

#[pymethods]
impl PySample {
    /// `objects[t][j]` and `frames[t]` are feature rows; frames are 1-based
    /// for `tau`. `n_objects` pads to a fixed slot count, by default the
    /// largest frame.
    #[new]
    #[pyo3(signature = (objects, frames, label, tau=None, fps=20.0, n_objects=None))]
    fn new(
        objects: Vec<Vec<Vec<f32>>>,
        frames: Vec<Vec<f32>>,
        label: &str,
        tau: Option<usize>,
        fps: f32,
        n_objects: Option<usize>,
    ) -> PyResult<Self> {
        let s = frames.len();
        let d = frames.first().map_or(0, Vec::len);
        let widest = objects.iter().map(Vec::len).max().unwrap_or(0);
        let n = n_objects.unwrap_or(widest);
        if widest > n {
            return Err(PyValueError::new_err(format!("a frame has {widest} objects, more than n_objects = {n}")));
        }
        let mut object_feats = vec![0f32; s * n * d];
        let mut object_counts = Vec::with_capacity(s);
        if objects.len() != s {
            return Err(PyValueError::new_err(format!("{} object frames for {s} full frames", objects.len())));
        }
        for (t, rows) in objects.iter().enumerate() {
            object_counts.push(rows.len());
            for (j, row) in rows.iter().enumerate() {
                if row.len() != d {
                    return Err(PyValueError::new_err(format!("object row of length {} at frame {}, expected {d}", row.len(), t + 1)));
                }
                object_feats[(t * n + j) * d..(t * n + j + 1) * d].copy_from_slice(row);
            }
        }
        let inner = VideoSample {
            frames: s,
            n_objects: n,
            dim: d,
            object_feats,
            frame_feats: frames.concat(),
            object_counts,
            label: label_of(label)?,
            tau,
            fps,
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_feature_file(path).map_err(py_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_feature_file(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn frames(&self) -> usize {
        self.inner.frames
    }

    #[getter]
    fn n_objects(&self) -> usize {
        self.inner.n_objects
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label.to_string()
    }

    #[getter]
    fn tau(&self) -> Option<usize> {
        self.inner.tau
    }

    #[getter]
    fn fps(&self) -> f32 {
        self.inner.fps
    }

    #[getter]
    fn object_counts(&self) -> Vec<usize> {
        self.inner.object_counts.clone()
    }

    /// First `k` frames as a new sample.
    fn prefix(&self, k: usize) -> PyResult<Self> {
        if k == 0 || k > self.inner.frames {
            return Err(PyValueError::new_err(format!("prefix length {k} outside [1, {}]", self.inner.frames)));
        }
        Ok(Self {
            inner: self.inner.prefix(k),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "VideoSample(frames={}, n_objects={}, dim={}, label='{}', tau={:?})",
            self.inner.frames, self.inner.n_objects, self.inner.dim, self.inner.label, self.inner.tau
        )
    }
}

/// FA block + LSTM model with single-precision weights.
#[pyclass(name = "Model", module = "anticipate_py", from_py_object)]
#[derive(Clone)]
pub struct PyModel {
    inner: CoreModel<f32>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (d, n_objects, variant="final", hidden=None, seed=0))]
    fn new(d: usize, n_objects: usize, variant: &str, hidden: Option<usize>, seed: u64) -> PyResult<Self> {
        let mut config = ModelConfig::new(d, n_objects, variant_of(variant)?);
        if let Some(h) = hidden {
            config.hidden = h;
        }
        Ok(Self {
            inner: CoreModel::new(config, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.config.variant.to_string()
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.inner.config.hidden
    }

    /// Per-frame `[accident, normal]` probabilities.
    fn predict(&self, sample: &PySample) -> PyResult<Vec<[f32; 2]>> {
        let p = self.inner.predict(&sample.inner).map_err(py_err)?;
        Ok(p.data().chunks(2).map(|r| [r[0], r[1]]).collect())
    }

    fn accident_probs(&self, sample: &PySample) -> PyResult<Vec<f32>> {
        self.inner.accident_probs(&sample.inner).map_err(py_err)
    }

    #[pyo3(signature = (sample, exponent="intent"))]
    fn loss(&self, sample: &PySample, exponent: &str) -> PyResult<f32> {
        let cfg = LossConfig {
            exponent: exponent.parse::<ExponentMode>().map_err(py_err)?,
            ..LossConfig::default()
        };
        self.inner.loss(&sample.inner, cfg).map_err(py_err)
    }

    /// Frame-by-frame predictor starting from an empty history.
    fn stream(&self) -> PyStream {
        PyStream {
            model: self.inner.clone(),
            state: StreamPredictor::new(&self.inner).state().clone(),
        }
    }

    fn __repr__(&self) -> String {
        let c = &self.inner.config;
        format!("Model(d={}, n_objects={}, hidden={}, variant='{}')", c.d, c.n_objects, c.hidden, c.variant)
    }
}

/// Causal per-frame inference that keeps only the recurrent state.
#[pyclass(name = "Stream", module = "anticipate_py")]
pub struct PyStream {
    model: CoreModel<f32>,
    state: StreamState<f32>,
}

#[pymethods]
impl PyStream {
    /// Feeds the next frame and returns its accident probability.
    fn push(&mut self, objects: Vec<Vec<f32>>, frame: Vec<f32>) -> PyResult<f32> {
        let d = frame.len();
        let rows = objects.len();
        let objects = Tensor::new(vec![rows, d], objects.concat()).map_err(py_err)?;
        let mut p = StreamPredictor::resume(&self.model, self.state.clone()).map_err(py_err)?;
        let t = p.frames_seen() + 1;
        let prob = p.push(t, objects, Tensor::row(frame)).map_err(py_err)?;
        self.state = p.state().clone();
        Ok(prob)
    }

    /// Feeds frame `t` (1-based) of a stored sample.
    fn push_sample_frame(&mut self, sample: &PySample, t: usize) -> PyResult<f32> {
        let mut p = StreamPredictor::resume(&self.model, self.state.clone()).map_err(py_err)?;
        let prob = p.push_sample_frame(&sample.inner, t).map_err(py_err)?;
        self.state = p.state().clone();
        Ok(prob)
    }

    #[getter]
    fn frames_seen(&self) -> usize {
        self.state.frames_seen
    }

    /// Serialised recurrent state, restorable with `resume`.
    fn state_bytes(&self) -> Vec<u8> {
        self.state.to_bytes()
    }

    fn resume(&mut self, state: Vec<u8>) -> PyResult<()> {
        let state = StreamState::from_bytes(&state).map_err(py_err)?;
        StreamPredictor::resume(&self.model, state.clone()).map_err(py_err)?;
        self.state = state;
        Ok(())
    }
}

#[pyfunction]
#[pyo3(signature = (pos, neg, seed=0, frames=100, n_objects=9, dim=256, tau=90, fps=20.0, difficulty=1.0))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic(
    pos: usize,
    neg: usize,
    seed: u64,
    frames: usize,
    n_objects: usize,
    dim: usize,
    tau: usize,
    fps: f32,
    difficulty: f64,
) -> PyResult<Vec<PySample>> {
    let cfg = SyntheticConfig {
        count_pos: pos,
        count_neg: neg,
        frames,
        n_objects,
        dim,
        fps,
        tau,
        seed,
        difficulty,
    };
    Ok(generate(&cfg).map_err(py_err)?.into_iter().map(|inner| PySample { inner }).collect())
}

/// Trains from scratch; returns the model and the per-epoch mean losses.
#[pyfunction]
#[pyo3(signature = (samples, epochs=40, batch_size=10, seed=0, variant="final", hidden=None, lr=1e-4, dropout=0.5, loss_exponent="intent", clip=None))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    samples: Vec<PySample>,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    variant: &str,
    hidden: Option<usize>,
    lr: f64,
    dropout: f64,
    loss_exponent: &str,
    clip: Option<f64>,
) -> PyResult<(PyModel, Vec<f64>)> {
    let first = samples
        .first()
        .ok_or_else(|| PyValueError::new_err("training set is empty"))?;
    let cfg = TrainConfig {
        epochs,
        batch_size,
        seed,
        variant: variant_of(variant)?,
        dropout,
        d: first.inner.dim,
        n_objects: first.inner.n_objects,
        hidden: hidden.unwrap_or(2 * first.inner.dim),
        loss: LossConfig {
            exponent: loss_exponent.parse().map_err(py_err)?,
            ..LossConfig::default()
        },
        adam: AdamConfig { lr, ..AdamConfig::default() },
        clip,
    };
    let videos: Vec<VideoSample> = samples.into_iter().map(|s| s.inner).collect();
    let out = py.detach(|| fit::<f32>(&videos, &cfg)).map_err(py_err)?;
    Ok((PyModel { inner: out.model }, out.log.iter().map(|e| e.mean_loss).collect()))
}

fn scores_of(model: &PyModel, samples: &[PySample]) -> PyResult<Vec<VideoScore>> {
    samples
        .iter()
        .map(|s| {
            let probs = model.inner.accident_probs(&s.inner).map_err(py_err)?;
            Ok(VideoScore::new(
                probs.iter().map(|&p| p as f64).collect(),
                s.inner.label,
                s.inner.tau,
                s.inner.fps as f64,
            ))
        })
        .collect()
}

fn curve_dict<'py>(py: Python<'py>, scores: &[VideoScore], mode: &str) -> PyResult<Bound<'py, PyDict>> {
    let mode: ApMode = mode.parse().map_err(py_err)?;
    let c = curve_of(scores, mode).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("map", c.map)?;
    d.set_item("atta", c.atta)?;
    let points: Vec<(f64, f64, f64, f64)> = c.points.iter().map(|p| (p.threshold, p.precision, p.recall, p.mean_tta)).collect();
    d.set_item("points", points)?;
    Ok(d)
}

/// mAP, ATTA and the PR points (threshold, precision, recall, mean_tta) of a
/// model on labelled samples.
#[pyfunction]
#[pyo3(signature = (model, samples, ap_mode="interpolated"))]
fn evaluate<'py>(py: Python<'py>, model: &PyModel, samples: Vec<PySample>, ap_mode: &str) -> PyResult<Bound<'py, PyDict>> {
    let scores = scores_of(model, &samples)?;
    curve_dict(py, &scores, ap_mode)
}

/// Same as `evaluate` but from raw `(probs, label, tau, fps)` tuples.
#[pyfunction]
#[pyo3(signature = (videos, ap_mode="interpolated"))]
fn pr_curve<'py>(py: Python<'py>, videos: Vec<(Vec<f64>, String, Option<usize>, f64)>, ap_mode: &str) -> PyResult<Bound<'py, PyDict>> {
    let scores = to_scores(videos)?;
    curve_dict(py, &scores, ap_mode)
}

fn to_scores(videos: Vec<(Vec<f64>, String, Option<usize>, f64)>) -> PyResult<Vec<VideoScore>> {
    videos
        .into_iter()
        .map(|(probs, label, tau, fps)| Ok(VideoScore::new(probs, label_of(&label)?, tau, fps)))
        .collect()
}

/// Mean time-to-accident over positive videos at one threshold.
#[pyfunction]
fn tta_at(videos: Vec<(Vec<f64>, String, Option<usize>, f64)>, threshold: f64) -> PyResult<f64> {
    Ok(tta(&to_scores(videos)?, threshold))
}

#[pymodule]
fn anticipate_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySample>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyStream>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(pr_curve, m)?)?;
    m.add_function(wrap_pyfunction!(tta_at, m)?)?;
    m.add("VARIANTS", FaVariant::ALL.iter().map(|v| v.name()).collect::<Vec<_>>())?;
    Ok(())
}
