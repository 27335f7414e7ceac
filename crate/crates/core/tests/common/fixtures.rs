use anticipate::data::{generate_synthetic, SyntheticConfig};
use anticipate::{FaVariant, Label, Model, ModelConfig, Real, Tensor, VideoSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Model whose parameters are drawn with a chosen spread, large enough to
/// push the nonlinearities away from their linear regime.
pub fn random_model<T: Real>(config: ModelConfig, seed: u64, std: f64) -> Model<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).unwrap();
    let mut model = Model::<T>::zeros(config);
    model.params.visit_mut(&mut |_, t| {
        for v in t.data_mut() {
            *v = T::of(normal.sample(&mut rng));
        }
    });
    model
}

pub fn random_tensor<T: Real>(shape: &[usize], rng: &mut ChaCha8Rng, std: f64) -> Tensor<T> {
    let normal = Normal::new(0.0, std).unwrap();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::of(normal.sample(rng))).collect()).unwrap()
}

/// Random video whose per-frame object counts vary, optionally with an
/// empty frame at `empty_at`.
pub fn random_sample(frames: usize, n: usize, d: usize, seed: u64, empty_at: Option<usize>) -> VideoSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut object_counts: Vec<usize> = (0..frames).map(|_| rng.random_range(1..=n)).collect();
    if let Some(t) = empty_at {
        object_counts[t - 1] = 0;
    }
    let mut object_feats = vec![0f32; frames * n * d];
    for t in 0..frames {
        for j in 0..object_counts[t] {
            for k in 0..d {
                object_feats[(t * n + j) * d + k] = rng.random_range(-1.0..1.0);
            }
        }
    }
    let frame_feats = (0..frames * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    VideoSample {
        frames,
        n_objects: n,
        dim: d,
        object_feats,
        frame_feats,
        object_counts,
        label: Label::Accident,
        tau: Some(frames),
        fps: 2.0,
    }
}

pub fn tiny_config(variant: FaVariant) -> ModelConfig {
    ModelConfig::new(4, 2, variant)
}

/// Small synthetic train set for loop-level checks.
pub fn synthetic(count_pos: usize, count_neg: usize, seed: u64) -> Vec<VideoSample> {
    generate_synthetic(&SyntheticConfig {
        count_pos,
        count_neg,
        frames: 20,
        tau: 16,
        n_objects: 3,
        dim: 6,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}
