//! Synthetic Q/K/V streams with a controllable cross-frame decay.
//!
//! Every token carries Gaussian noise. On top of that, queries and keys of
//! frame `f` share a unit "frame direction" at angle `f·ω` in the first rotary
//! pair of each head's temporal block, with `ω = π / (T + 1)`. The component
//! is pre-rotated by `-f` on the temporal axis, so after rotary embedding the
//! aligned part of a query/key logit is `decay_injection · cos(d·ω)` for
//! temporal distance `d`, independent of rebasing. Nearer frames therefore
//! receive more attention.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::rope::RopeConfig;

use super::config::SimConfig;

/// Stream purposes; one RNG stream per (frame, step, purpose).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Anchor = 1,
    Features = 2,
    Mask = 3,
}

/// Counter-based stream factory. Streams depend only on the seed and the
/// stream coordinates, never on how many numbers were drawn elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureRng {
    seed: u64,
}

impl FeatureRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn stream(&self, frame: usize, step: usize, purpose: Purpose) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((frame as u64) << 32) | ((step as u64) << 8) | purpose as u64);
        rng
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

/// Queries, keys and values for one refinement step of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFeatures {
    pub queries: Array2<f64>,
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
}

/// The frame-direction vector for one head, already counter-rotated.
pub fn frame_direction(config: &SimConfig, rope: &RopeConfig, frame_index: usize) -> Vec<f64> {
    let omega = std::f64::consts::PI / (config.num_latent_frames as f64 + 1.0);
    let amplitude = (config.decay_injection * (config.head_dim as f64).sqrt()).sqrt();
    let angle = frame_index as f64 * omega;
    let mut u = vec![0.0; config.head_dim];
    u[0] = amplitude * angle.cos();
    u[1] = amplitude * angle.sin();
    rope.rotate_coords_in_place(&mut u, -(frame_index as f64), 0.0, 0.0);
    u
}

pub fn synthesize_frame_features(
    config: &SimConfig,
    rope: &RopeConfig,
    frame_index: usize,
    step: usize,
    rng: &FeatureRng,
) -> StepFeatures {
    let n = config.tokens_per_frame;
    let d = config.heads * config.head_dim;
    let mut stream = rng.stream(frame_index, step, Purpose::Features);
    let mut queries = gaussian(&mut stream, n, d);
    let mut keys = gaussian(&mut stream, n, d);
    let values = gaussian(&mut stream, n, d);
    if config.decay_injection > 0.0 {
        let u = frame_direction(config, rope, frame_index);
        for h in 0..config.heads {
            for (c, &x) in u.iter().enumerate() {
                let col = h * config.head_dim + c;
                queries.column_mut(col).mapv_inplace(|v| v + x);
                keys.column_mut(col).mapv_inplace(|v| v + x);
            }
        }
    }
    StepFeatures {
        queries,
        keys,
        values,
    }
}

/// Anchor keys and values (prompt rows first, then conditioning rows).
pub fn anchor_features(config: &SimConfig, rng: &FeatureRng) -> (Array2<f64>, Array2<f64>) {
    let d = config.heads * config.head_dim;
    let mut stream = rng.stream(0, 0, Purpose::Anchor);
    let keys = gaussian(&mut stream, config.anchors(), d);
    let values = gaussian(&mut stream, config.anchors(), d);
    (keys, values)
}

/// AR-DF visibility draw: `true` marks a token left out of the cache.
pub fn bernoulli_mask(config: &SimConfig, frame_index: usize, rng: &FeatureRng) -> Vec<bool> {
    let mut stream = rng.stream(frame_index, 0, Purpose::Mask);
    (0..config.tokens_per_frame)
        .map(|_| stream.random::<f64>() >= config.keep_prob)
        .collect()
}
