//! Test-side oracles, written against the math rather than the library code.
#![allow(dead_code)]

use ndarray::Array2;
use num_bigint::BigInt;
use num_rational::BigRational;
use packcache::{CacheEntry, FrameCache, KvCache, Position3D, Region, RopeConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()
}

/// `2^{-min(d, W-1)}` for `d = 1..=W`.
pub fn closed_form_oracle(w: usize) -> Vec<BigRational> {
    (1..=w)
        .map(|d| {
            let e = d.min(w - 1) as u32;
            BigRational::new(BigInt::from(1), BigInt::from(2).pow(e))
        })
        .collect()
}

/// Rotates `v` by treating pairs as complex numbers, block by block.
fn rotate_pairs(v: &mut [f64], coord: f64, base: f64) {
    let n = v.len() / 2;
    for i in 0..n {
        let theta = coord / base.powf(i as f64 / n as f64);
        let z = (v[2 * i], v[2 * i + 1]);
        let r = (theta.cos(), theta.sin());
        v[2 * i] = z.0 * r.0 - z.1 * r.1;
        v[2 * i + 1] = z.0 * r.1 + z.1 * r.0;
    }
}

pub fn oracle_rotate(cfg: &RopeConfig, head: &[f64], region: Region, pos: &Position3D) -> Vec<f64> {
    let mut v = head.to_vec();
    if cfg.text_1d && region == Region::TextPrompt {
        rotate_pairs(&mut v, pos.seq as f64, cfg.theta_base);
        return v;
    }
    let (a, b) = (2 * cfg.dims_t, 2 * (cfg.dims_t + cfg.dims_h));
    rotate_pairs(&mut v[..a], pos.t as f64 * cfg.scale_t as f64, cfg.theta_base);
    rotate_pairs(&mut v[a..b], pos.h as f64 * cfg.scale_h as f64, cfg.theta_base);
    rotate_pairs(&mut v[b..], pos.w as f64 * cfg.scale_w as f64, cfg.theta_base);
    v
}

pub struct OracleKey {
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub region: Region,
    pub pos: Position3D,
}

/// Plain softmax attention of current-frame queries over exactly `keys`.
/// Callers pass only the keys the queries may see.
pub fn oracle_attention(
    cfg: &RopeConfig,
    heads: usize,
    queries: &Array2<f64>,
    q_pos: &[Position3D],
    keys: &[OracleKey],
) -> Array2<f64> {
    let hd = cfg.head_dim;
    let dv = keys[0].value.len() / heads;
    let mut out = Array2::zeros((queries.nrows(), dv * heads));
    for (i, pos) in q_pos.iter().enumerate() {
        for h in 0..heads {
            let q = queries.row(i).to_vec();
            let q = oracle_rotate(cfg, &q[h * hd..(h + 1) * hd], Region::CurrentFrame, pos);
            let logits: Vec<f64> = keys
                .iter()
                .map(|k| {
                    let kr = oracle_rotate(cfg, &k.key[h * hd..(h + 1) * hd], k.region, &k.pos);
                    q.iter().zip(&kr).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt()
                })
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for (k, w) in keys.iter().zip(&e) {
                for c in 0..dv {
                    out[[i, h * dv + c]] += w / z * k.value[h * dv + c];
                }
            }
        }
    }
    out
}

/// A cache with random anchors, built only through the public API.
pub fn random_cache(r: &mut ChaCha8Rng, w: usize, n: usize, d: usize) -> KvCache {
    let mut cache = KvCache::new(w, n, d, d).unwrap();
    let n_prompt = r.random_range(0..4);
    let n_cond = r.random_range(0..6);
    let prompt = (0..n_prompt)
        .map(|i| {
            CacheEntry::new(
                gaussian_vec(r, d),
                gaussian_vec(r, d),
                Position3D::new(0, 0, 0, i as u64),
                Region::TextPrompt,
                i,
            )
        })
        .collect();
    let cond = (0..n_cond)
        .map(|i| {
            CacheEntry::new(
                gaussian_vec(r, d),
                gaussian_vec(r, d),
                Position3D::raster(0, i, 3, (n_prompt + i) as u64),
                Region::ConditionImage,
                i,
            )
        })
        .collect();
    cache.set_anchors(prompt, cond).unwrap();
    cache
}

/// The next frame for `cache`, with random features, mask and attention mass.
pub fn random_frame(r: &mut ChaCha8Rng, cache: &KvCache, keep_prob: f64) -> FrameCache {
    let idx = cache.next_frame_index();
    let n = cache.frame_token_count();
    let d = cache.d_k();
    let t = cache.temporal_position(idx);
    let gw = (n as f64).sqrt().ceil() as usize;
    let entries = (0..n)
        .map(|i| {
            let mut e = CacheEntry::new(
                gaussian_vec(r, d),
                gaussian_vec(r, d),
                Position3D::raster(t, i, gw, cache.next_seq() + i as u64),
                Region::HistoryFrame(idx),
                i,
            )
            .with_masked(r.random::<f64>() >= keep_prob);
            e.attn_mass = r.random();
            e
        })
        .collect();
    FrameCache::new(idx, entries).unwrap()
}
