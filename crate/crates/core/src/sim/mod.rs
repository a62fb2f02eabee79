//! Deterministic toy AR-DF generation loop.
//!
//! Each latent frame runs `steps_per_frame` attention passes of its own
//! queries against the policy-managed cache, then has its Bernoulli mask drawn
//! and is handed to the policy.

mod config;
mod features;
mod trace;

use std::time::Instant;

use crate::attention::{accumulate_attn_mass, masked_attention, region_stats, FrameBlock};
use crate::cache::{CacheEntry, FrameCache, KvCache, Position3D, Region};
use crate::error::Result;
use crate::packer::{begin_frame, check_invariants, on_frame_complete, PolicyKind};
use crate::rope::RopeConfig;

pub use config::{parse_plan, parse_quota, SimConfig, MAX_TOTAL_TOKENS, RNG_CHACHA8};
pub use features::{
    anchor_features, bernoulli_mask, frame_direction, synthesize_frame_features, FeatureRng, Purpose,
    StepFeatures,
};
pub use trace::{FrameTrace, GenerationTrace};

/// A simulation in progress. [`run`] drives one to completion.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimConfig,
    rope: RopeConfig,
    rng: FeatureRng,
    cache: KvCache,
    frames: Vec<FrameTrace>,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let rope = RopeConfig::for_head_dim(config.head_dim)?;
        let rng = FeatureRng::new(config.seed);
        let window = match config.policy.kind {
            PolicyKind::Full => config.num_latent_frames,
            _ => config.window,
        };
        let d = config.heads * config.head_dim;
        let mut cache = KvCache::new(window, config.tokens_per_frame, d, d)?;

        let (keys, values) = anchor_features(&config, &rng);
        let grid_w = config.grid_w();
        let mut rows = keys.rows().into_iter().zip(values.rows());
        let prompt: Vec<CacheEntry> = (0..config.prompt_tokens)
            .map(|i| {
                let (k, v) = rows.next().expect("prompt row");
                CacheEntry::new(k.to_vec(), v.to_vec(), Position3D::new(0, 0, 0, i as u64), Region::TextPrompt, i)
            })
            .collect();
        let cond: Vec<CacheEntry> = (0..config.cond_tokens)
            .map(|i| {
                let (k, v) = rows.next().expect("cond row");
                let seq = (config.prompt_tokens + i) as u64;
                CacheEntry::new(
                    k.to_vec(),
                    v.to_vec(),
                    Position3D::raster(0, i, grid_w, seq),
                    Region::ConditionImage,
                    i,
                )
            })
            .collect();
        cache.set_anchors(prompt, cond)?;

        let mut config = config;
        config.policy.grid_width = grid_w;
        Ok(Self {
            config,
            rope,
            rng,
            cache,
            frames: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn cache(&self) -> &KvCache {
        &self.cache
    }

    pub fn frames_done(&self) -> usize {
        self.frames.len()
    }

    pub fn is_done(&self) -> bool {
        self.frames.len() >= self.config.num_latent_frames
    }

    /// Generates the next latent frame and returns its trace record.
    pub fn step_frame(&mut self) -> Result<&FrameTrace> {
        let started = Instant::now();
        let cfg = &self.config;
        let frame_index = self.cache.next_frame_index();
        begin_frame(&mut self.cache, &cfg.policy);

        let t = self.cache.temporal_position(frame_index);
        let base_seq = self.cache.next_seq();
        let grid_w = cfg.grid_w();
        let positions: Vec<Position3D> = (0..cfg.tokens_per_frame)
            .map(|i| Position3D::raster(t, i, grid_w, base_seq + i as u64))
            .collect();

        let mut stats = Vec::with_capacity(cfg.steps_per_frame);
        let mut attended_keys = 0;
        let mut self_mass = vec![0.0; cfg.tokens_per_frame];
        let mut last = None;
        for step in 0..cfg.steps_per_frame {
            let feats = synthesize_frame_features(cfg, &self.rope, frame_index, step, &self.rng);
            let block = FrameBlock {
                frame_index,
                keys: feats.keys,
                values: feats.values,
                positions: positions.clone(),
            };
            let att = masked_attention(feats.queries.view(), &self.cache, &block, &self.rope)?;
            accumulate_attn_mass(&mut self.cache, &att.weights)?;
            let n_cached = self.cache.occupancy();
            for (i, m) in self_mass.iter_mut().enumerate() {
                *m += att.weights.column(n_cached + i).sum();
            }
            stats.push(region_stats(&att.weights, &att.layout, step, 0)?);
            attended_keys = att.attended_keys;
            last = Some(block);
        }
        let block = last.expect("steps_per_frame >= 1");

        let mask = bernoulli_mask(cfg, frame_index, &self.rng);
        let entries = (0..cfg.tokens_per_frame)
            .map(|i| {
                let mut e = CacheEntry::new(
                    block.keys.row(i).to_vec(),
                    block.values.row(i).to_vec(),
                    positions[i],
                    Region::HistoryFrame(frame_index),
                    i,
                )
                .with_masked(mask[i]);
                e.attn_mass = self_mass[i];
                e
            })
            .collect();
        let frame = FrameCache::new(frame_index, entries)?;
        let report = on_frame_complete(&mut self.cache, frame, &cfg.policy)?;
        check_invariants(&self.cache, &cfg.policy, &report)?;

        self.frames.push(FrameTrace {
            frame_index,
            attended_keys,
            occupancy: self.cache.occupancy(),
            dropped_frames: self.cache.dropped_frames(),
            region_stats: stats,
            report,
            wall_time: started.elapsed(),
        });
        Ok(self.frames.last().expect("just pushed"))
    }

    pub fn finish(self) -> (GenerationTrace, KvCache) {
        let trace = GenerationTrace {
            policy: self.config.policy.kind,
            window: self.config.window,
            seed: self.config.seed,
            anchors: self.config.anchors(),
            frames: self.frames,
        };
        (trace, self.cache)
    }
}

/// Runs the whole simulation and returns the trace together with the final cache.
pub fn run_with_cache(config: SimConfig) -> Result<(GenerationTrace, KvCache)> {
    let mut sim = Simulation::new(config)?;
    while !sim.is_done() {
        sim.step_frame()?;
    }
    Ok(sim.finish())
}

pub fn run(config: SimConfig) -> Result<GenerationTrace> {
    run_with_cache(config).map(|(trace, _)| trace)
}
