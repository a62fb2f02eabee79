//! Cache policies: full cache, frame-level sliding window, and PackCache's
//! fill / pack / slide state machine.

use std::fmt;
use std::str::FromStr;

use crate::alloc::{AllocationPlan, PlanSource, QuotaRule};
use crate::cache::{FrameCache, KvCache};
use crate::error::{Error, Result};
use crate::rope::{self, RebaseMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PolicyKind {
    /// Keep every frame; masked rows stay resident but are ignored by attention.
    Full,
    /// Keep only the unmasked tokens of the most recent frame.
    SlidingWindow,
    #[default]
    PackCache,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Full => "full",
            PolicyKind::SlidingWindow => "sliding",
            PolicyKind::PackCache => "packcache",
        })
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(PolicyKind::Full),
            "sliding" | "sliding_window" => Ok(PolicyKind::SlidingWindow),
            "packcache" | "pack" => Ok(PolicyKind::PackCache),
            other => Err(Error::InvalidArgument(format!("unknown policy `{other}`"))),
        }
    }
}

/// Which attention statistic drives token selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MassMode {
    /// Reset before each frame; selection sees only the latest frame's attention.
    #[default]
    PerFrame,
    Cumulative,
}

impl FromStr for MassMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_frame" => Ok(MassMode::PerFrame),
            "cumulative" => Ok(MassMode::Cumulative),
            other => Err(Error::InvalidArgument(format!("unknown attn_mass mode `{other}`"))),
        }
    }
}

impl fmt::Display for MassMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MassMode::PerFrame => "per_frame",
            MassMode::Cumulative => "cumulative",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachePolicy {
    pub kind: PolicyKind,
    pub plan_source: PlanSource,
    pub quota: QuotaRule,
    pub rebase: RebaseMode,
    pub mass_mode: MassMode,
    /// Grid width used when `rebase` re-rasters spatial coordinates.
    pub grid_width: usize,
}

impl Default for CachePolicy {
    fn default() -> Self {
        Self::pack_cache()
    }
}

impl CachePolicy {
    pub fn with_kind(kind: PolicyKind) -> Self {
        Self {
            kind,
            plan_source: PlanSource::ClosedForm,
            quota: QuotaRule::None,
            rebase: RebaseMode::SpatialPreserving,
            mass_mode: MassMode::PerFrame,
            grid_width: 1,
        }
    }

    pub fn full() -> Self {
        Self::with_kind(PolicyKind::Full)
    }

    pub fn sliding_window() -> Self {
        Self::with_kind(PolicyKind::SlidingWindow)
    }

    pub fn pack_cache() -> Self {
        Self::with_kind(PolicyKind::PackCache)
    }

    /// History depth at which this policy starts packing, for a cache window `w`.
    pub fn active_window(&self, w: usize) -> usize {
        match self.kind {
            PolicyKind::Full => w,
            PolicyKind::SlidingWindow => 1,
            PolicyKind::PackCache => self.quota.effective_window(w),
        }
    }
}

/// What one `on_frame_complete` call did.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PackReport {
    pub frame_index: usize,
    /// Stored rows per history frame, most recent first.
    pub kept_per_frame: Vec<usize>,
    pub removed_masked: usize,
    pub removed_by_budget: usize,
    pub evicted_frames: usize,
    pub evicted_tokens: usize,
    /// Anchors plus stored history rows after the call.
    pub occupancy: usize,
    pub packed: bool,
}

impl PackReport {
    pub const CSV_HEADER: [&'static str; 5] = [
        "frame_index",
        "kept_per_frame",
        "removed_masked",
        "removed_by_budget",
        "occupancy",
    ];

    /// Kept counts joined with `;` so the CSV stays one column.
    pub fn kept_field(&self) -> String {
        let v: Vec<String> = self.kept_per_frame.iter().map(ToString::to_string).collect();
        v.join(";")
    }

    pub fn csv_record(&self) -> [String; 5] {
        [
            self.frame_index.to_string(),
            self.kept_field(),
            self.removed_masked.to_string(),
            self.removed_by_budget.to_string(),
            self.occupancy.to_string(),
        ]
    }
}

/// Indices (into `frame.entries`) of the unmasked rows with the largest
/// `attn_mass`, ties going to the lower intra-frame index, returned in
/// ascending order.
pub fn select_tokens(frame: &FrameCache, budget: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..frame.entries.len())
        .filter(|&i| !frame.entries[i].masked)
        .collect();
    candidates.sort_by(|&a, &b| {
        let (ea, eb) = (&frame.entries[a], &frame.entries[b]);
        eb.attn_mass
            .total_cmp(&ea.attn_mass)
            .then(ea.index.cmp(&eb.index))
    });
    candidates.truncate(budget);
    candidates.sort_unstable();
    candidates
}

/// Clips budgets to supply and hands the shortfall to nearer frames first.
pub fn reflow_budgets(budgets: &[usize], supply: &[usize]) -> Vec<usize> {
    debug_assert_eq!(budgets.len(), supply.len());
    let mut kept: Vec<usize> = budgets.iter().zip(supply).map(|(&b, &s)| b.min(s)).collect();
    let mut surplus: usize = budgets.iter().zip(&kept).map(|(b, k)| b - k).sum();
    for (k, &s) in kept.iter_mut().zip(supply) {
        if surplus == 0 {
            break;
        }
        let add = surplus.min(s - *k);
        *k += add;
        surplus -= add;
    }
    kept
}

/// Resets selection statistics at the start of a frame when the policy asks for it.
pub fn begin_frame(cache: &mut KvCache, policy: &CachePolicy) {
    if policy.mass_mode == MassMode::PerFrame {
        cache.reset_attn_mass();
    }
}

fn validate_frame(cache: &KvCache, frame: &FrameCache) -> Result<()> {
    let expected = cache.next_frame_index();
    if frame.frame_index != expected {
        return Err(Error::FrameOutOfOrder {
            expected,
            got: frame.frame_index,
        });
    }
    let b_one = cache.frame_token_count();
    if frame.original_token_count != b_one || frame.entries.len() != b_one {
        return Err(Error::FrameSizeMismatch {
            frame: frame.frame_index,
            expected: b_one,
            actual: frame.entries.len(),
        });
    }
    for e in &frame.entries {
        cache.check_dims(e)?;
    }
    Ok(())
}

fn slide(cache: &mut KvCache, count: usize, policy: &CachePolicy, report: &mut PackReport) -> Result<()> {
    if count == 0 {
        return Ok(());
    }
    let evicted = cache.evict_oldest(count);
    report.evicted_frames += evicted.len();
    report.evicted_tokens += evicted.iter().map(FrameCache::len).sum::<usize>();
    if policy.rebase == RebaseMode::None {
        return Ok(());
    }
    let delta = count as u32;
    for frame in cache.frames_mut().iter_mut() {
        let positions: Vec<_> = frame.entries.iter().map(|e| e.pos).collect();
        for (e, p) in frame.entries.iter_mut().zip(rope::rebase(&positions, delta)?) {
            e.pos = p;
        }
    }
    cache.add_temporal_offset(delta);
    Ok(())
}

fn pack(cache: &mut KvCache, plan: &AllocationPlan, report: &mut PackReport) {
    let supply: Vec<usize> = cache.frames().iter().rev().map(FrameCache::unmasked_count).collect();
    let kept = reflow_budgets(&plan.token_budgets, &supply);
    for (frame, &budget) in cache.frames_mut().iter_mut().rev().zip(&kept) {
        let keep = select_tokens(frame, budget);
        let masked = frame.masked_count();
        report.removed_masked += masked;
        report.removed_by_budget += frame.len() - masked - keep.len();
        let old = std::mem::take(&mut frame.entries);
        frame.entries = old
            .into_iter()
            .enumerate()
            .filter(|(i, _)| keep.binary_search(i).is_ok())
            .map(|(_, e)| e)
            .collect();
    }
    report.packed = true;
}

fn refresh_positions(cache: &mut KvCache, policy: &CachePolicy) {
    if policy.rebase == RebaseMode::None {
        return;
    }
    if policy.rebase == RebaseMode::FullyContinuous {
        for frame in cache.frames_mut().iter_mut() {
            let positions: Vec<_> = frame.entries.iter().map(|e| e.pos).collect();
            for (e, p) in frame
                .entries
                .iter_mut()
                .zip(rope::reindex_spatial(&positions, policy.grid_width))
            {
                e.pos = p;
            }
        }
    }
    cache.renumber_seq();
}

/// Hands a completed frame (masked tokens flagged, not removed) to the policy.
pub fn on_frame_complete(cache: &mut KvCache, frame: FrameCache, policy: &CachePolicy) -> Result<PackReport> {
    validate_frame(cache, &frame)?;
    let mut report = PackReport {
        frame_index: frame.frame_index,
        ..PackReport::default()
    };
    let b_one = cache.frame_token_count();
    match policy.kind {
        PolicyKind::Full => {
            if cache.depth() >= cache.window_capacity() {
                return Err(Error::CapacityExceeded {
                    capacity: cache.window_capacity(),
                });
            }
            cache.push_frame(frame);
        }
        PolicyKind::SlidingWindow => {
            cache.push_frame(frame);
            let older = cache.depth() - 1;
            slide(cache, older, policy, &mut report)?;
            let plan = AllocationPlan::build(1, &PlanSource::ClosedForm, &QuotaRule::None, b_one)?;
            pack(cache, &plan, &mut report);
            refresh_positions(cache, policy);
        }
        PolicyKind::PackCache => {
            let window = policy.active_window(cache.window_capacity());
            cache.push_frame(frame);
            let excess = cache.depth().saturating_sub(window);
            slide(cache, excess, policy, &mut report)?;
            if cache.depth() == window {
                let plan = AllocationPlan::build(window, &policy.plan_source, &policy.quota, b_one)?;
                pack(cache, &plan, &mut report);
                refresh_positions(cache, policy);
            }
        }
    }
    report.kept_per_frame = cache.frames().iter().rev().map(FrameCache::len).collect();
    report.occupancy = cache.occupancy();
    Ok(report)
}

/// Structural invariants that must hold after every `on_frame_complete`.
pub fn check_invariants(cache: &KvCache, policy: &CachePolicy, report: &PackReport) -> Result<()> {
    let window = policy.active_window(cache.window_capacity());
    if cache.depth() > window {
        return Err(Error::InvariantViolated(format!(
            "window bound: {} frames held, capacity {window}",
            cache.depth()
        )));
    }
    if report.packed {
        if cache.history_len() > cache.frame_token_count() {
            return Err(Error::InvariantViolated(format!(
                "history budget: {} rows exceed B_one = {}",
                cache.history_len(),
                cache.frame_token_count()
            )));
        }
        if cache.frames().iter().any(|f| f.masked_count() > 0) {
            return Err(Error::InvariantViolated("packed frames hold masked rows".into()));
        }
    }
    Ok(())
}
