//! Frame-structured KV cache.
//!
//! The cache holds two kinds of rows: anchor rows (text prompt followed by the
//! conditioning image) that are never evicted, and a deque of history frames
//! stored oldest first. Budget accounting (`B_one`) covers history rows only.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Semantic region a key column belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    TextPrompt,
    ConditionImage,
    /// A previously generated latent frame, 1-based generation index.
    HistoryFrame(usize),
    CurrentFrame,
}

impl Region {
    pub fn is_anchor(&self) -> bool {
        matches!(self, Region::TextPrompt | Region::ConditionImage)
    }

    pub fn frame_index(&self) -> Option<usize> {
        match self {
            Region::HistoryFrame(f) => Some(*f),
            _ => None,
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            Region::TextPrompt => "text",
            Region::ConditionImage => "cond",
            Region::HistoryFrame(_) => "frame",
            Region::CurrentFrame => "current",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::HistoryFrame(i) => write!(f, "frame:{i}"),
            other => f.write_str(other.tag()),
        }
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Region::TextPrompt),
            "cond" => Ok(Region::ConditionImage),
            "current" => Ok(Region::CurrentFrame),
            _ => {
                let idx = s
                    .strip_prefix("frame:")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&n| n >= 1)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown region `{s}`")))?;
                Ok(Region::HistoryFrame(idx))
            }
        }
    }
}

/// Latent coordinates `(t, h, w)` plus the 1D global sequence index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Position3D {
    pub t: u32,
    pub h: u32,
    pub w: u32,
    pub seq: u64,
}

impl Position3D {
    pub const fn new(t: u32, h: u32, w: u32, seq: u64) -> Self {
        Self { t, h, w, seq }
    }

    /// Raster position of intra-frame token `index` on a grid `grid_w` wide.
    pub fn raster(t: u32, index: usize, grid_w: usize, seq: u64) -> Self {
        Self {
            t,
            h: (index / grid_w) as u32,
            w: (index % grid_w) as u32,
            seq,
        }
    }
}

/// One cached token.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub pos: Position3D,
    pub region: Region,
    /// Index of the token within its frame (or anchor block) at generation time.
    pub index: usize,
    /// Dropped by the AR-DF visibility mask; excluded from attention.
    pub masked: bool,
    /// Attention received, summed over current-frame queries and averaged over heads.
    pub attn_mass: f64,
}

impl CacheEntry {
    pub fn new(key: Vec<f64>, value: Vec<f64>, pos: Position3D, region: Region, index: usize) -> Self {
        Self {
            key,
            value,
            pos,
            region,
            index,
            masked: false,
            attn_mass: 0.0,
        }
    }

    pub fn with_masked(mut self, masked: bool) -> Self {
        self.masked = masked;
        self
    }
}

/// The cached rows of one history frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCache {
    pub frame_index: usize,
    pub entries: Vec<CacheEntry>,
    /// Tokens per latent frame before any removal.
    pub original_token_count: usize,
}

impl FrameCache {
    pub fn new(frame_index: usize, entries: Vec<CacheEntry>) -> Result<Self> {
        if frame_index == 0 {
            return Err(Error::InvalidArgument("frame_index must be >= 1".into()));
        }
        let expected = Region::HistoryFrame(frame_index);
        if let Some(bad) = entries.iter().find(|e| e.region != expected) {
            return Err(Error::RegionMismatch {
                expected: expected.to_string(),
                actual: bad.region,
            });
        }
        if let Some(first) = entries.first() {
            if entries.iter().any(|e| e.pos.t != first.pos.t) {
                return Err(Error::InvalidArgument(format!(
                    "entries of frame {frame_index} disagree on temporal position"
                )));
            }
        }
        let original_token_count = entries.len();
        Ok(Self {
            frame_index,
            entries,
            original_token_count,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn unmasked_count(&self) -> usize {
        self.entries.iter().filter(|e| !e.masked).count()
    }

    pub fn masked_count(&self) -> usize {
        self.entries.len() - self.unmasked_count()
    }
}

/// Full cache state: anchors plus a bounded window of history frames.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    anchors: Vec<CacheEntry>,
    anchors_set: bool,
    frames: VecDeque<FrameCache>,
    window_capacity: usize,
    frame_token_count: usize,
    dropped_frames: usize,
    temporal_offset: u32,
    next_frame: usize,
    next_seq: u64,
    d_k: usize,
    d_v: usize,
}

impl KvCache {
    pub fn new(window_capacity: usize, frame_token_count: usize, d_k: usize, d_v: usize) -> Result<Self> {
        for (name, v) in [
            ("window capacity", window_capacity),
            ("frame token count", frame_token_count),
            ("d_k", d_k),
            ("d_v", d_v),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        Ok(Self {
            anchors: Vec::new(),
            anchors_set: false,
            frames: VecDeque::new(),
            window_capacity,
            frame_token_count,
            dropped_frames: 0,
            temporal_offset: 0,
            next_frame: 1,
            next_seq: 0,
            d_k,
            d_v,
        })
    }

    /// Installs the prompt and conditioning rows. Allowed once per cache.
    pub fn set_anchors(&mut self, prompt: Vec<CacheEntry>, cond: Vec<CacheEntry>) -> Result<()> {
        if self.anchors_set {
            return Err(Error::AnchorsAlreadySet);
        }
        for (entries, want) in [(&prompt, Region::TextPrompt), (&cond, Region::ConditionImage)] {
            if let Some(bad) = entries.iter().find(|e| e.region != want) {
                return Err(Error::RegionMismatch {
                    expected: want.to_string(),
                    actual: bad.region,
                });
            }
            for e in entries.iter() {
                self.check_dims(e)?;
            }
        }
        self.anchors = prompt.into_iter().chain(cond).collect();
        self.anchors_set = true;
        self.next_seq = self
            .anchors
            .iter()
            .map(|e| e.pos.seq + 1)
            .max()
            .unwrap_or(0)
            .max(self.next_seq);
        Ok(())
    }

    pub(crate) fn check_dims(&self, e: &CacheEntry) -> Result<()> {
        if e.key.len() != self.d_k {
            return Err(Error::DimensionMismatch {
                what: "key",
                expected: self.d_k,
                actual: e.key.len(),
            });
        }
        if e.value.len() != self.d_v {
            return Err(Error::DimensionMismatch {
                what: "value",
                expected: self.d_v,
                actual: e.value.len(),
            });
        }
        Ok(())
    }

    pub fn anchors(&self) -> &[CacheEntry] {
        &self.anchors
    }

    pub fn anchors_set(&self) -> bool {
        self.anchors_set
    }

    pub fn frames(&self) -> &VecDeque<FrameCache> {
        &self.frames
    }

    pub(crate) fn frames_mut(&mut self) -> &mut VecDeque<FrameCache> {
        &mut self.frames
    }

    pub(crate) fn anchors_mut(&mut self) -> &mut [CacheEntry] {
        &mut self.anchors
    }

    pub fn window_capacity(&self) -> usize {
        self.window_capacity
    }

    /// `B_one`: tokens in one latent frame, and the history budget.
    pub fn frame_token_count(&self) -> usize {
        self.frame_token_count
    }

    /// Δ_t: frames evicted so far.
    pub fn dropped_frames(&self) -> usize {
        self.dropped_frames
    }

    /// Amount subtracted from every stored temporal index so far.
    pub fn temporal_offset(&self) -> u32 {
        self.temporal_offset
    }

    pub fn d_k(&self) -> usize {
        self.d_k
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    /// Index the next completed frame must carry.
    pub fn next_frame_index(&self) -> usize {
        self.next_frame
    }

    /// First 1D sequence index available to the frame being generated.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Temporal coordinate for generation-order frame `frame_index` under the current offset.
    pub fn temporal_position(&self, frame_index: usize) -> u32 {
        frame_index as u32 - self.temporal_offset
    }

    pub fn depth(&self) -> usize {
        self.frames.len()
    }

    /// Stored history rows, masked ones included.
    pub fn history_len(&self) -> usize {
        self.frames.iter().map(FrameCache::len).sum()
    }

    pub fn history_unmasked(&self) -> usize {
        self.frames.iter().map(FrameCache::unmasked_count).sum()
    }

    /// Rows resident in memory: anchors plus every stored history row.
    pub fn occupancy(&self) -> usize {
        self.anchors.len() + self.history_len()
    }

    /// Copy of the current state for readers that must not hold the writer.
    pub fn snapshot(&self) -> KvCache {
        self.clone()
    }

    pub fn iter_entries(&self) -> impl Iterator<Item = &CacheEntry> {
        self.anchors.iter().chain(self.frames.iter().flat_map(|f| f.entries.iter()))
    }

    pub(crate) fn iter_history_mut(&mut self) -> impl Iterator<Item = &mut CacheEntry> {
        self.frames.iter_mut().flat_map(|f| f.entries.iter_mut())
    }

    pub(crate) fn push_frame(&mut self, frame: FrameCache) {
        self.next_frame = frame.frame_index + 1;
        self.next_seq = self.next_seq.max(frame.entries.iter().map(|e| e.pos.seq + 1).max().unwrap_or(0));
        self.frames.push_back(frame);
    }

    /// Pops the `count` oldest frames, returning them.
    pub(crate) fn evict_oldest(&mut self, count: usize) -> Vec<FrameCache> {
        let n = count.min(self.frames.len());
        self.dropped_frames += n;
        self.frames.drain(..n).collect()
    }

    pub(crate) fn add_temporal_offset(&mut self, delta: u32) {
        self.temporal_offset += delta;
    }

    /// Reassigns history seq indices as the rank order of surviving rows,
    /// starting right after the anchors.
    pub(crate) fn renumber_seq(&mut self) {
        let mut seq = self.anchors.len() as u64;
        for e in self.iter_history_mut() {
            e.pos.seq = seq;
            seq += 1;
        }
        self.next_seq = seq;
    }

    pub(crate) fn reset_attn_mass(&mut self) {
        for e in self.anchors.iter_mut() {
            e.attn_mass = 0.0;
        }
        for e in self.iter_history_mut() {
            e.attn_mass = 0.0;
        }
    }

    pub fn snapshot_rows(&self) -> Vec<SnapshotRow> {
        self.iter_entries().map(SnapshotRow::from_entry).collect()
    }

    /// Line-oriented dump, one row per entry:
    /// `region frame_index seq t h w masked attn_mass`.
    pub fn to_snapshot_text(&self) -> String {
        let mut out = format!(
            "# packcache snapshot w={} b_one={} dropped={}\n",
            self.window_capacity, self.frame_token_count, self.dropped_frames
        );
        for row in self.snapshot_rows() {
            out.push_str(&row.to_string());
            out.push('\n');
        }
        out
    }
}

/// One line of the snapshot format.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRow {
    pub region: Region,
    pub pos: Position3D,
    pub masked: bool,
    pub attn_mass: f64,
}

impl SnapshotRow {
    pub fn from_entry(e: &CacheEntry) -> Self {
        Self {
            region: e.region,
            pos: e.pos,
            masked: e.masked,
            attn_mass: e.attn_mass,
        }
    }
}

impl fmt::Display for SnapshotRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {} {} {}",
            self.region.tag(),
            self.region.frame_index().unwrap_or(0),
            self.pos.seq,
            self.pos.t,
            self.pos.h,
            self.pos.w,
            u8::from(self.masked),
            self.attn_mass
        )
    }
}

/// Parses snapshot text; blank lines and `#` comments are skipped.
pub fn parse_snapshot(text: &str) -> Result<Vec<SnapshotRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|e| err(format!("`{s}`: {e}")));
        let frame = num(fields[1])? as usize;
        let region = match fields[0] {
            "frame" => Region::HistoryFrame(frame),
            tag => tag.parse().map_err(|_| err(format!("unknown region `{tag}`")))?,
        };
        let masked = match fields[6] {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("masked flag `{other}`"))),
        };
        let attn_mass = fields[7]
            .parse::<f64>()
            .map_err(|e| err(format!("`{}`: {e}", fields[7])))?;
        rows.push(SnapshotRow {
            region,
            pos: Position3D {
                seq: num(fields[2])?,
                t: num(fields[3])? as u32,
                h: num(fields[4])? as u32,
                w: num(fields[5])? as u32,
            },
            masked,
            attn_mass,
        });
    }
    Ok(rows)
}
