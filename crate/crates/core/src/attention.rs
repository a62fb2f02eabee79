//! Masked-cache attention with intra-frame bidirectional, inter-frame causal
//! visibility, and per-region attention statistics.
//!
//! Weights are materialized densely. Masked cache rows stay in the key axis
//! with `-inf` logits, which is what makes packing (physical removal)
//! observably equivalent to masking.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;

use ndarray::{Array2, ArrayView2};

use crate::cache::{CacheEntry, KvCache, Position3D, Region};
use crate::error::{Error, Result};
use crate::rope::RopeConfig;

/// What the visibility rule and the rotary embedding need to know about a token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenMeta {
    pub region: Region,
    /// Generation frame, `None` for anchors.
    pub frame: Option<usize>,
    pub pos: Position3D,
    pub masked: bool,
}

impl TokenMeta {
    pub fn from_entry(e: &CacheEntry) -> Self {
        Self {
            region: e.region,
            frame: e.region.frame_index(),
            pos: e.pos,
            masked: e.masked,
        }
    }

    pub fn current(frame: usize, pos: Position3D) -> Self {
        Self {
            region: Region::CurrentFrame,
            frame: Some(frame),
            pos,
            masked: false,
        }
    }
}

/// Dense visibility matrix, row-major `[query, key]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    visible: Vec<bool>,
}

impl AttentionMask {
    pub fn build(queries: &[TokenMeta], keys: &[TokenMeta]) -> Self {
        let mut visible = Vec::with_capacity(queries.len() * keys.len());
        for q in queries {
            for k in keys {
                visible.push(Self::pair_visible(q, k));
            }
        }
        Self {
            rows: queries.len(),
            cols: keys.len(),
            visible,
        }
    }

    /// Anchors are always visible; frames see their own frame and earlier ones.
    pub fn pair_visible(query: &TokenMeta, key: &TokenMeta) -> bool {
        if key.masked {
            return false;
        }
        match (query.frame, key.frame) {
            (_, None) => true,
            (Some(qf), Some(kf)) => kf <= qf,
            (None, Some(_)) => false,
        }
    }

    pub fn is_visible(&self, row: usize, col: usize) -> bool {
        self.visible[row * self.cols + col]
    }

    pub fn visible_in_row(&self, row: usize) -> usize {
        self.visible[row * self.cols..(row + 1) * self.cols]
            .iter()
            .filter(|&&v| v)
            .count()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// `[n_queries, d_v]`, heads concatenated.
    pub output: Array2<f64>,
    /// `[n_queries, n_keys]`, averaged over heads.
    pub weights: Array2<f64>,
    pub mask: AttentionMask,
}

fn rotate_token(rope: &RopeConfig, head: &mut [f64], meta: &TokenMeta) {
    if rope.text_1d && meta.region == Region::TextPrompt {
        rope.rotate_1d_in_place(head, meta.pos.seq as f64);
    } else {
        rope.rotate_coords_in_place(head, meta.pos.t as f64, meta.pos.h as f64, meta.pos.w as f64);
    }
}

fn rotated(rope: &RopeConfig, x: ArrayView2<f64>, meta: &[TokenMeta], heads: usize) -> Array2<f64> {
    let mut out = x.to_owned();
    let hd = rope.head_dim;
    for (mut row, m) in out.rows_mut().into_iter().zip(meta) {
        let row = row.as_slice_mut().expect("owned rows are contiguous");
        for h in 0..heads {
            rotate_token(rope, &mut row[h * hd..(h + 1) * hd], m);
        }
    }
    out
}

/// Multi-head scaled dot-product attention with rotary positions and the
/// frame-causal mask. Head count is `d_k / rope.head_dim`.
pub fn dense_attention(
    queries: ArrayView2<f64>,
    query_meta: &[TokenMeta],
    keys: ArrayView2<f64>,
    values: ArrayView2<f64>,
    key_meta: &[TokenMeta],
    rope: &RopeConfig,
) -> Result<AttentionOutput> {
    let (n_q, d_k) = queries.dim();
    let n_k = keys.nrows();
    if n_k == 0 {
        return Err(Error::EmptyKeySet);
    }
    let hd = rope.head_dim;
    if d_k == 0 || d_k % hd != 0 {
        return Err(Error::DimensionMismatch {
            what: "query width (multiple of head_dim)",
            expected: hd,
            actual: d_k,
        });
    }
    let heads = d_k / hd;
    for (what, expected, actual) in [
        ("key width", d_k, keys.ncols()),
        ("query metadata", n_q, query_meta.len()),
        ("key metadata", n_k, key_meta.len()),
        ("value rows", n_k, values.nrows()),
    ] {
        if expected != actual {
            return Err(Error::DimensionMismatch { what, expected, actual });
        }
    }
    let d_v = values.ncols();
    if !d_v.is_multiple_of(heads) {
        return Err(Error::DimensionMismatch {
            what: "value width (multiple of heads)",
            expected: heads,
            actual: d_v,
        });
    }
    let vd = d_v / heads;

    let mask = AttentionMask::build(query_meta, key_meta);
    for row in 0..n_q {
        if mask.visible_in_row(row) == 0 {
            return Err(Error::NoVisibleKeys { row });
        }
    }

    let q_rot = rotated(rope, queries, query_meta, heads);
    let k_rot = rotated(rope, keys, key_meta, heads);
    let scale = 1.0 / (hd as f64).sqrt();

    let q_buf = q_rot.as_slice().expect("owned arrays are standard layout");
    let k_buf = k_rot.as_slice().expect("owned arrays are standard layout");
    let mut output = Array2::<f64>::zeros((n_q, d_v));
    let mut weights = Array2::<f64>::zeros((n_q, n_k));
    let mut logits = vec![0.0f64; n_k];
    for i in 0..n_q {
        for h in 0..heads {
            let qh = &q_buf[i * d_k + h * hd..i * d_k + (h + 1) * hd];
            let mut max = f64::NEG_INFINITY;
            for (j, l) in logits.iter_mut().enumerate() {
                *l = if mask.is_visible(i, j) {
                    let kh = &k_buf[j * d_k + h * hd..j * d_k + (h + 1) * hd];
                    qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f64>() * scale
                } else {
                    f64::NEG_INFINITY
                };
                max = max.max(*l);
            }
            let mut denom = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                denom += *l;
            }
            for (j, l) in logits.iter().enumerate() {
                let w = l / denom;
                if w == 0.0 {
                    continue;
                }
                weights[[i, j]] += w / heads as f64;
                for c in 0..vd {
                    output[[i, h * vd + c]] += w * values[[j, h * vd + c]];
                }
            }
        }
    }
    Ok(AttentionOutput { output, weights, mask })
}

/// Keys, values and positions of the frame being generated.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBlock {
    pub frame_index: usize,
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
    pub positions: Vec<Position3D>,
}

impl FrameBlock {
    pub fn meta(&self) -> Vec<TokenMeta> {
        self.positions
            .iter()
            .map(|p| TokenMeta::current(self.frame_index, *p))
            .collect()
    }
}

/// Column ranges of each region along the key axis.
pub type KeyLayout = Vec<(Region, Range<usize>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct CacheAttention {
    pub output: Array2<f64>,
    pub weights: Array2<f64>,
    pub layout: KeyLayout,
    /// Keys visible to a current-frame query (masked rows excluded).
    pub attended_keys: usize,
}

/// Attention of current-frame queries over anchors, cached frames and the
/// current frame itself, in that column order.
pub fn masked_attention(
    queries: ArrayView2<f64>,
    cache: &KvCache,
    current: &FrameBlock,
    rope: &RopeConfig,
) -> Result<CacheAttention> {
    let n_cur = current.positions.len();
    if current.keys.nrows() != n_cur || current.values.nrows() != n_cur {
        return Err(Error::DimensionMismatch {
            what: "current frame rows",
            expected: n_cur,
            actual: current.keys.nrows().min(current.values.nrows()),
        });
    }
    if queries.nrows() != n_cur {
        return Err(Error::DimensionMismatch {
            what: "query rows",
            expected: n_cur,
            actual: queries.nrows(),
        });
    }
    for (what, expected, actual) in [
        ("query width", cache.d_k(), queries.ncols()),
        ("current key width", cache.d_k(), current.keys.ncols()),
        ("current value width", cache.d_v(), current.values.ncols()),
    ] {
        if expected != actual {
            return Err(Error::DimensionMismatch { what, expected, actual });
        }
    }

    let n_cached = cache.occupancy();
    let n_k = n_cached + n_cur;
    let mut keys = Array2::<f64>::zeros((n_k, cache.d_k()));
    let mut values = Array2::<f64>::zeros((n_k, cache.d_v()));
    let mut key_meta = Vec::with_capacity(n_k);
    let mut layout: KeyLayout = Vec::new();

    let mut col = 0;
    let mut push_region = |region: Region, entries: &mut dyn Iterator<Item = &CacheEntry>,
                           keys: &mut Array2<f64>,
                           values: &mut Array2<f64>,
                           key_meta: &mut Vec<TokenMeta>| {
        let start = col;
        for e in entries {
            keys.row_mut(col).assign(&ndarray::aview1(&e.key));
            values.row_mut(col).assign(&ndarray::aview1(&e.value));
            key_meta.push(TokenMeta::from_entry(e));
            col += 1;
        }
        if col > start {
            layout.push((region, start..col));
        }
    };
    for region in [Region::TextPrompt, Region::ConditionImage] {
        let mut it = cache.anchors().iter().filter(|e| e.region == region);
        push_region(region, &mut it, &mut keys, &mut values, &mut key_meta);
    }
    for frame in cache.frames() {
        let mut it = frame.entries.iter();
        push_region(
            Region::HistoryFrame(frame.frame_index),
            &mut it,
            &mut keys,
            &mut values,
            &mut key_meta,
        );
    }
    keys.slice_mut(ndarray::s![n_cached.., ..]).assign(&current.keys);
    values.slice_mut(ndarray::s![n_cached.., ..]).assign(&current.values);
    let query_meta = current.meta();
    key_meta.extend(query_meta.iter().copied());
    if n_cur > 0 {
        layout.push((Region::CurrentFrame, n_cached..n_k));
    }

    let out = dense_attention(queries, &query_meta, keys.view(), values.view(), &key_meta, rope)?;
    let attended_keys = if n_cur > 0 { out.mask.visible_in_row(0) } else { 0 };
    Ok(CacheAttention {
        output: out.output,
        weights: out.weights,
        layout,
        attended_keys,
    })
}

/// Adds each cached key's received attention (column sum over query rows) to
/// its `attn_mass`. Columns follow the order used by [`masked_attention`].
pub fn accumulate_attn_mass(cache: &mut KvCache, weights: &Array2<f64>) -> Result<()> {
    let n_cached = cache.occupancy();
    if weights.ncols() < n_cached {
        return Err(Error::DimensionMismatch {
            what: "weight columns",
            expected: n_cached,
            actual: weights.ncols(),
        });
    }
    let sums: Vec<f64> = (0..n_cached).map(|j| weights.column(j).sum()).collect();
    let mut it = sums.into_iter();
    for e in cache.anchors_mut() {
        e.attn_mass += it.next().expect("column per anchor");
    }
    for e in cache.iter_history_mut() {
        e.attn_mass += it.next().expect("column per history row");
    }
    Ok(())
}

/// Mean attention per region for one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    pub step: usize,
    pub layer: usize,
    pub means: BTreeMap<Region, f64>,
}

impl RegionStats {
    /// History-frame means keyed by temporal distance from `current_frame`, nearest first.
    pub fn history_by_distance(&self, current_frame: usize) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = self
            .means
            .iter()
            .filter_map(|(r, m)| r.frame_index().map(|f| (current_frame - f, *m)))
            .collect();
        v.sort_by_key(|(d, _)| *d);
        v
    }

    /// CSV rows `step,layer,region,mean`, no header.
    pub fn write_csv<W: Write>(&self, out: &mut csv::Writer<W>) -> Result<()> {
        for (region, mean) in &self.means {
            out.write_record([
                self.step.to_string(),
                self.layer.to_string(),
                region.to_string(),
                mean.to_string(),
            ])?;
        }
        Ok(())
    }
}

/// Averages the weights over every query row and every column of each region.
/// The ranges must partition `0..weights.ncols()`.
pub fn region_stats(weights: &Array2<f64>, layout: &[(Region, Range<usize>)], step: usize, layer: usize) -> Result<RegionStats> {
    let n_cols = weights.ncols();
    let mut ranges: Vec<&(Region, Range<usize>)> = layout.iter().collect();
    ranges.sort_by_key(|(_, r)| (r.start, r.end));
    let mut next = 0;
    for (_, r) in &ranges {
        if r.start < next {
            return Err(Error::OverlappingRanges { column: r.start });
        }
        if r.start > next {
            return Err(Error::UncoveredColumn { column: next });
        }
        next = r.end;
    }
    if next < n_cols {
        return Err(Error::UncoveredColumn { column: next });
    }
    if next > n_cols {
        return Err(Error::DimensionMismatch {
            what: "layout width",
            expected: n_cols,
            actual: next,
        });
    }
    let n_rows = weights.nrows().max(1) as f64;
    let mut means = BTreeMap::new();
    for (region, r) in layout {
        if r.is_empty() {
            continue;
        }
        let total: f64 = weights.slice(ndarray::s![.., r.clone()]).sum();
        *means.entry(*region).or_insert(0.0) += total / (n_rows * r.len() as f64);
    }
    Ok(RegionStats { step, layer, means })
}
