//! Mixed 1D/3D rotary position embedding and temporal rebasing.
//!
//! A head vector is split into three contiguous blocks, one per axis
//! (`t`, `h`, `w`), each made of `dims_axis` interleaved rotation pairs.
//! Coordinates are multiplied by the per-axis scale before rotation.

use std::fmt;
use std::str::FromStr;

use crate::cache::Position3D;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RopeConfig {
    pub head_dim: usize,
    pub scale_t: u32,
    pub scale_h: u32,
    pub scale_w: u32,
    pub dims_t: usize,
    pub dims_h: usize,
    pub dims_w: usize,
    pub theta_base: f64,
    /// Rotate text-prompt tokens by their 1D sequence index instead of `(t,h,w)`.
    pub text_1d: bool,
}

impl Default for RopeConfig {
    fn default() -> Self {
        Self::for_head_dim(16).expect("16 is a valid head dim")
    }
}

impl RopeConfig {
    /// `(4, 8, 8)` coordinate scaling; a quarter of the pairs go to time and
    /// the spatial axes split the rest.
    pub fn for_head_dim(head_dim: usize) -> Result<Self> {
        if head_dim < 6 || !head_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "head_dim must be even and >= 6, got {head_dim}"
            )));
        }
        let half = head_dim / 2;
        let spatial = (3 * half / 8).max(1);
        let cfg = Self {
            head_dim,
            scale_t: 4,
            scale_h: 8,
            scale_w: 8,
            dims_t: half - 2 * spatial,
            dims_h: spatial,
            dims_w: spatial,
            theta_base: 10_000.0,
            text_1d: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_dim == 0 || !self.head_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("head_dim {} must be even", self.head_dim)));
        }
        if self.dims_t + self.dims_h + self.dims_w != self.head_dim / 2 {
            return Err(Error::InvalidArgument(format!(
                "axis dims {}+{}+{} must equal head_dim/2 = {}",
                self.dims_t,
                self.dims_h,
                self.dims_w,
                self.head_dim / 2
            )));
        }
        if self.scale_t == 0 || self.scale_h == 0 || self.scale_w == 0 {
            return Err(Error::InvalidArgument("coordinate scales must be >= 1".into()));
        }
        if !(self.theta_base > 0.0 && self.theta_base.is_finite()) {
            return Err(Error::InvalidArgument("theta_base must be positive".into()));
        }
        Ok(())
    }

    fn check_len(&self, vec: &[f64]) -> Result<()> {
        if vec.len() != self.head_dim {
            return Err(Error::DimensionMismatch {
                what: "rotary input",
                expected: self.head_dim,
                actual: vec.len(),
            });
        }
        Ok(())
    }

    /// 3D rotation at `pos`.
    pub fn rotate(&self, vec: &[f64], pos: &Position3D) -> Result<Vec<f64>> {
        self.check_len(vec)?;
        let mut out = vec.to_vec();
        self.rotate_coords_in_place(&mut out, pos.t as f64, pos.h as f64, pos.w as f64);
        Ok(out)
    }

    /// 1D rotation over all pairs by the global sequence index.
    pub fn rotate_1d(&self, vec: &[f64], seq: u64) -> Result<Vec<f64>> {
        self.check_len(vec)?;
        let mut out = vec.to_vec();
        self.rotate_1d_in_place(&mut out, seq as f64);
        Ok(out)
    }

    /// 3D rotation at real-valued (possibly negative) unscaled coordinates.
    pub fn rotate_coords_in_place(&self, vec: &mut [f64], t: f64, h: f64, w: f64) {
        debug_assert_eq!(vec.len(), self.head_dim);
        let mut offset = 0;
        for (coord, scale, dims) in [
            (t, self.scale_t, self.dims_t),
            (h, self.scale_h, self.dims_h),
            (w, self.scale_w, self.dims_w),
        ] {
            let block = &mut vec[offset..offset + 2 * dims];
            rotate_block(block, coord * scale as f64, self.theta_base);
            offset += 2 * dims;
        }
    }

    pub fn rotate_1d_in_place(&self, vec: &mut [f64], seq: f64) {
        debug_assert_eq!(vec.len(), self.head_dim);
        rotate_block(vec, seq, self.theta_base);
    }
}

/// Rotates interleaved pairs `(2i, 2i+1)` by `coord · base^{-i/n}`.
fn rotate_block(block: &mut [f64], coord: f64, base: f64) {
    let n = block.len() / 2;
    if n == 0 || coord == 0.0 {
        return;
    }
    for i in 0..n {
        let freq = base.powf(-(i as f64) / n as f64);
        let (sin, cos) = (coord * freq).sin_cos();
        let (a, b) = (block[2 * i], block[2 * i + 1]);
        block[2 * i] = a * cos - b * sin;
        block[2 * i + 1] = a * sin + b * cos;
    }
}

/// Temporal rebase: `(t, h, w) ← (t − Δ_t, h, w)`. Spatial and sequence
/// components are left untouched.
pub fn rebase(positions: &[Position3D], delta_t: u32) -> Result<Vec<Position3D>> {
    positions
        .iter()
        .map(|p| {
            let t = p.t.checked_sub(delta_t).ok_or(Error::NegativeTemporalIndex { t: p.t, delta_t })?;
            Ok(Position3D { t, ..*p })
        })
        .collect()
}

/// Assigns raster `(h, w)` coordinates by order of appearance, closing the
/// spatial gaps left by removed tokens.
pub fn reindex_spatial(positions: &[Position3D], grid_w: usize) -> Vec<Position3D> {
    let grid_w = grid_w.max(1);
    positions
        .iter()
        .enumerate()
        .map(|(rank, p)| Position3D {
            h: (rank / grid_w) as u32,
            w: (rank % grid_w) as u32,
            ..*p
        })
        .collect()
}

/// How positions are rewritten when the window advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RebaseMode {
    /// Shift `t` by the dropped-frame count, keep `(h, w)`.
    #[default]
    SpatialPreserving,
    /// Shift `t` and re-raster `(h, w)` over the surviving tokens of each frame.
    FullyContinuous,
    /// Leave positions as generated.
    None,
}

impl fmt::Display for RebaseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RebaseMode::SpatialPreserving => "spatial_preserving",
            RebaseMode::FullyContinuous => "fully_continuous",
            RebaseMode::None => "none",
        })
    }
}

impl FromStr for RebaseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial_preserving" => Ok(RebaseMode::SpatialPreserving),
            "fully_continuous" => Ok(RebaseMode::FullyContinuous),
            "none" => Ok(RebaseMode::None),
            other => Err(Error::InvalidArgument(format!("unknown rebase mode `{other}`"))),
        }
    }
}
