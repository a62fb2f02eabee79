//! Closed-form attended-key accounting per policy.
//!
//! Counts are per attention pass of one current-frame query: anchors, the
//! unmasked history rows visible at that frame, and the `N` current-frame
//! keys. A masking rate below one is folded in as expected counts, carried as
//! exact rationals. At `keep_prob = 1` the model is exact and agrees with the
//! simulator token for token.

use std::io::Write;

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};

use crate::alloc::{AllocationPlan, Fraction};
use crate::error::{Error, Result};
use crate::packer::{CachePolicy, PolicyKind};

/// Latent frames for a clip of `video_frames` frames at 4× temporal compression.
pub fn latent_frames_for_video(video_frames: usize) -> usize {
    video_frames / 4 + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostParams {
    /// Latent frames `T`.
    pub frames: usize,
    /// Tokens per latent frame `N` (= `B_one`).
    pub tokens: usize,
    pub window: usize,
    pub anchors: usize,
    pub keep_prob: Fraction,
}

impl CostParams {
    pub fn new(frames: usize, tokens: usize, window: usize, anchors: usize) -> Self {
        Self {
            frames,
            tokens,
            window,
            anchors,
            keep_prob: Fraction::from_integer(1.into()),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.tokens == 0 || self.window == 0 {
            return Err(Error::InvalidArgument("frames, tokens and window must be >= 1".into()));
        }
        let one = Fraction::from_integer(1.into());
        if self.keep_prob <= Fraction::zero() || self.keep_prob > one {
            return Err(Error::InvalidArgument(format!(
                "keep_prob must lie in (0,1], got {}",
                self.keep_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    pub policy: PolicyKind,
    /// Attended keys per query while generating frame `t = 1..T`.
    pub per_frame: Vec<Fraction>,
    pub cumulative: Vec<Fraction>,
    /// Resident rows after frame `t` completes (masked rows included).
    pub occupancy: Vec<Fraction>,
}

impl CostTable {
    pub fn total(&self) -> &Fraction {
        self.cumulative.last().expect("at least one frame")
    }

    pub fn last(&self) -> &Fraction {
        self.per_frame.last().expect("at least one frame")
    }

    /// `frame,attended_keys,cumulative,occupancy`; integral values print without a denominator.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame", "attended_keys", "cumulative", "occupancy"])?;
        for (i, ((a, c), o)) in self
            .per_frame
            .iter()
            .zip(&self.cumulative)
            .zip(&self.occupancy)
            .enumerate()
        {
            w.write_record([(i + 1).to_string(), a.to_string(), c.to_string(), o.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn int(n: usize) -> Fraction {
    Fraction::from_integer(BigInt::from(n))
}

/// Clip to supply, then hand the shortfall to the nearest frames first.
fn reflow(budgets: &[usize], supply: &[Fraction]) -> Vec<Fraction> {
    let mut kept: Vec<Fraction> = budgets
        .iter()
        .zip(supply)
        .map(|(&b, s)| if int(b) < *s { int(b) } else { s.clone() })
        .collect();
    let mut surplus: Fraction = budgets.iter().zip(&kept).map(|(&b, k)| int(b) - k).sum();
    for (k, s) in kept.iter_mut().zip(supply) {
        if surplus.is_zero() {
            break;
        }
        let room = s - &*k;
        let add = if room < surplus { room } else { surplus.clone() };
        *k += &add;
        surplus -= add;
    }
    kept
}

pub fn cost_model(policy: &CachePolicy, params: &CostParams) -> Result<CostTable> {
    params.validate()?;
    let n = int(params.tokens);
    let anchors = int(params.anchors);
    let supply = &n * &params.keep_prob;

    let mut per_frame = Vec::with_capacity(params.frames);
    let mut occupancy = Vec::with_capacity(params.frames);
    // Visible (unmasked) rows and resident rows per history frame, newest first.
    let mut visible: Vec<Fraction> = Vec::new();
    let mut resident: Vec<Fraction> = Vec::new();

    let window = policy.active_window(params.window);
    let plan = match policy.kind {
        PolicyKind::PackCache => Some(AllocationPlan::build(
            window,
            &policy.plan_source,
            &policy.quota,
            params.tokens,
        )?),
        PolicyKind::SlidingWindow => Some(AllocationPlan::build(
            1,
            &Default::default(),
            &Default::default(),
            params.tokens,
        )?),
        PolicyKind::Full => None,
    };

    for _ in 0..params.frames {
        let history: Fraction = visible.iter().sum();
        per_frame.push(&anchors + history + &n);

        visible.insert(0, supply.clone());
        resident.insert(0, n.clone());
        if let Some(plan) = &plan {
            visible.truncate(window);
            resident.truncate(window);
            if visible.len() == window {
                visible = reflow(&plan.token_budgets, &visible);
                resident = visible.clone();
            }
        }
        occupancy.push(&anchors + resident.iter().sum::<Fraction>());
    }

    let mut cumulative = Vec::with_capacity(per_frame.len());
    let mut acc = Fraction::zero();
    for a in &per_frame {
        acc += a;
        cumulative.push(acc.clone());
    }
    Ok(CostTable {
        policy: policy.kind,
        per_frame,
        cumulative,
        occupancy,
    })
}

/// Full-cache over PackCache: cumulative and last-frame attended-key ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupProxy {
    pub total_ratio: Fraction,
    pub last_ratio: Fraction,
}

impl SpeedupProxy {
    pub fn compute(params: &CostParams, pack: &CachePolicy) -> Result<Self> {
        let full = cost_model(&CachePolicy::full(), params)?;
        let packed = cost_model(pack, params)?;
        Ok(Self {
            total_ratio: full.total() / packed.total(),
            last_ratio: full.last() / packed.last(),
        })
    }

    pub fn total_f64(&self) -> f64 {
        self.total_ratio.to_f64().unwrap_or(f64::NAN)
    }

    pub fn last_f64(&self) -> f64 {
        self.last_ratio.to_f64().unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::frac;

    #[test]
    fn full_closed_form_sum() {
        let p = CostParams::new(13, 4084, 4, 4333);
        let t = cost_model(&CachePolicy::full(), &p).unwrap();
        let want: usize = (1..=13).map(|t| 4333 + (t - 1) * 4084 + 4084).sum();
        assert_eq!(*t.total(), int(want));
        assert_eq!(*t.total(), int(427_973));
    }

    #[test]
    fn pack_constant_after_fill() {
        let p = CostParams::new(13, 4084, 4, 4333);
        let t = cost_model(&CachePolicy::pack_cache(), &p).unwrap();
        for (i, a) in t.per_frame.iter().enumerate() {
            let frame = i + 1;
            let want = if frame <= 4 { 4333 + frame * 4084 } else { 4333 + 2 * 4084 };
            assert_eq!(*a, int(want), "frame {frame}");
        }
        for o in &t.occupancy[3..] {
            assert_eq!(*o, int(4333 + 4084));
        }
    }

    #[test]
    fn sliding_is_one_frame() {
        let p = CostParams::new(5, 10, 4, 3);
        let t = cost_model(&CachePolicy::sliding_window(), &p).unwrap();
        let want: Vec<Fraction> = [13, 23, 23, 23, 23].iter().map(|&x| int(x)).collect();
        assert_eq!(t.per_frame, want);
    }

    #[test]
    fn half_keep_prob_expected_counts() {
        let mut p = CostParams::new(3, 16, 2, 0);
        p.keep_prob = frac(1, 2);
        let full = cost_model(&CachePolicy::full(), &p).unwrap();
        assert_eq!(full.per_frame, vec![int(16), int(24), int(32)]);
        assert_eq!(full.occupancy, vec![int(16), int(32), int(48)]);
        let pack = cost_model(&CachePolicy::pack_cache(), &p).unwrap();
        // After frame 2 the plan is [8, 8] with supplies [8, 8].
        assert_eq!(pack.per_frame, vec![int(16), int(24), int(32)]);
        assert_eq!(pack.occupancy[1], int(16));
    }

    #[test]
    fn long_clip_ratios() {
        let p = CostParams::new(13, 4084, 4, 4333);
        let s = SpeedupProxy::compute(&p, &CachePolicy::pack_cache()).unwrap();
        assert_eq!(s.total_ratio, frac(427_973, 170_681));
        assert_eq!(s.last_ratio, frac(57_425, 12_501));
    }

    #[test]
    fn video_to_latent() {
        assert_eq!(latent_frames_for_video(24), 7);
        assert_eq!(latent_frames_for_video(48), 13);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = CostParams::new(0, 4, 2, 0);
        assert!(cost_model(&CachePolicy::full(), &p).is_err());
        p.frames = 2;
        p.keep_prob = frac(0, 1);
        assert!(cost_model(&CachePolicy::full(), &p).is_err());
    }
}
