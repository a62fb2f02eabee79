//! Per-frame budget allocation from a temporal decay kernel.
//!
//! Fractions are exact rationals so that plans sum to one without rounding
//! slack; only the general-ρ kernel evaluation is offered in `f64` as well.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Fraction = BigRational;

pub fn frac(numer: i64, denom: i64) -> Fraction {
    BigRational::new(BigInt::from(numer), BigInt::from(denom))
}

/// Exponential decay `μ_d = C ρ^d`, with `ρ = e^{-α}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayParams {
    pub rho: f64,
    pub alpha: f64,
    /// Normalization constant. Cancels out of every allocation.
    pub c: f64,
}

impl DecayParams {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidArgument(format!("rho must lie in (0,1), got {rho}")));
        }
        Ok(Self {
            rho,
            alpha: -rho.ln(),
            c: 1.0,
        })
    }

    pub fn from_alpha(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
        }
        Ok(Self {
            rho: (-alpha).exp(),
            alpha,
            c: 1.0,
        })
    }

    /// The one-frame half-life used for deployment.
    pub fn half_life() -> Self {
        Self::new(0.5).expect("0.5 is in range")
    }
}

/// `g(d) = ρ^d` for history distance `d ≥ 1`.
pub fn decay_kernel(d: usize, params: &DecayParams) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidArgument("history distance starts at 1".into()));
    }
    Ok(params.rho.powi(d as i32))
}

/// `b_d = g(d) / Σ_j g(j)` over a window of `w` frames.
pub fn normalized_allocation(w: usize, params: &DecayParams) -> Result<Vec<f64>> {
    if w == 0 {
        return Err(Error::InvalidArgument("window must be >= 1".into()));
    }
    let g: Vec<f64> = (1..=w).map(|d| params.rho.powi(d as i32)).collect();
    let total: f64 = g.iter().sum();
    Ok(g.into_iter().map(|x| x / total).collect())
}

/// Exact counterpart of [`normalized_allocation`] for a rational `ρ`.
pub fn normalized_allocation_exact(w: usize, rho: &Fraction) -> Result<Vec<Fraction>> {
    if w == 0 {
        return Err(Error::InvalidArgument("window must be >= 1".into()));
    }
    if !rho.is_positive() || *rho >= Fraction::one() {
        return Err(Error::InvalidArgument(format!("rho must lie in (0,1), got {rho}")));
    }
    let mut g = Vec::with_capacity(w);
    let mut p = rho.clone();
    for _ in 0..w {
        g.push(p.clone());
        p *= rho;
    }
    let total: Fraction = g.iter().sum();
    Ok(g.into_iter().map(|x| x / &total).collect())
}

/// Half-life allocation `b_d = 2^{-min(d, W-1)}`; the oldest two frames share the tail.
pub fn closed_form_allocation(w: usize) -> Result<Vec<Fraction>> {
    if w == 0 {
        return Err(Error::InvalidArgument("window must be >= 1".into()));
    }
    Ok((1..=w)
        .map(|d| {
            let exp = d.min(w - 1);
            Fraction::new(BigInt::one(), BigInt::one() << exp)
        })
        .collect())
}

fn check_partition(fractions: &[Fraction]) -> Result<()> {
    if fractions.is_empty() {
        return Err(Error::InvalidArgument("empty fraction vector".into()));
    }
    if fractions.iter().any(Signed::is_negative) {
        return Err(Error::InvalidArgument("negative fraction".into()));
    }
    let total: Fraction = fractions.iter().sum();
    if !total.is_one() {
        return Err(Error::InvalidArgument(format!("fractions sum to {total}, not 1")));
    }
    Ok(())
}

/// Raises entries to their floors and deducts the raised mass from the
/// unconstrained entries in proportion to their size, repeating until no
/// unconstrained entry falls below its floor. Requires `Σ floors ≤ 1`.
pub(crate) fn apply_floors(fractions: &[Fraction], floors: &[Fraction]) -> Vec<Fraction> {
    debug_assert_eq!(fractions.len(), floors.len());
    let n = fractions.len();
    let mut pinned = vec![false; n];
    for (i, (f, lo)) in fractions.iter().zip(floors).enumerate() {
        pinned[i] = f < lo;
    }
    loop {
        let pinned_mass: Fraction = (0..n).filter(|&i| pinned[i]).map(|i| floors[i].clone()).sum();
        let free_mass: Fraction = (0..n).filter(|&i| !pinned[i]).map(|i| fractions[i].clone()).sum();
        let remaining = Fraction::one() - pinned_mass;
        let out: Vec<Fraction> = (0..n)
            .map(|i| {
                if pinned[i] {
                    floors[i].clone()
                } else if free_mass.is_zero() {
                    Fraction::zero()
                } else {
                    &fractions[i] * &remaining / &free_mass
                }
            })
            .collect();
        let newly: Vec<usize> = (0..n).filter(|&i| !pinned[i] && out[i] < floors[i]).collect();
        if newly.is_empty() {
            return out;
        }
        for i in newly {
            pinned[i] = true;
        }
    }
}

/// Applies a uniform minimum quota. When `W·b_min > 1` the window is cut to
/// the largest `W'` with `W'·b_min ≤ 1`, dropping the oldest frames first and
/// rescaling the survivors before the floor is applied.
pub fn apply_min_quota(fractions: &[Fraction], b_min: &Fraction) -> Result<Vec<Fraction>> {
    check_partition(fractions)?;
    if b_min.is_negative() || *b_min > Fraction::one() {
        return Err(Error::InvalidArgument(format!("b_min must lie in [0,1], got {b_min}")));
    }
    let keep = truncated_window(fractions.len(), b_min);
    let head = &fractions[..keep];
    let head_mass: Fraction = head.iter().sum();
    let rescaled: Vec<Fraction> = head.iter().map(|f| f / &head_mass).collect();
    let floors = vec![b_min.clone(); keep];
    Ok(apply_floors(&rescaled, &floors))
}

fn truncated_window(w: usize, b_min: &Fraction) -> usize {
    let mut keep = w;
    while keep > 1 && Fraction::from_integer(BigInt::from(keep)) * b_min > Fraction::one() {
        keep -= 1;
    }
    keep
}

/// Integer budgets `t_d = ⌊B_one·b_d⌋`, with the leftover tokens handed one
/// each to the most recent frames whose exact share was rounded down.
pub fn token_budgets(fractions: &[Fraction], b_one: usize) -> Result<Vec<usize>> {
    check_partition(fractions)?;
    if b_one == 0 {
        return Err(Error::InvalidArgument("b_one must be >= 1".into()));
    }
    let total = Fraction::from_integer(BigInt::from(b_one));
    let exact: Vec<Fraction> = fractions.iter().map(|f| f * &total).collect();
    let mut budgets: Vec<usize> = exact
        .iter()
        .map(|x| x.floor().to_integer().to_usize().expect("budget fits usize"))
        .collect();
    let mut residual = b_one - budgets.iter().sum::<usize>();
    for (t, x) in budgets.iter_mut().zip(&exact) {
        if residual == 0 {
            break;
        }
        if !x.is_integer() {
            *t += 1;
            residual -= 1;
        }
    }
    debug_assert_eq!(residual, 0);
    Ok(budgets)
}

/// Where the unfloored fractions come from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum PlanSource {
    /// `2^{-min(d, W-1)}`.
    #[default]
    ClosedForm,
    /// Normalized `ρ^d` for an arbitrary decay factor.
    Decay(f64),
}

impl PlanSource {
    pub fn fractions(&self, w: usize) -> Result<Vec<Fraction>> {
        match self {
            PlanSource::ClosedForm => closed_form_allocation(w),
            PlanSource::Decay(rho) => {
                DecayParams::new(*rho)?;
                let exact = BigRational::from_float(*rho)
                    .ok_or_else(|| Error::InvalidArgument(format!("rho {rho} is not finite")))?;
                normalized_allocation_exact(w, &exact)
            }
        }
    }
}

impl fmt::Display for PlanSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanSource::ClosedForm => f.write_str("closed_form"),
            PlanSource::Decay(rho) => write!(f, "rho:{rho}"),
        }
    }
}

/// Minimum-quota rule.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum QuotaRule {
    #[default]
    None,
    /// Uniform floor `b_min`, with FIFO truncation when `W·b_min > 1`.
    Strict(Fraction),
    /// A `k`-frame quota: the `k` most recent frames never drop below the
    /// tail share of the `k`-frame closed form, `2^{-(k-1)}`.
    FrameEquivalent(usize),
}

impl QuotaRule {
    /// The best setting from the quota ablation (a 3-frame quota).
    pub fn three_frame() -> Self {
        QuotaRule::FrameEquivalent(3)
    }

    /// Literal `b_min = k / W`.
    pub fn strict_frames(k: usize, w: usize) -> Self {
        QuotaRule::Strict(frac(k as i64, w as i64))
    }

    /// Active window after FIFO truncation.
    pub fn effective_window(&self, w: usize) -> usize {
        match self {
            QuotaRule::Strict(b) => truncated_window(w, b),
            _ => w,
        }
    }

    fn floor_value(&self) -> Fraction {
        match self {
            QuotaRule::None => Fraction::zero(),
            QuotaRule::Strict(b) => b.clone(),
            QuotaRule::FrameEquivalent(k) => {
                Fraction::new(BigInt::one(), BigInt::one() << k.saturating_sub(1))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            QuotaRule::Strict(b) if b.is_negative() || *b > Fraction::one() => Err(
                Error::InvalidArgument(format!("b_min must lie in [0,1], got {b}")),
            ),
            QuotaRule::FrameEquivalent(0) => {
                Err(Error::InvalidArgument("frame quota must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for QuotaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuotaRule::None => f.write_str("none"),
            QuotaRule::Strict(b) => write!(f, "strict:{b}"),
            QuotaRule::FrameEquivalent(k) => write!(f, "frame:{k}"),
        }
    }
}

/// Fractions and integer token budgets for each history distance `d = 1..W'`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    pub fractions: Vec<Fraction>,
    pub token_budgets: Vec<usize>,
    pub effective_window: usize,
    pub b_min: Fraction,
}

impl AllocationPlan {
    /// Builds the plan for a window of `w` frames and a history budget `b_one`.
    ///
    /// A strict quota that truncates the window regenerates the source
    /// fractions at the shorter window rather than rescaling a longer one.
    pub fn build(w: usize, source: &PlanSource, quota: &QuotaRule, b_one: usize) -> Result<Self> {
        quota.validate()?;
        let effective_window = quota.effective_window(w);
        let base = source.fractions(effective_window)?;
        let b_min = quota.floor_value();
        let fractions = match quota {
            QuotaRule::None => base,
            QuotaRule::Strict(b) => apply_min_quota(&base, b)?,
            QuotaRule::FrameEquivalent(k) => {
                let floors: Vec<Fraction> = (1..=effective_window)
                    .map(|d| if d <= *k { b_min.clone() } else { Fraction::zero() })
                    .collect();
                apply_floors(&base, &floors)
            }
        };
        let token_budgets = token_budgets(&fractions, b_one)?;
        Ok(Self {
            fractions,
            token_budgets,
            effective_window,
            b_min,
        })
    }
}

impl fmt::Display for AllocationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b: Vec<String> = self.fractions.iter().map(ToString::to_string).collect();
        let t: Vec<String> = self.token_budgets.iter().map(ToString::to_string).collect();
        write!(f, "W={} b=[{}] t=[{}]", self.effective_window, b.join(","), t.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fr(v: &[(i64, i64)]) -> Vec<Fraction> {
        v.iter().map(|&(n, d)| frac(n, d)).collect()
    }

    #[test]
    fn decay_kernel_values() {
        let half = DecayParams::new(0.5).unwrap();
        assert_eq!(decay_kernel(1, &half).unwrap(), 0.5);
        assert_eq!(decay_kernel(3, &half).unwrap(), 0.125);
        let p = DecayParams::new(0.7).unwrap();
        let expected = (2.0 * 0.7f64.ln()).exp();
        assert!((decay_kernel(2, &p).unwrap() - expected).abs() < 1e-15);
        assert!((decay_kernel(2, &p).unwrap() - 0.49).abs() < 1e-15);
        assert!(decay_kernel(0, &p).is_err());
    }

    #[test]
    fn decay_params_alpha_consistent() {
        let p = DecayParams::new(0.3).unwrap();
        assert!((p.alpha + 0.3f64.ln()).abs() < 1e-12);
        let q = DecayParams::from_alpha(p.alpha).unwrap();
        assert!((q.rho - 0.3).abs() < 1e-12);
        assert!(DecayParams::new(1.0).is_err());
        assert!(DecayParams::new(0.0).is_err());
    }

    #[test]
    fn normalized_examples() {
        let half = DecayParams::half_life();
        let b = normalized_allocation(2, &half).unwrap();
        assert!((b[0] - 2.0 / 3.0).abs() < 1e-15 && (b[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(normalized_allocation(1, &DecayParams::new(0.9).unwrap()).unwrap(), vec![1.0]);
        let b3 = normalized_allocation(3, &half).unwrap();
        for (x, want) in b3.iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
            assert!((x - want).abs() < 1e-15);
        }
        assert_eq!(
            normalized_allocation_exact(3, &frac(1, 2)).unwrap(),
            fr(&[(4, 7), (2, 7), (1, 7)])
        );
    }

    #[test]
    fn closed_form_patterns() {
        assert_eq!(closed_form_allocation(1).unwrap(), fr(&[(1, 1)]));
        assert_eq!(closed_form_allocation(2).unwrap(), fr(&[(1, 2), (1, 2)]));
        assert_eq!(closed_form_allocation(3).unwrap(), fr(&[(1, 2), (1, 4), (1, 4)]));
        assert_eq!(
            closed_form_allocation(4).unwrap(),
            fr(&[(1, 2), (1, 4), (1, 8), (1, 8)])
        );
    }

    #[test]
    fn min_quota_zero_is_identity() {
        let f = closed_form_allocation(4).unwrap();
        assert_eq!(apply_min_quota(&f, &Fraction::zero()).unwrap(), f);
    }

    #[test]
    fn min_quota_truncates_window() {
        let f = closed_form_allocation(4).unwrap();
        assert_eq!(apply_min_quota(&f, &frac(3, 4)).unwrap(), fr(&[(1, 1)]));
    }

    #[test]
    fn min_quota_proportional_deduction() {
        // Floors the last two entries (raising them by 1/8 in total) and takes
        // that mass from 1/2 and 1/4 in ratio 2:1.
        let f = closed_form_allocation(4).unwrap();
        let out = apply_min_quota(&f, &frac(3, 16)).unwrap();
        assert_eq!(out, fr(&[(5, 12), (5, 24), (3, 16), (3, 16)]));
        assert!(out.iter().sum::<Fraction>().is_one());
    }

    #[test]
    fn min_quota_rejects_out_of_range() {
        let f = closed_form_allocation(2).unwrap();
        assert!(apply_min_quota(&f, &frac(5, 4)).is_err());
        assert!(apply_min_quota(&f, &frac(-1, 4)).is_err());
        assert!(apply_min_quota(&fr(&[(1, 2)]), &Fraction::zero()).is_err());
    }

    #[test]
    fn token_budget_examples() {
        assert_eq!(token_budgets(&closed_form_allocation(4).unwrap(), 16).unwrap(), vec![8, 4, 2, 2]);
        assert_eq!(token_budgets(&closed_form_allocation(3).unwrap(), 10).unwrap(), vec![5, 3, 2]);
        assert_eq!(token_budgets(&fr(&[(1, 1)]), 4084).unwrap(), vec![4084]);
    }

    #[test]
    fn plan_display() {
        let plan = AllocationPlan::build(4, &PlanSource::ClosedForm, &QuotaRule::None, 16).unwrap();
        assert_eq!(plan.to_string(), "W=4 b=[1/2,1/4,1/8,1/8] t=[8,4,2,2]");
    }

    #[test]
    fn strict_table_quota_truncates() {
        // b_min = 3/W literally: W'·3/12 ≤ 1 gives W' = 4.
        let q = QuotaRule::strict_frames(3, 12);
        assert_eq!(q.effective_window(12), 4);
        let plan = AllocationPlan::build(12, &PlanSource::ClosedForm, &q, 64).unwrap();
        assert_eq!(plan.effective_window, 4);
        assert_eq!(plan.fractions, fr(&[(1, 4), (1, 4), (1, 4), (1, 4)]));
    }

    #[test]
    fn frame_equivalent_quota() {
        let plan =
            AllocationPlan::build(4, &PlanSource::ClosedForm, &QuotaRule::three_frame(), 40).unwrap();
        assert_eq!(plan.fractions, fr(&[(2, 5), (1, 4), (1, 4), (1, 10)]));
        assert_eq!(plan.token_budgets, vec![16, 10, 10, 4]);
        // Already satisfied at W = 3.
        let plan3 =
            AllocationPlan::build(3, &PlanSource::ClosedForm, &QuotaRule::three_frame(), 16).unwrap();
        assert_eq!(plan3.fractions, closed_form_allocation(3).unwrap());
    }

    #[test]
    fn decay_source_matches_exact_half() {
        let a = PlanSource::Decay(0.5).fractions(5).unwrap();
        assert_eq!(a, normalized_allocation_exact(5, &frac(1, 2)).unwrap());
        assert!(PlanSource::Decay(1.5).fractions(2).is_err());
    }
}
