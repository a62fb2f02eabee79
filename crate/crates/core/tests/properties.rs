mod common;

use ndarray::Array2;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use packcache::alloc::{apply_min_quota, closed_form_allocation, decay_kernel, normalized_allocation_exact, token_budgets, DecayParams};
use packcache::attention::{dense_attention, TokenMeta};
use packcache::cache::parse_snapshot;
use packcache::cost::{cost_model, CostParams, SpeedupProxy};
use packcache::packer::{check_invariants, on_frame_complete};
use packcache::sim;
use packcache::{CachePolicy, PolicyKind, Position3D, Region, RopeConfig, SimConfig};
use proptest::prelude::*;

use common::{random_cache, random_frame, rng};

fn fractions(raw: &[u32]) -> Vec<BigRational> {
    let total: u64 = raw.iter().map(|&x| x as u64).sum::<u64>().max(1);
    let mut v: Vec<BigRational> = raw
        .iter()
        .map(|&x| BigRational::new(BigInt::from(x), BigInt::from(total)))
        .collect();
    if raw.iter().all(|&x| x == 0) {
        v[0] = BigRational::one();
    }
    v
}

fn policy(kind: u8) -> CachePolicy {
    match kind % 3 {
        0 => CachePolicy::full(),
        1 => CachePolicy::sliding_window(),
        _ => CachePolicy::pack_cache(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn budgets_sum_to_b_one(raw in prop::collection::vec(0u32..500, 1..20), b_one in 1usize..20_000) {
        let f = fractions(&raw);
        let t = token_budgets(&f, b_one).unwrap();
        prop_assert_eq!(t.iter().sum::<usize>(), b_one);
        prop_assert_eq!(t.len(), f.len());
    }

    #[test]
    fn closed_form_is_partition(w in 1usize..64) {
        let b = closed_form_allocation(w).unwrap();
        prop_assert!(b.iter().sum::<BigRational>().is_one());
        prop_assert!(b.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn decay_kernel_antitone(rho in 0.01f64..0.99, d in 1usize..40) {
        let p = DecayParams::new(rho).unwrap();
        prop_assert!(decay_kernel(d + 1, &p).unwrap() < decay_kernel(d, &p).unwrap());
    }

    #[test]
    fn exact_normalized_allocation_is_partition(num in 1i64..99, w in 1usize..12) {
        let rho = BigRational::new(BigInt::from(num), BigInt::from(100));
        let b = normalized_allocation_exact(w, &rho).unwrap();
        prop_assert!(b.iter().sum::<BigRational>().is_one());
    }

    #[test]
    fn min_quota_keeps_partition_and_floor(w in 1usize..12, q in 1i64..40) {
        let b_min = BigRational::new(BigInt::from(1), BigInt::from(q));
        let b = apply_min_quota(&closed_form_allocation(w).unwrap(), &b_min).unwrap();
        prop_assert!(b.iter().sum::<BigRational>().is_one());
        prop_assert!(b.iter().all(|x| *x >= b_min));
        prop_assert!(b.len() <= w);
    }

    #[test]
    fn rotation_is_isometry(
        v in prop::collection::vec(-10.0f64..10.0, 16),
        t in 0u32..500, h in 0u32..64, w in 0u32..64, seq in 0u64..100_000,
    ) {
        let rope = RopeConfig::for_head_dim(16).unwrap();
        let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let r3 = rope.rotate(&v, &Position3D::new(t, h, w, seq)).unwrap();
        let r1 = rope.rotate_1d(&v, seq).unwrap();
        prop_assert!((norm(&r3) - norm(&v)).abs() <= 1e-9 * (1.0 + norm(&v)));
        prop_assert!((norm(&r1) - norm(&v)).abs() <= 1e-9 * (1.0 + norm(&v)));
    }

    #[test]
    fn snapshot_round_trips(seed in any::<u64>(), w in 1usize..5, n in 1usize..12, frames in 0usize..8, kind in 0u8..3) {
        let mut r = rng(seed);
        let p = policy(kind);
        let mut cache = random_cache(&mut r, if p.kind == PolicyKind::Full { 8 } else { w }, n, 4);
        for _ in 0..frames {
            let f = random_frame(&mut r, &cache, 0.7);
            on_frame_complete(&mut cache, f, &p).unwrap();
        }
        let text = cache.to_snapshot_text();
        prop_assert_eq!(parse_snapshot(&text).unwrap(), cache.snapshot_rows());
    }

    #[test]
    fn anchors_survive_any_workload(
        seed in any::<u64>(), w in 1usize..5, n in 1usize..16, frames in 0usize..10,
        kind in 1u8..3, keep in 0.05f64..1.0,
    ) {
        let mut r = rng(seed);
        let p = policy(kind);
        let mut cache = random_cache(&mut r, w, n, 4);
        let before = cache.anchors().to_vec();
        for _ in 0..frames {
            let f = random_frame(&mut r, &cache, keep);
            let report = on_frame_complete(&mut cache, f, &p).unwrap();
            check_invariants(&cache, &p, &report).unwrap();
            prop_assert!(cache.history_len() <= cache.depth() * n);
            if report.packed {
                prop_assert!(cache.history_len() <= n);
                prop_assert!(cache.iter_entries().all(|e| !e.masked));
            }
        }
        prop_assert_eq!(cache.anchors(), &before[..]);
        for f in cache.frames() {
            let t = cache.temporal_position(f.frame_index);
            prop_assert!(f.entries.iter().all(|e| e.pos.t == t));
        }
    }

    #[test]
    fn last_ratio_monotone_in_frames(t in 1usize..40, n in 1usize..5000, anchors in 0usize..5000, w in 1usize..8) {
        let a = SpeedupProxy::compute(&CostParams::new(t, n, w, anchors), &CachePolicy::pack_cache()).unwrap();
        let b = SpeedupProxy::compute(&CostParams::new(t + 1, n, w, anchors), &CachePolicy::pack_cache()).unwrap();
        prop_assert!(b.last_ratio >= a.last_ratio);
        prop_assert!(b.total_ratio >= a.total_ratio);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cost_model_matches_simulator(frames in 1usize..8, n in 1usize..20, w in 1usize..5, kind in 0u8..3, seed in any::<u64>()) {
        let p = policy(kind);
        let cfg = SimConfig {
            num_latent_frames: frames,
            tokens_per_frame: n,
            window: w,
            keep_prob: 1.0,
            steps_per_frame: 1,
            seed,
            policy: p.clone(),
            ..SimConfig::default()
        };
        let anchors = cfg.anchors();
        let trace = sim::run(cfg).unwrap();
        let table = cost_model(&p, &CostParams::new(frames, n, w, anchors)).unwrap();
        let as_int = |x: usize| BigRational::from_integer(BigInt::from(x));
        for (f, (a, o)) in trace.frames.iter().zip(table.per_frame.iter().zip(&table.occupancy)) {
            prop_assert_eq!(&as_int(f.attended_keys), a);
            prop_assert_eq!(&as_int(f.occupancy), o);
        }
    }

    #[test]
    fn future_keys_are_invisible(seed in any::<u64>(), n in 1usize..8) {
        let mut r = rng(seed);
        let rope = RopeConfig::for_head_dim(8).unwrap();
        let d = 8;
        let mk = |r: &mut rand_chacha::ChaCha8Rng, rows: usize| {
            Array2::from_shape_vec((rows, d), common::gaussian_vec(r, rows * d)).unwrap()
        };
        let q = mk(&mut r, n);
        let q_meta: Vec<TokenMeta> = (0..n).map(|i| TokenMeta::current(2, Position3D::raster(1, i, 3, i as u64))).collect();
        let mut k_meta = q_meta.clone();
        k_meta.extend((0..n).map(|i| TokenMeta::current(3, Position3D::raster(2, i, 3, (n + i) as u64))));
        let k = mk(&mut r, 2 * n);
        let v = mk(&mut r, 2 * n);
        let base = dense_attention(q.view(), &q_meta, k.view(), v.view(), &k_meta, &rope).unwrap();
        let (mut k2, mut v2) = (k.clone(), v.clone());
        for row in n..2 * n {
            k2.row_mut(row).mapv_inplace(|x| x * 5.0 + 1.0);
            v2.row_mut(row).mapv_inplace(|x| -x);
        }
        let moved = dense_attention(q.view(), &q_meta, k2.view(), v2.view(), &k_meta, &rope).unwrap();
        prop_assert_eq!(&base.output, &moved.output);
        prop_assert!(base.weights.columns().into_iter().skip(n).all(|c| c.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn key_order_within_frame_is_irrelevant(seed in any::<u64>(), n in 2usize..10, shift in 1usize..9) {
        let mut r = rng(seed);
        let rope = RopeConfig::for_head_dim(16).unwrap();
        let d = 32;
        let mk = |r: &mut rand_chacha::ChaCha8Rng, rows: usize| {
            Array2::from_shape_vec((rows, d), common::gaussian_vec(r, rows * d)).unwrap()
        };
        let q = mk(&mut r, n);
        let meta: Vec<TokenMeta> = (0..n).map(|i| TokenMeta::current(1, Position3D::raster(0, i, 3, i as u64))).collect();
        let anchor = TokenMeta {
            region: Region::ConditionImage,
            frame: None,
            pos: Position3D::default(),
            masked: false,
        };
        let mut k_meta = vec![anchor];
        k_meta.extend(meta.iter().copied());
        let k = mk(&mut r, n + 1);
        let v = mk(&mut r, n + 1);
        let base = dense_attention(q.view(), &meta, k.view(), v.view(), &k_meta, &rope).unwrap();

        let perm: Vec<usize> = std::iter::once(0).chain((0..n).map(|i| 1 + (i + shift) % n)).collect();
        let kp = k.select(ndarray::Axis(0), &perm);
        let vp = v.select(ndarray::Axis(0), &perm);
        let mp: Vec<TokenMeta> = perm.iter().map(|&i| k_meta[i]).collect();
        let permuted = dense_attention(q.view(), &meta, kp.view(), vp.view(), &mp, &rope).unwrap();
        let err = (&base.output - &permuted.output).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(err <= 1e-12, "max error {}", err);
    }
}
