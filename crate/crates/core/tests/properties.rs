mod common;

use convlstm_anomaly::eval::{
    evaluate, filter_extrema, merge_regions, persistence1d, propose_regions, regularity,
};
use convlstm_anomaly::interval::Interval;
use convlstm_anomaly::net::{patchify, unpatchify};
use convlstm_anomaly::train::{adagrad_step, adam_step, rmsprop_step, EPSILON};
use convlstm_anomaly::Tensor;
use proptest::prelude::*;

fn series(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop_oneof![
        prop::collection::vec(0.0..1.0f64, 1..max_len),
        // few distinct values: plenty of plateaus
        prop::collection::vec((0..4u8).prop_map(|v| v as f64 / 4.0), 1..max_len),
    ]
}

fn intervals(max_end: usize) -> impl Strategy<Value = Vec<Interval>> {
    prop::collection::vec((0..max_end, 0..40usize), 0..6).prop_map(|v| {
        v.into_iter()
            .map(|(s, l)| Interval { start: s, end: s + l })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn persistence_matches_path_oracle(s in series(50)) {
        let got: Vec<(usize, usize)> = persistence1d(&s).iter().map(|p| (p.min_index, p.max_index)).collect();
        prop_assert_eq!(got, common::path_persistence(&s));
    }

    #[test]
    fn persistence_shift_and_scale(s in series(40), shift in -2.0..2.0f64, k in 1u32..6) {
        let c = (1u64 << k) as f64;
        let base = persistence1d(&s);
        let shifted: Vec<f64> = s.iter().map(|v| v + shift).collect();
        let scaled: Vec<f64> = s.iter().map(|v| v * c).collect();
        let ps = persistence1d(&shifted);
        let pc = persistence1d(&scaled);
        prop_assert_eq!(ps.len(), base.len());
        for ((a, b), d) in base.iter().zip(&ps).zip(&pc) {
            prop_assert_eq!(a.min_index, b.min_index);
            prop_assert!((a.persistence() - b.persistence()).abs() < 1e-12);
            prop_assert_eq!(a.persistence() * c, d.persistence());
        }
    }

    #[test]
    fn global_pair_always_survives(s in series(40), t in 0.0..3.0f64) {
        let pairs = persistence1d(&s);
        let (mins, _) = filter_extrema(&pairs, t);
        let argmin = (0..s.len()).fold(0, |g, i| if s[i] < s[g] { i } else { g });
        prop_assert!(mins.contains(&argmin));
    }

    #[test]
    fn regularity_bounds(e in prop::collection::vec(0.0..10.0f64, 1..60)) {
        let g = regularity(&e).unwrap();
        let min = e.iter().copied().fold(f64::INFINITY, f64::min);
        let max = e.iter().copied().fold(0.0, f64::max);
        let argmin = (0..e.len()).fold(0, |a, i| if e[i] < e[a] { i } else { a });
        prop_assert_eq!(g[argmin], 1.0);
        if max > 0.0 {
            for &v in &g {
                prop_assert!(v >= min / max && v <= 1.0);
            }
        }
    }

    #[test]
    fn regularity_shift_keeps_order(e in prop::collection::vec(0.0..10.0f64, 2..40), d in 0.0..5.0f64) {
        let g = regularity(&e).unwrap();
        let h = regularity(&e.iter().map(|v| v + d).collect::<Vec<_>>()).unwrap();
        for i in 0..e.len() {
            for j in 0..e.len() {
                if e[i] < e[j] {
                    prop_assert!(g[i] >= g[j] && h[i] >= h[j]);
                }
            }
        }
    }

    #[test]
    fn regions_disjoint_bounded_idempotent(
        mins in prop::collection::vec(0..300usize, 0..8),
        maxs in prop::collection::vec(0..300usize, 0..8),
        window in 0..80usize,
        merge in 0..80usize,
    ) {
        let r = propose_regions(&mins, &maxs, 300, window, merge);
        for w in r.windows(2) {
            prop_assert!(w[0].end < w[1].start);
        }
        for reg in &r {
            prop_assert!(reg.start <= reg.end && reg.end < 300);
        }
        prop_assert_eq!(merge_regions(r.clone()), r);
    }

    #[test]
    fn spurious_proposals_never_raise_precision(
        props in intervals(200), gt in intervals(200), extra in intervals(200)
    ) {
        let base = evaluate(&props, &gt, 0.5).unwrap();
        let mut more = props.clone();
        more.extend(extra);
        let r = evaluate(&more, &gt, 0.5).unwrap();
        // adding proposals can only add matches; precision may fall but recall cannot
        prop_assert!(r.recall() >= base.recall());
        let spurious: Vec<Interval> = (0..3).map(|i| Interval { start: 1000 + 10 * i, end: 1005 + 10 * i }).collect();
        let mut worse = props.clone();
        worse.extend(spurious);
        prop_assert!(evaluate(&worse, &gt, 0.5).unwrap().precision() <= base.precision());
    }

    #[test]
    fn removing_proposals_never_raises_recall(props in intervals(200), gt in intervals(200), k in 0..6usize) {
        let base = evaluate(&props, &gt, 0.5).unwrap();
        let fewer = &props[..k.min(props.len())];
        prop_assert!(evaluate(fewer, &gt, 0.5).unwrap().recall() <= base.recall());
    }

    #[test]
    fn patchify_roundtrip(k in 1usize..5, m in 1usize..5, seed in 0u64..1000) {
        let s = k * m;
        let f = Tensor::from_fn([1, s, s], |i| ((i as u64 * 2654435761 + seed) % 97) as f64);
        let p = patchify(&f, k).unwrap();
        prop_assert_eq!(p.shape(), &[k * k, m, m][..]);
        prop_assert_eq!(unpatchify(&p, k).unwrap(), f);
    }

    #[test]
    fn optimizers_descend_on_quadratic(x0 in prop::collection::vec(-3.0..3.0f64, 1..6)) {
        let f = |x: &Tensor| x.sum_squares();
        let start = Tensor::new([x0.len()], x0.clone()).unwrap();
        prop_assume!(f(&start) > 1e-6);
        for which in 0..3 {
            let mut x = start.clone();
            let mut a = Tensor::zeros([x0.len()]);
            let mut b = Tensor::zeros([x0.len()]);
            for t in 1..=200u64 {
                let g = x.scale(2.0);
                match which {
                    0 => rmsprop_step(&mut x, &g, &mut a, 1e-2, 0.9, EPSILON),
                    1 => adagrad_step(&mut x, &g, &mut a, 1e-1, EPSILON),
                    _ => adam_step(&mut x, &g, &mut a, &mut b, t, 1e-2, EPSILON),
                }
            }
            prop_assert!(f(&x) < f(&start), "optimizer {} did not descend", which);
        }
    }
}
