use std::f64::consts::PI;

use dragstream_core::drag::{angle_at_center, rotate_region, translate_region, Mask};
use dragstream_core::metrics::{dai, objmc, DaiNorm};
use dragstream_core::optim::{adsr_rectify, css_map, BoxSpec, LatentStats};
use dragstream_core::tensor::{butterworth_gain, butterworth_mask, fft2, ifft2, Tensor};
use proptest::prelude::*;

fn grid_values(h: usize, w: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, h * w).prop_map(move |v| Tensor::new(vec![h, w], v).unwrap())
}

fn mask(h: usize, w: usize) -> impl Strategy<Value = Mask> {
    prop::collection::vec(prop::bool::weighted(0.3), h * w)
        .prop_map(move |bits| Mask::from_fn(h, w, |r, c| bits[r * w + c]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_round_trip(x in grid_values(6, 10)) {
        let back = ifft2(&fft2(&x).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-10);
    }

    #[test]
    fn parseval(x in grid_values(8, 5)) {
        let f = fft2(&x).unwrap();
        let spectral: f64 = f.power().iter().sum();
        let spatial: f64 = x.data().iter().map(|v| v * v).sum();
        prop_assert!((spectral - 40.0 * spatial).abs() < 1e-8 * spectral.max(1.0));
    }

    #[test]
    fn butterworth_gain_is_monotone(d1 in 0.0f64..20.0, d2 in 0.0f64..20.0, cutoff in 0.1f64..10.0, order in 1u32..5) {
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let (a, b) = (butterworth_gain(lo, cutoff, order), butterworth_gain(hi, cutoff, order));
        prop_assert!(a >= b && b > 0.0 && a <= 1.0);
        prop_assert!((butterworth_gain(cutoff, cutoff, order) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn butterworth_mask_bounds(h in 2usize..12, w in 2usize..12, omega in 0.05f64..1.0) {
        let m = butterworth_mask(h, w, omega, 2).unwrap();
        prop_assert_eq!(m.data()[0], 1.0);
        prop_assert!(m.data().iter().all(|&g| g > 0.0 && g <= 1.0));
    }

    #[test]
    fn translation_matches_shift_oracle(m in mask(9, 7), dr in -9i64..9, dc in -7i64..7) {
        let res = translate_region(&m, (dr, dc), (9, 7));
        let oracle = Mask::from_fn(9, 7, |r, c| m.contains(r as i64 - dr, c as i64 - dc));
        prop_assert_eq!(&res.target, &oracle);
        prop_assert_eq!(res.mapping.len(), oracle.count());
        for ((sr, sc), (tr, tc)) in res.mapping {
            prop_assert_eq!((tr as i64 - sr as i64, tc as i64 - sc as i64), (dr, dc));
        }
    }

    #[test]
    fn quarter_turns_match_integer_oracle(m in mask(10, 10), cr in 2i64..8, cc in 2i64..8, q in 1usize..4) {
        let res = rotate_region(&m, (cr, cc), q as f64 * PI / 2.0, (10, 10));
        let turn = |dr: i64, dc: i64| match q {
            1 => (-dc, dr),
            2 => (-dr, -dc),
            _ => (dc, -dr),
        };
        let mut expected: Vec<_> = m
            .iter_set()
            .filter_map(|(r, c)| {
                let (dr, dc) = turn(r as i64 - cr, c as i64 - cc);
                let (tr, tc) = (cr + dr, cc + dc);
                ((0..10).contains(&tr) && (0..10).contains(&tc)).then_some(((r, c), (tr as usize, tc as usize)))
            })
            .collect();
        let mut got = res.mapping.clone();
        expected.sort();
        got.sort();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn angle_matches_arctangent(a in (-20i64..20, -20i64..20), b in (-20i64..20, -20i64..20)) {
        prop_assume!(a != (0, 0) && b != (0, 0));
        let got = angle_at_center(a, (0, 0), b).unwrap();
        let cross = (a.0 * b.1 - a.1 * b.0) as f64;
        let dot = (a.0 * b.0 + a.1 * b.1) as f64;
        let oracle = cross.atan2(dot);
        let oracle = if oracle <= -PI { oracle + 2.0 * PI } else { oracle };
        prop_assert!(got > -PI && got <= PI);
        prop_assert!((got - oracle).abs() < 1e-12 || (got - oracle).abs() > 2.0 * PI - 1e-12);
    }

    #[test]
    fn mask_json_round_trip(m in mask(7, 11)) {
        let json = serde_json::to_string(&m).unwrap();
        prop_assert_eq!(serde_json::from_str::<Mask>(&json).unwrap(), m);
    }

    #[test]
    fn objmc_is_symmetric_and_zero_on_self(
        a in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..8),
        shift in (-5.0f64..5.0, -5.0f64..5.0),
    ) {
        let b: Vec<_> = a.iter().map(|p| (p.0 + shift.0, p.1 + shift.1)).collect();
        prop_assert_eq!(objmc(&a, &a).unwrap(), 0.0);
        prop_assert!((objmc(&a, &b).unwrap() - objmc(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((objmc(&a, &b).unwrap() - shift.0.hypot(shift.1)).abs() < 1e-9);
    }

    #[test]
    fn dai_is_zero_for_identical_windows(v in prop::collection::vec(-1.0f64..1.0, 2 * 36), p in (0i64..6, 0i64..6), r in 0usize..3) {
        let z = Tensor::new(vec![2, 6, 6], v).unwrap();
        prop_assert_eq!(dai(&z, &z, &[p], &[p], r, DaiNorm::L2).unwrap(), 0.0);
        prop_assert_eq!(dai(&z, &z, &[p], &[p], r, DaiNorm::L1).unwrap(), 0.0);
    }

    #[test]
    fn rectification_is_exact_and_idempotent(v in prop::collection::vec(-4.0f64..4.0, 64), mean in -1.0f64..1.0, std in 0.1f64..3.0) {
        let z = Tensor::new(vec![4, 4, 4], v).unwrap();
        prop_assume!(LatentStats::of(&z).std > 1e-3);
        let target = LatentStats { mean, std };
        let (once, ok) = adsr_rectify(&z, target);
        prop_assert!(ok);
        let s = LatentStats::of(&once);
        prop_assert!((s.mean - mean).abs() < 1e-9 && (s.std - std).abs() < 1e-9);
        let (twice, _) = adsr_rectify(&once, target);
        prop_assert!(twice.max_abs_diff(&once) < 1e-9);
    }

    #[test]
    fn css_preserves_signs(g in prop::collection::vec(-5.0f64..5.0, 64), r0 in 0usize..6, c0 in 0usize..6, alpha in 0.2f64..3.0) {
        let m = Mask::rect(8, 8, r0 as i64, c0 as i64, r0 as i64 + 2, c0 as i64 + 2);
        let map = css_map(BoxSpec::of_mask(&m).unwrap(), alpha, (8, 8));
        let scaled = map.scale(&g);
        for (a, b) in g.iter().zip(&scaled) {
            prop_assert!(a.signum() == b.signum() || *a == 0.0);
            prop_assert!(b.abs() <= a.abs());
        }
    }
}
