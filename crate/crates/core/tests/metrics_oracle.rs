mod common;

use lohgnet::metrics::{self, BinaryMask, DetectionReport, DEFAULT_MATCH_RADIUS};
use lohgnet::numerics::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn to_mask(m: &[Vec<bool>]) -> BinaryMask {
    BinaryMask::new(m.len(), m[0].len(), common::flatten(m)).unwrap()
}

fn ratio(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

/// `(iou, f, pd, fa)` from scan counts, with the library's empty-set
/// conventions: IoU and F are 1 on empty-vs-empty, Pd is 1 without targets.
fn oracle_ratios(pred: &[Vec<bool>], gt: &[Vec<bool>]) -> (f64, f64, f64, f64) {
    let (tp, fp, fn_) = common::pixel_counts(pred, gt);
    let iou = ratio(tp, tp + fp + fn_, 1.0);
    let p = if tp + fp == 0 { if fn_ == 0 { 1.0 } else { 0.0 } } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { if fp == 0 { 1.0 } else { 0.0 } } else { tp as f64 / (tp + fn_) as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    let (t, d, fa) = common::target_counts(pred, gt, DEFAULT_MATCH_RADIUS);
    let total = pred.len() * pred[0].len();
    (iou, f, ratio(d, t, 1.0), fa as f64 / total as f64)
}

fn random_pair(r: &mut rand_chacha::ChaCha8Rng) -> (Vec<Vec<bool>>, Vec<Vec<bool>>) {
    let (h, w) = (r.random_range(1..33), r.random_range(1..33));
    let dp = r.random_range(0.0..0.3);
    let dg = r.random_range(0.0..0.3);
    (common::random_mask(r, h, w, dp), common::random_mask(r, h, w, dg))
}

#[test]
fn two_hundred_random_pairs_match_scan_oracles() {
    let mut r = common::rng(2024);
    for i in 0..200 {
        let (p, g) = random_pair(&mut r);
        let (pm, gm) = (to_mask(&p), to_mask(&g));
        let c = metrics::pixel_counts(&pm, &gm).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), common::pixel_counts(&p, &g), "pair {i}");

        let t = metrics::target_metrics(&pm, &gm).unwrap();
        assert_eq!(
            (t.targets, t.detected, t.false_alarm_pixels),
            common::target_counts(&p, &g, DEFAULT_MATCH_RADIUS),
            "pair {i}"
        );

        let comps = metrics::components(&gm);
        let want = common::components(&g);
        assert_eq!(comps.len(), want.len());
        for (a, b) in comps.iter().zip(&want) {
            assert_eq!(a.pixels, b.0);
            assert!((a.centroid.0 - b.1 .0).abs() <= 1e-12 && (a.centroid.1 - b.1 .1).abs() <= 1e-12);
        }

        let (iou, f, pd, fa) = oracle_ratios(&p, &g);
        let report = DetectionReport::evaluate(&[("x".into(), pm, gm)], DEFAULT_MATCH_RADIUS).unwrap();
        let a = &report.aggregate;
        for (got, want) in [(a.iou, iou), (a.niou, iou), (a.f, f), (a.pd, pd), (a.fa, fa)] {
            assert!((got - want).abs() <= 1e-9, "pair {i}: {got} vs {want}");
        }
    }
}

#[test]
fn overlap_iou_is_one_third() {
    let mut g = vec![vec![false; 4]; 4];
    let mut p = vec![vec![false; 4]; 4];
    for (y, x) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        g[y][x] = true;
        p[y][x + 1] = true;
    }
    let m = metrics::pixel_metrics(&to_mask(&p), &to_mask(&g)).unwrap();
    assert_eq!(m.iou, 1.0 / 3.0);
}

#[test]
fn one_of_two_targets_gives_half_pd() {
    let mut g = vec![vec![false; 20]; 20];
    g[3][3] = true;
    g[15][15] = true;
    let mut p = vec![vec![false; 20]; 20];
    p[3][3] = true;
    let t = metrics::target_metrics(&to_mask(&p), &to_mask(&g)).unwrap();
    assert_eq!(t.pd(), 0.5);
    assert_eq!(t.false_alarm_pixels, 0);
}

#[test]
fn five_spurious_pixels_in_100x100() {
    let g = vec![vec![false; 100]; 100];
    let mut p = vec![vec![false; 100]; 100];
    for x in 40..45 {
        p[50][x] = true;
    }
    let t = metrics::target_metrics(&to_mask(&p), &to_mask(&g)).unwrap();
    assert_eq!(t.fa(), 5e-4);
    assert_eq!(t.pd(), 1.0);
}

#[test]
fn identical_masks_are_perfect() {
    let mut g = vec![vec![false; 16]; 16];
    g[2][2] = true;
    g[2][3] = true;
    g[10][12] = true;
    let m = to_mask(&g);
    let r = DetectionReport::evaluate(&[("a".into(), m.clone(), m)], DEFAULT_MATCH_RADIUS).unwrap();
    assert_eq!((r.aggregate.iou, r.aggregate.pd, r.aggregate.fa), (1.0, 1.0, 0.0));
    assert_eq!(r.aggregate.targets, 2);
}

#[test]
fn diagonal_pixels_form_one_component() {
    let mut g = vec![vec![false; 5]; 5];
    for i in 0..5 {
        g[i][i] = true;
    }
    assert_eq!(metrics::components(&to_mask(&g)).len(), 1);
}

#[test]
fn binarize_is_strict() {
    let t = Tensor::<f64>::from_f64(&[1, 1, 1, 3], &[0.5, 0.5000001, 0.2]).unwrap();
    assert_eq!(metrics::binarize(&t, 0.5).unwrap().bits, vec![false, true, false]);
    assert!(metrics::binarize(&t, 1.0).is_err());
}

#[test]
fn niou_rejects_impossible_counts() {
    assert!(metrics::niou(&[(3, 2, 5)]).is_err());
    assert!(metrics::niou(&[]).is_err());
}

#[test]
fn shape_mismatch_is_an_error() {
    assert!(metrics::pixel_counts(&BinaryMask::empty(2, 3), &BinaryMask::empty(3, 2)).is_err());
}

#[test]
fn aggregate_counts_are_sums_and_csv_has_one_row_per_image() {
    let mut r = common::rng(5);
    let pairs: Vec<_> = (0..10)
        .map(|i| {
            let (p, g) = random_pair(&mut r);
            (format!("{i:04}.pgm"), to_mask(&p), to_mask(&g))
        })
        .collect();
    let rep = DetectionReport::evaluate(&pairs, DEFAULT_MATCH_RADIUS).unwrap();
    let a = &rep.aggregate;
    assert_eq!(a.pixels.tp, rep.images.iter().map(|i| i.pixels.tp).sum::<usize>());
    assert_eq!(a.targets, rep.images.iter().map(|i| i.targets.targets).sum::<usize>());
    assert_eq!(a.total_pixels, rep.images.iter().map(|i| i.targets.total_pixels).sum::<usize>());
    let niou = rep.images.iter().map(|i| i.iou).sum::<f64>() / rep.images.len() as f64;
    assert!((a.niou - niou).abs() <= 1e-12);
    let csv = rep.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(DetectionReport::CSV_HEADER));
    assert_eq!(lines.count(), 10);
    let back: DetectionReport = serde_json::from_str(&rep.to_json()).unwrap();
    assert_eq!(back, rep);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn permuting_images_keeps_aggregate(seed in 0u64..10_000) {
        let mut r = common::rng(seed);
        let mut pairs: Vec<_> = (0..6)
            .map(|i| {
                let (p, g) = random_pair(&mut r);
                (i.to_string(), to_mask(&p), to_mask(&g))
            })
            .collect();
        let a = DetectionReport::evaluate(&pairs, DEFAULT_MATCH_RADIUS).unwrap().aggregate;
        pairs.shuffle(&mut r);
        let b = DetectionReport::evaluate(&pairs, DEFAULT_MATCH_RADIUS).unwrap().aggregate;
        prop_assert_eq!(a.pixels, b.pixels);
        prop_assert_eq!((a.iou, a.f, a.pd, a.fa), (b.iou, b.f, b.pd, b.fa));
        prop_assert!((a.niou - b.niou).abs() <= 1e-12);
    }

    #[test]
    fn adding_predicted_pixels_never_lowers_tp_or_raises_fn(seed in 0u64..10_000) {
        let mut r = common::rng(seed);
        let (p, g) = random_pair(&mut r);
        let mut more = p.clone();
        for row in more.iter_mut() {
            for v in row.iter_mut() {
                *v |= r.random_bool(0.2);
            }
        }
        let a = metrics::pixel_counts(&to_mask(&p), &to_mask(&g)).unwrap();
        let b = metrics::pixel_counts(&to_mask(&more), &to_mask(&g)).unwrap();
        prop_assert!(b.tp >= a.tp && b.fn_ <= a.fn_ && b.fp >= a.fp);
        // with an empty ground truth recall drops from 1 to 0 once anything is predicted
        if a.gt() > 0 {
            prop_assert!(b.recall() >= a.recall());
        }
    }

    #[test]
    fn ratios_stay_in_unit_interval(seed in 0u64..10_000) {
        let mut r = common::rng(seed);
        let (p, g) = random_pair(&mut r);
        let rep = DetectionReport::evaluate(&[("x".into(), to_mask(&p), to_mask(&g))], DEFAULT_MATCH_RADIUS).unwrap();
        let a = rep.aggregate;
        for v in [a.iou, a.niou, a.f, a.precision, a.recall, a.pd, a.fa] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn larger_radius_detects_at_least_as_many(seed in 0u64..10_000) {
        let mut r = common::rng(seed);
        let (p, g) = random_pair(&mut r);
        let (pm, gm) = (to_mask(&p), to_mask(&g));
        let near = metrics::target_metrics_with(&pm, &gm, 1.0).unwrap();
        let far = metrics::target_metrics_with(&pm, &gm, 5.0).unwrap();
        prop_assert!(far.detected >= near.detected);
        prop_assert!(far.false_alarm_pixels <= near.false_alarm_pixels);
    }
}
