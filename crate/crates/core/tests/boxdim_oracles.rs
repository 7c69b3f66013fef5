use std::collections::{BTreeMap, BTreeSet};

use invdim_core::boxdim::{
    box_count, estimate_box_dimension, lemma21_estimate, neighborhood_volume, BoxDimError, ScaleSchedule,
};
use invdim_core::systems::{build_system, default_system, AmbientSpace};
use invdim_core::{CloudMeta, PointCloud};
use proptest::prelude::*;

const CANTOR_DIM: f64 = std::f64::consts::LN_2 / 1.098_612_288_668_109_8; // ln 2 / ln 3

/// Left endpoints (as integers over 3^depth) of the surviving middle-thirds intervals.
fn cantor_words(depth: u32) -> Vec<u64> {
    let mut words = vec![0u64];
    for _ in 0..depth {
        words = words.iter().flat_map(|&w| [3 * w, 3 * w + 2]).collect();
    }
    words
}

fn cloud_1d(xs: &[f64]) -> PointCloud {
    PointCloud::from_flat(AmbientSpace::euclidean(1), xs.to_vec(), CloudMeta::external("test")).unwrap()
}

/// First `k` ternary digits of `x`, read from the exact integer `floor(x·3^k)`.
fn ternary_prefix(x: f64, k: u32) -> u64 {
    (x * 3f64.powi(k as i32)).floor() as u64
}

#[test]
fn cantor_midpoints_give_exact_power_of_two_counts() {
    let depth = 8;
    let scale = 3f64.powi(depth as i32);
    let mids: Vec<f64> = cantor_words(depth).iter().map(|&w| (w as f64 + 0.5) / scale).collect();
    let cloud = cloud_1d(&mids);
    for k in 0..=8u32 {
        let expected = cantor_words(k).len() as u64;
        assert_eq!(expected, 1 << k);
        assert_eq!(box_count(&cloud, 3f64.powi(-(k as i32))).unwrap(), expected, "k = {k}");
    }
}

#[test]
fn cantor_sample_counts_match_ternary_digits() {
    let sys = default_system("cookie_cutter").unwrap();
    let cloud = sys.sample_invariant_set(100_000, 42).unwrap();
    for k in 1..=8u32 {
        let prefixes: BTreeSet<u64> = cloud.points().map(|p| ternary_prefix(p[0], k)).collect();
        let admissible: BTreeSet<u64> = cantor_words(k).into_iter().collect();
        assert!(prefixes.is_subset(&admissible), "k = {k}: sample left the Cantor set");
        assert_eq!(prefixes.len(), 1 << k);
        assert_eq!(box_count(&cloud, 3f64.powi(-(k as i32))).unwrap(), 1 << k, "k = {k}");
    }
    let schedule = ScaleSchedule::geometric(1.0 / 9.0, 1.0 / 3.0, 6).unwrap();
    let fit = estimate_box_dimension(&cloud, &schedule).unwrap();
    assert!((fit.estimate - CANTOR_DIM).abs() < 0.05, "{}", fit.estimate);
}

/// Number of `delta`-cells of the line met by the level-`depth` intervals of
/// the Cantor set with two branches of ratio `ratio` at 0 and `1 - ratio`.
fn cantor_axis_count(ratio: f64, depth: u32, delta: f64) -> u64 {
    let mut lefts = vec![0.0f64];
    for _ in 0..depth {
        lefts = lefts.iter().flat_map(|&l| [l * ratio, l * ratio + 1.0 - ratio]).collect();
    }
    let len = ratio.powi(depth as i32);
    let cells: BTreeSet<i64> =
        lefts.iter().flat_map(|&l| ((l / delta).floor() as i64)..=(((l + len) / delta).floor() as i64)).collect();
    cells.len() as u64
}

#[test]
fn horseshoe_matches_product_digit_oracle() {
    let (lambda, mu) = (0.2f64, 4.0f64);
    let reference = 2f64.ln() / mu.ln() + 2f64.ln() / -lambda.ln();
    assert!((reference - 0.9307).abs() < 1e-4);
    let sys = default_system("linear_horseshoe").unwrap();
    let cloud = sys.sample_invariant_set(100_000, 42).unwrap();
    let schedule = ScaleSchedule::default_for(&cloud);
    let fit = estimate_box_dimension(&cloud, &schedule).unwrap();
    assert!((fit.estimate - reference).abs() <= 0.08, "{}", fit.estimate);

    // the invariant set is a product, so exact counts factor over the axes;
    // a sample can only miss cells (e.g. those met only at an endpoint)
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in fit.scales.iter().filter(|s| s.used) {
        let exact = cantor_axis_count(lambda, 14, s.delta) * cantor_axis_count(1.0 / mu, 12, s.delta);
        assert!(s.box_count <= exact, "δ = {}: sample {} > oracle {exact}", s.delta, s.box_count);
        xs.push(-s.delta.ln());
        ys.push((exact as f64).ln());
    }
    let (oracle_slope, _, _) = invdim_core::boxdim::least_squares(&xs, &ys);
    assert!((oracle_slope - reference).abs() <= 0.08, "oracle slope {oracle_slope}");
    assert!((oracle_slope - fit.estimate).abs() <= 0.08, "oracle {oracle_slope} vs sample {}", fit.estimate);
}

/// Exact length of the r-neighbourhood of the level-`depth` Cantor intervals.
fn cantor_neighbourhood_length(depth: u32, r: f64) -> f64 {
    let len = 3f64.powi(-(depth as i32));
    let mut spans: Vec<(f64, f64)> =
        cantor_words(depth).iter().map(|&w| (w as f64 * len - r, (w as f64 + 1.0) * len + r)).collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut cur = spans[0];
    for &(a, b) in &spans[1..] {
        if a <= cur.1 {
            cur.1 = cur.1.max(b);
        } else {
            total += cur.1 - cur.0;
            cur = (a, b);
        }
    }
    total + cur.1 - cur.0
}

#[test]
fn cantor_neighbourhood_volume_matches_interval_arithmetic() {
    let sys = default_system("cookie_cutter").unwrap();
    let cloud = sys.sample_invariant_set(100_000, 42).unwrap();
    for k in 2..=7 {
        let r = 3f64.powi(-k);
        let exact = cantor_neighbourhood_length(12, r);
        let est = neighborhood_volume(&cloud, r).unwrap();
        assert!((est / exact - 1.0).abs() < 0.1, "r = {r}: {est} vs {exact}");
    }
    let schedule = ScaleSchedule::geometric(1.0 / 9.0, 1.0 / 3.0, 6).unwrap();
    let fit = lemma21_estimate(&cloud, &schedule).unwrap();
    assert!((fit.estimate - CANTOR_DIM).abs() < 0.1, "{}", fit.estimate);
}

#[test]
fn uniform_square_has_dimension_two() {
    // deterministic low-discrepancy sample of [0,1]^2 in the plane
    let g = 0.754_877_666_246_692_8f64; // 1/plastic number
    let pts: Vec<f64> = (0..100_000)
        .flat_map(|i| {
            let i = i as f64 + 1.0;
            [(0.5 + i * g).fract(), (0.5 + i * g * g).fract()]
        })
        .collect();
    let cloud = PointCloud::from_flat(AmbientSpace::euclidean(2), pts, CloudMeta::external("square")).unwrap();
    let schedule = ScaleSchedule::geometric(0.25, 0.5, 6).unwrap();
    let fit = estimate_box_dimension(&cloud, &schedule).unwrap();
    assert!((fit.estimate - 2.0).abs() < 0.05, "{}", fit.estimate);
}

#[test]
fn lemma21_full_square_and_single_point() {
    let g = 1024usize;
    let pts: Vec<f64> =
        (0..g * g).flat_map(|i| [((i % g) as f64 + 0.5) / g as f64, ((i / g) as f64 + 0.5) / g as f64]).collect();
    let square = PointCloud::from_flat(AmbientSpace::euclidean(2), pts, CloudMeta::external("square")).unwrap();
    let fine = ScaleSchedule::geometric(1.0 / 32.0, 0.5, 4).unwrap();
    let fit = lemma21_estimate(&square, &fine).unwrap();
    assert!((fit.estimate - 2.0).abs() < 0.1, "{}", fit.estimate);

    let point = PointCloud::from_flat(AmbientSpace::euclidean(2), vec![0.3, -0.4], CloudMeta::external("pt")).unwrap();
    let fit = lemma21_estimate(&point, &ScaleSchedule::default_for(&point)).unwrap();
    assert!(fit.estimate.abs() < 0.1, "{}", fit.estimate);
    let fit = estimate_box_dimension(&point, &ScaleSchedule::default_for(&point)).unwrap();
    assert_eq!(fit.estimate, 0.0);
}

#[test]
fn saturated_schedules_report_diagnostics() {
    let sys = default_system("henon").unwrap();
    let cloud = sys.sample_invariant_set(500, 1).unwrap();
    let schedule = ScaleSchedule::geometric(1e-3, 0.5, 5).unwrap();
    match estimate_box_dimension(&cloud, &schedule) {
        Err(BoxDimError::InsufficientScales { usable, required, scales, .. }) => {
            assert!(usable < required);
            assert_eq!(scales.len(), 5);
        }
        other => panic!("expected insufficient scales, got {other:?}"),
    }
}

#[test]
fn horseshoe_sweep_tracks_reference() {
    for lambda in [0.1, 0.3, 0.4] {
        let params: BTreeMap<String, f64> = [("lambda".to_string(), lambda)].into_iter().collect();
        let sys = build_system("linear_horseshoe", &params).unwrap();
        let reference = sys.reference_dimension.as_ref().unwrap().value;
        let cloud = sys.sample_invariant_set(100_000, 3).unwrap();
        let fit = estimate_box_dimension(&cloud, &ScaleSchedule::default_for(&cloud)).unwrap();
        assert!((fit.estimate - reference).abs() < 0.12, "λ = {lambda}: {} vs {reference}", fit.estimate);
    }
}

fn arb_cloud() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec([-1.0f64..1.0, -1.0f64..1.0], 1..200)
}

fn to_cloud(ambient: AmbientSpace, pts: &[[f64; 2]]) -> PointCloud {
    PointCloud::from_points(ambient, pts, CloudMeta::external("prop")).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counts_are_monotone_in_scale(pts in arb_cloud(), base in 0.05f64..1.0) {
        let cloud = to_cloud(AmbientSpace::euclidean(2), &pts);
        // nested dyadic grids anchored at the origin
        let mut prev = 0;
        for k in 0..8 {
            let c = box_count(&cloud, base / f64::from(1 << k)).unwrap();
            prop_assert!(c >= prev);
            prop_assert!(c as usize <= pts.len());
            prev = c;
        }
    }

    #[test]
    fn counts_are_subadditive(a in arb_cloud(), b in arb_cloud(), delta in 0.01f64..0.5) {
        let ca = to_cloud(AmbientSpace::euclidean(2), &a);
        let cb = to_cloud(AmbientSpace::euclidean(2), &b);
        let union = ca.union(&cb).unwrap();
        prop_assert!(box_count(&union, delta).unwrap() <= box_count(&ca, delta).unwrap() + box_count(&cb, delta).unwrap());
    }

    #[test]
    fn volume_is_monotone_in_radius(pts in arb_cloud(), r in 0.02f64..0.2) {
        let cloud = to_cloud(AmbientSpace::torus(2), &pts.iter().map(|p| [p[0].rem_euclid(1.0), p[1].rem_euclid(1.0)]).collect::<Vec<_>>());
        let small = neighborhood_volume(&cloud, r).unwrap();
        prop_assert!(small > 0.0 && small <= 1.0 + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn translation_barely_moves_the_slope(shift in -1.0f64..1.0) {
        let sys = default_system("cookie_cutter").unwrap();
        let cloud = sys.sample_invariant_set(20_000, 5).unwrap();
        let moved: Vec<f64> = cloud.coords().iter().map(|x| x + shift).collect();
        let moved = cloud_1d(&moved);
        let schedule = ScaleSchedule::geometric(1.0 / 9.0, 1.0 / 3.0, 5).unwrap();
        let a = estimate_box_dimension(&cloud, &schedule).unwrap().estimate;
        let b = estimate_box_dimension(&moved, &schedule).unwrap().estimate;
        prop_assert!((a - b).abs() <= 0.02, "{} vs {}", a, b);
    }

    #[test]
    fn torus_rotation_barely_moves_the_slope(shift in 0.0f64..1.0) {
        let sys = default_system("circle_expanding").unwrap();
        let cloud = sys.sample_invariant_set(20_000, 5).unwrap();
        let rotated: Vec<f64> = cloud.coords().iter().map(|x| (x + shift).rem_euclid(1.0)).collect();
        let rotated = PointCloud::from_flat(AmbientSpace::torus(1), rotated, CloudMeta::external("t")).unwrap();
        let schedule = ScaleSchedule::default_for(&cloud);
        let a = estimate_box_dimension(&cloud, &schedule).unwrap().estimate;
        let b = estimate_box_dimension(&rotated, &schedule).unwrap().estimate;
        prop_assert!((a - b).abs() <= 0.02, "{} vs {}", a, b);
    }

    #[test]
    fn rotating_a_torus_sample_barely_moves_the_slope(sx in 0.0f64..1.0, sy in 0.0f64..1.0) {
        let sys = default_system("cat_map").unwrap();
        let cloud = sys.sample_invariant_set(20_000, 1).unwrap();
        let rotated: Vec<f64> = cloud
            .coords()
            .chunks(2)
            .flat_map(|p| [(p[0] + sx).rem_euclid(1.0), (p[1] + sy).rem_euclid(1.0)])
            .collect();
        let rotated = PointCloud::from_flat(AmbientSpace::torus(2), rotated, CloudMeta::external("t")).unwrap();
        let schedule = ScaleSchedule::default_for(&cloud);
        let a = estimate_box_dimension(&cloud, &schedule).unwrap().estimate;
        let b = estimate_box_dimension(&rotated, &schedule).unwrap().estimate;
        prop_assert!((a - b).abs() <= 0.02, "{} vs {}", a, b);
    }
}
