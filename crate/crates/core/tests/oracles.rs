//! Checks against values known in closed form or frozen from a reference run.

use isolation_core::analysis::*;
use isolation_core::estimators::*;
use isolation_core::events::SetFamily;
use isolation_core::geom::unit_ball_volume;
use isolation_core::model::SimConfig;
use isolation_core::rng::seed_schedule;
use isolation_core::stats::gauss_legendre;

fn cfg(d: usize, lambda: f64, t: f64, depth: u32) -> SimConfig {
    let mut c = SimConfig::new(d, lambda, 1.0, t);
    c.step = 1.0;
    c.refine_depth = depth;
    c
}

#[test]
fn seed_schedule_is_frozen() {
    let mut s = seed_schedule(1, 2, 3);
    let u = s.uniform();
    let z = s.normal();
    assert_eq!(u.to_bits(), U_BITS, "uniform {u}");
    assert_eq!(z.to_bits(), Z_BITS, "normal {z}");
}

const U_BITS: u64 = 4_605_393_513_394_175_086;
const Z_BITS: u64 = 13_835_419_210_103_008_215;

#[test]
fn clopper_pearson_zero_successes() {
    let (lo, hi) = binomial_ci(0, 100, 0.95).unwrap();
    assert_eq!(lo, 0.0);
    assert!((hi - 0.036_216_69).abs() < 1e-7, "{hi}");
}

#[test]
fn isolation_at_time_zero_is_the_void_probability() {
    // the target is isolated at 0 iff no node starts in the ball
    let c = cfg(2, 1.0, 1.0, 4);
    let n = 20_000;
    let curve = estimate_survival(&c, &EventSpec::isolation(SetFamily::centered_ball(1.0)), &[0.0], &RunPlan::new(7, 1, n).with_threads(1)).unwrap();
    let p = 1.0 - (-std::f64::consts::PI).exp();
    let e = curve.points[0];
    assert!((e.value - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "{} vs {p}", e.value);
}

#[test]
fn detection_at_time_zero_is_the_occupied_probability() {
    for d in [1usize, 3] {
        let c = cfg(d, 0.5, 1.0, 4);
        let n = 20_000;
        let curve = estimate_survival(&c, &EventSpec::detection(SetFamily::centered_ball(1.0)), &[0.0], &RunPlan::new(8, d as u64, n).with_threads(1)).unwrap();
        let p = (-0.5 * unit_ball_volume(d)).exp();
        let e = curve.points[0];
        assert!((e.value - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "d={d}: {} vs {p}", e.value);
    }
}

#[test]
fn sausage_mean_in_one_dimension_matches_the_range_formula() {
    let t = 2.0;
    let v = sausage_volume(1, 1.0, t, &RunPlan::new(3, 9, 20_000).with_threads(1), &SausageOptions::default()).unwrap();
    let exact = (8.0 * t / std::f64::consts::PI).sqrt() + 2.0;
    assert!((v.value - exact).abs() <= 0.01 * exact, "{} vs {exact}", v.value);
    assert!((v.value - exact).abs() <= 4.0 * v.stderr, "{} +- {} vs {exact}", v.value, v.stderr);
}

#[test]
fn sausage_mean_in_three_dimensions_matches_the_closed_form() {
    let t = 2.0;
    let v = sausage_volume(3, 1.0, t, &RunPlan::new(3, 10, 20_000).with_threads(1), &SausageOptions::default()).unwrap();
    let pi = std::f64::consts::PI;
    let exact = 4.0 * pi / 3.0 + 2.0 * pi * t + 4.0 * (2.0 * pi * t).sqrt();
    assert!((v.value - exact).abs() <= 4.0 * v.stderr, "{} +- {} vs {exact}", v.value, v.stderr);
}

#[test]
fn stay_probability_integral_matches_its_series() {
    let r = 1.0;
    let (x, w) = gauss_legendre(64);
    let q: f64 = x.iter().zip(&w).map(|(x, w)| w * r * stay_probability(r * x, r, 1.0)).sum();
    let pi = std::f64::consts::PI;
    let series: f64 = (1..200).step_by(2).map(|k| {
        let k = k as f64;
        16.0 * r / (k * k * pi * pi) * (-k * k * pi * pi / (8.0 * r * r)).exp()
    }).sum();
    assert!((q - series).abs() < 1e-10, "{q} vs {series}");
    // for large t the start density flattens to (2 Phi(1/sqrt 6) - 1) / sqrt t
    let t = 1e6;
    let p = probe_probability(t, r);
    let limit = (2.0 * isolation_core::stats::normal_cdf(1.0 / 6f64.sqrt()) - 1.0) / t.sqrt() * series;
    assert!((p / limit - 1.0).abs() < 1e-4, "ratio {}", p / limit);
}

#[test]
fn coverage_probe_agrees_with_quadrature() {
    let rows = d1_coverage_probe(&[16.0], 1.0, 1.0, 8, &RunPlan::new(4, 11, 20_000).with_threads(1)).unwrap();
    let row = &rows[0];
    let q = probe_probability(16.0, 1.0);
    assert!((row.p.value - q).abs() <= 3.0 * row.p.stderr, "{} +- {} vs {q}", row.p.value, row.p.stderr);
    assert!(row.count_z.abs() <= 4.0, "count z {}", row.count_z);
    assert!((row.count_var / row.count_mean - 1.0).abs() < 0.1);
}

#[test]
fn stationary_occupation_in_one_dimension() {
    let rep = stationary_occupation(&cfg(1, 1.0, 2.0, 6), &RunPlan::new(5, 12, 4_000).with_threads(1)).unwrap();
    assert!((rep.expected - 4.0).abs() < 1e-12);
    assert!(rep.z.abs() <= 3.5, "{rep:?}");
}

#[test]
fn splitting_agrees_with_direct_sampling() {
    let c = cfg(3, 1.0, 4.0, 5);
    let event = EventSpec::isolation(SetFamily::centered_ball(1.0));
    let direct = estimate_survival(&c, &event, &[4.0], &RunPlan::new(6, 13, 6_000).with_threads(1)).unwrap().points[0];
    let split = splitting_estimate(&c, &event, 4.0, &[1.0, 2.0, 3.0], SplittingEffort { particles: 500, replicates: 4 }, &RunPlan::new(6, 14, 0).with_threads(1)).unwrap();
    let gap = (direct.value - split.value).abs();
    assert!(gap <= 3.0 * (direct.stderr.powi(2) + split.stderr.powi(2)).sqrt(), "direct {direct:?} split {split:?}");
}
