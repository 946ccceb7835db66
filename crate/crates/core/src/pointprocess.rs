//! Poisson point processes in bounded regions, truncation of the infinite
//! process, and thinning by reach.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{ensure, Result};
use crate::geom::{ball_volume, unit_ball_volume, Point};
use crate::model::SimConfig;
use crate::paths::{path_enters, Envelope, NodePath, Target};
use crate::rng::Stream;
use crate::stats::adaptive_simpson;

/// Bounded region with a closed-form volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Region {
    Ball { center: Point, radius: f64 },
    /// Axis-aligned box with the given half-widths, one per coordinate.
    Box { center: Point, half: Vec<f64> },
    Interval { lo: f64, hi: f64 },
    /// Centered spherical shell `inner <= |x| <= outer`.
    Shell { inner: f64, outer: f64 },
}

impl Region {
    pub fn centered_ball(radius: f64) -> Region {
        Region::Ball { center: Point::ZERO, radius }
    }

    pub fn volume(&self, d: usize) -> f64 {
        match self {
            Region::Ball { radius, .. } => ball_volume(d, *radius),
            Region::Box { half, .. } => half.iter().map(|h| 2.0 * h).product(),
            Region::Interval { lo, hi } => hi - lo,
            Region::Shell { inner, outer } => ball_volume(d, *outer) - ball_volume(d, *inner),
        }
    }

    pub fn contains(&self, d: usize, x: &Point) -> bool {
        match self {
            Region::Ball { center, radius } => x.dist(center) <= *radius,
            Region::Box { center, half } => (0..d).all(|i| (x.0[i] - center.0[i]).abs() <= half[i]),
            Region::Interval { lo, hi } => x.0[0] >= *lo && x.0[0] <= *hi,
            Region::Shell { inner, outer } => {
                let n = x.norm();
                n >= *inner && n <= *outer
            }
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        match self {
            Region::Box { half, .. } => ensure!(half.len() == d, Domain, "box has {} half-widths for d = {d}", half.len()),
            Region::Interval { .. } => ensure!(d == 1, Domain, "interval regions require d = 1"),
            _ => {}
        }
        let v = self.volume(d);
        ensure!(v.is_finite() && v > 0.0, Domain, "region volume must be finite and positive, got {v}");
        Ok(())
    }

    /// A uniform point of the region.
    pub fn sample_uniform(&self, d: usize, rng: &mut impl Rng) -> Point {
        match self {
            Region::Ball { center, radius } => *center + uniform_direction(d, rng) * (radius * rng.random::<f64>().powf(1.0 / d as f64)),
            Region::Shell { inner, outer } => {
                let (a, b) = (inner.powi(d as i32), outer.powi(d as i32));
                let rho = (a + rng.random::<f64>() * (b - a)).powf(1.0 / d as f64);
                uniform_direction(d, rng) * rho
            }
            Region::Box { center, half } => {
                let mut p = *center;
                for (i, h) in half.iter().enumerate() {
                    p.0[i] += h * (2.0 * rng.random::<f64>() - 1.0);
                }
                p
            }
            Region::Interval { lo, hi } => Point::on_axis(lo + (hi - lo) * rng.random::<f64>()),
        }
    }
}

/// Uniform point of the unit sphere.
pub fn uniform_direction(d: usize, rng: &mut impl Rng) -> Point {
    if d == 1 {
        return Point::on_axis(if rng.random::<bool>() { 1.0 } else { -1.0 });
    }
    loop {
        let mut p = Point::ZERO;
        for c in p.0.iter_mut().take(d) {
            *c = rng.sample(rand_distr::StandardNormal);
        }
        let n = p.norm();
        if n > 1e-12 {
            return p * (1.0 / n);
        }
    }
}

/// Poisson count with the given mean; zero mean gives zero.
pub fn poisson_count(mean: f64, rng: &mut impl Rng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
}

/// Realization of a Poisson process restricted to a region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub d: usize,
    pub points: Vec<Point>,
    pub region: Region,
    pub intensity: f64,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Superposition with an independent cloud on the same region.
    pub fn superpose(mut self, other: &PointCloud) -> PointCloud {
        self.points.extend_from_slice(&other.points);
        self.intensity += other.intensity;
        self
    }

    /// CSV with columns `node_id, x_1, ..., x_d`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let header: Vec<String> = std::iter::once("node_id".to_string()).chain((1..=self.d).map(|i| format!("x_{i}"))).collect();
        writeln!(w, "{}", header.join(","))?;
        for (i, p) in self.points.iter().enumerate() {
            let cols: Vec<String> = p.coords(self.d).iter().map(|x| format!("{x}")).collect();
            writeln!(w, "{i},{}", cols.join(","))?;
        }
        Ok(())
    }
}

pub fn sample_poisson(d: usize, lambda: f64, region: &Region, stream: &mut Stream) -> Result<PointCloud> {
    region.check(d)?;
    ensure!(lambda >= 0.0 && lambda.is_finite(), Domain, "intensity must be finite and >= 0, got {lambda}");
    let n = poisson_count(lambda * region.volume(d), stream);
    let points = (0..n).map(|_| region.sample_uniform(d, stream)).collect();
    Ok(PointCloud { d, points, region: region.clone(), intensity: lambda })
}

/// Bound on `P(sup_{s <= t} |xi(s)| >= a)` for a d-dimensional standard
/// Brownian motion: some coordinate must travel `a / sqrt(d)`, and each
/// coordinate obeys the reflection principle.
pub fn sup_tail_bound(d: usize, t: f64, a: f64) -> f64 {
    if a <= 0.0 {
        return 1.0;
    }
    let b = a / (d as f64).sqrt();
    (2.0 * d as f64 * erfc(b / (2.0 * t).sqrt())).min(1.0)
}

/// Expected number of nodes born beyond radius `big_r` that come within
/// `reach0` of the origin before time `t`, bounded via [`sup_tail_bound`].
pub fn outside_detection_bound(d: usize, lambda: f64, t: f64, reach0: f64, big_r: f64) -> f64 {
    let surface = d as f64 * unit_ball_volume(d);
    let f = |rho: f64| lambda * surface * rho.powi(d as i32 - 1) * sup_tail_bound(d, t, rho - reach0);
    let scale = (2.0 * t * d as f64).sqrt();
    // the integrand is negligible once the Gaussian argument exceeds ~40
    let end = reach0.max(big_r) + 40.0 * scale;
    let mut total = 0.0;
    let mut a = big_r;
    let mut w = scale / 8.0;
    while a < end {
        let b = (a + w).min(end);
        let piece = adaptive_simpson(&f, a, b, 1e-14 + 1e-10 * total);
        total += piece;
        if a > reach0 + 2.0 * scale && piece <= 1e-16 * total.max(1e-300) {
            break;
        }
        a = b;
        w *= 2.0;
    }
    total
}

/// Spacing of the grid on which truncation radii are reported.
pub fn truncation_grid_step(t: f64, r: f64) -> f64 {
    t.sqrt().max(r) / 64.0
}

/// Smallest grid radius `R = set_bound + r + k * step` for which the expected
/// number of nodes born outside `B(0, R)` that detect the target before the
/// horizon is at most `eps`.
pub fn truncation_radius(config: &SimConfig, set_bound: f64, eps: f64) -> Result<f64> {
    ensure!(eps > 0.0 && eps < 1.0, Domain, "eps must lie in (0, 1), got {eps}");
    ensure!(set_bound >= 0.0, Domain, "set_bound must be >= 0, got {set_bound}");
    let (d, lambda, t) = (config.d, config.lambda, config.horizon);
    let reach0 = set_bound + config.r;
    let step = truncation_grid_step(t, config.r);
    let bound = |k: u64| outside_detection_bound(d, lambda, t, reach0, reach0 + k as f64 * step);
    if bound(0) <= eps {
        return Ok(reach0);
    }
    let mut hi = 1u64;
    while bound(hi) > eps {
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if bound(mid) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(reach0 + hi as f64 * step)
}

/// Keep the nodes whose path enters the target before `horizon`.
pub fn thin_by_reach(cloud: &PointCloud, paths: &[NodePath], target: &dyn Target, horizon: f64, env: &Envelope, max_refine: u32, stream: &Stream) -> Result<PointCloud> {
    ensure!(cloud.len() == paths.len(), Domain, "{} points but {} paths", cloud.len(), paths.len());
    let mut points = Vec::new();
    for (i, (p, path)) in cloud.points.iter().zip(paths).enumerate() {
        let mut s = stream.derive(i as u64);
        if path_enters(path, target, horizon, env, max_refine, &mut s) {
            points.push(*p);
        }
    }
    Ok(PointCloud { points, ..cloud.clone() })
}
