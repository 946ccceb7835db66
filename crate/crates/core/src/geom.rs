//! Points, closed target shapes and their exact volumes.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};

/// Largest supported ambient dimension.
pub const MAX_DIM: usize = 8;

/// A point of `R^d` stored in a fixed-size array.
///
/// Coordinates beyond the working dimension are kept at zero, so norms and
/// inner products can be taken over the whole array.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point(pub [f64; MAX_DIM]);

impl Point {
    pub const ZERO: Point = Point([0.0; MAX_DIM]);

    pub fn from_slice(xs: &[f64]) -> Point {
        assert!(xs.len() <= MAX_DIM, "dimension {} exceeds {MAX_DIM}", xs.len());
        let mut p = Point::ZERO;
        p.0[..xs.len()].copy_from_slice(xs);
        p
    }

    /// Point with first coordinate `x` and all others zero.
    pub fn on_axis(x: f64) -> Point {
        let mut p = Point::ZERO;
        p.0[0] = x;
        p
    }

    pub fn coords(&self, d: usize) -> &[f64] {
        &self.0[..d]
    }

    pub fn dot(&self, other: &Point) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (*self - *other).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Linear interpolation `self + w (other - self)`.
    pub fn lerp(&self, other: &Point, w: f64) -> Point {
        *self + (*other - *self) * w
    }
}

impl Add for Point {
    type Output = Point;
    fn add(mut self, rhs: Point) -> Point {
        for (a, b) in self.0.iter_mut().zip(rhs.0.iter()) {
            *a += b;
        }
        self
    }
}

impl AddAssign for Point {
    fn add_assign(&mut self, rhs: Point) {
        for (a, b) in self.0.iter_mut().zip(rhs.0.iter()) {
            *a += b;
        }
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(mut self, rhs: Point) -> Point {
        for (a, b) in self.0.iter_mut().zip(rhs.0.iter()) {
            *a -= b;
        }
        self
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(mut self, k: f64) -> Point {
        for a in self.0.iter_mut() {
            *a *= k;
        }
        self
    }
}

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    // omega_d = omega_{d-2} * 2 pi / d
    let (mut w, start) = if d % 2 == 0 { (1.0, 2) } else { (2.0, 3) };
    let mut k = start;
    while k <= d {
        w *= 2.0 * PI / k as f64;
        k += 2;
    }
    w
}

/// Volume of a ball of radius `r` in `R^d`.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    unit_ball_volume(d) * r.powi(d as i32)
}

/// Radius of the centered ball with volume `v` in `R^d`.
pub fn radius_for_volume(d: usize, v: f64) -> f64 {
    (v / unit_ball_volume(d)).powf(1.0 / d as f64)
}

/// Distance from the origin to the segment `[a, b]`.
pub fn segment_distance_to_origin(a: &Point, b: &Point) -> f64 {
    let ab = *b - *a;
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return a.norm();
    }
    let w = (-a.dot(&ab) / len_sq).clamp(0.0, 1.0);
    a.lerp(b, w).norm()
}

/// A closed bounded subset of `R^d` with an exact volume and a 1-Lipschitz
/// signed distance function (negative inside).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    Ball { center: Point, radius: f64 },
    /// Axis-aligned box. Half-widths beyond the working dimension are infinite.
    Box { center: Point, half: Point },
    Annulus { center: Point, inner: f64, outer: f64 },
}

impl Shape {
    pub fn ball(center: Point, radius: f64) -> Shape {
        Shape::Ball { center, radius }
    }

    pub fn centered_ball(radius: f64) -> Shape {
        Shape::Ball { center: Point::ZERO, radius }
    }

    pub fn boxed(d: usize, center: Point, half_widths: &[f64]) -> Shape {
        assert_eq!(half_widths.len(), d);
        let mut half = Point([f64::INFINITY; MAX_DIM]);
        half.0[..d].copy_from_slice(half_widths);
        Shape::Box { center, half }
    }

    pub fn annulus(center: Point, inner: f64, outer: f64) -> Shape {
        Shape::Annulus { center, inner, outer }
    }

    pub fn sdf(&self, x: &Point) -> f64 {
        match self {
            Shape::Ball { center, radius } => x.dist(center) - radius,
            Shape::Box { center, half } => {
                let mut outside = 0.0;
                let mut inside = f64::NEG_INFINITY;
                for i in 0..MAX_DIM {
                    let q = (x.0[i] - center.0[i]).abs() - half.0[i];
                    if q > 0.0 {
                        outside += q * q;
                    }
                    inside = inside.max(q);
                }
                if outside > 0.0 {
                    outside.sqrt()
                } else {
                    inside.min(0.0)
                }
            }
            Shape::Annulus { center, inner, outer } => {
                let rho = x.dist(center);
                (rho - outer).max(inner - rho)
            }
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.sdf(x) <= 0.0
    }

    pub fn volume(&self, d: usize) -> f64 {
        match self {
            Shape::Ball { radius, .. } => ball_volume(d, *radius),
            Shape::Box { half, .. } => half.0[..d].iter().map(|h| 2.0 * h).product(),
            Shape::Annulus { inner, outer, .. } => ball_volume(d, *outer) - ball_volume(d, *inner),
        }
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self, Shape::Annulus { .. })
    }

    /// Radius of the smallest origin-centered ball containing the shape.
    pub fn extent(&self, d: usize) -> f64 {
        match self {
            Shape::Ball { center, radius } => center.norm() + radius,
            Shape::Box { center, half } => {
                let mut far = Point::ZERO;
                for i in 0..d {
                    far.0[i] = center.0[i].abs() + half.0[i];
                }
                far.norm()
            }
            Shape::Annulus { center, outer, .. } => center.norm() + outer,
        }
    }

    pub fn is_valid(&self, d: usize) -> bool {
        match self {
            Shape::Ball { center, radius } => center.is_finite() && radius.is_finite() && *radius > 0.0,
            Shape::Box { center, half } => {
                center.is_finite() && half.0[..d].iter().all(|h| h.is_finite() && *h > 0.0)
            }
            Shape::Annulus { center, inner, outer } => {
                center.is_finite() && *inner >= 0.0 && outer.is_finite() && outer > inner
            }
        }
    }

    /// Lower and upper bounds on the signed distance along the chord `[a, b]`.
    pub fn chord_sdf_bounds(&self, a: &Point, b: &Point) -> (f64, f64) {
        let sa = self.sdf(a);
        let sb = self.sdf(b);
        match self {
            Shape::Ball { center, radius } => {
                let lo = segment_distance_to_origin(&(*a - *center), &(*b - *center)) - radius;
                (lo, sa.max(sb))
            }
            _ => {
                // any chord point is within half a chord length of an endpoint
                let half = a.dist(b) / 2.0;
                let lo = sa.min(sb) - half;
                let hi = if self.is_convex() { sa.max(sb) } else { sa.max(sb) + half };
                (lo, hi)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_ball_volumes() {
        assert!((unit_ball_volume(1) - 2.0).abs() < 1e-15);
        assert!((unit_ball_volume(2) - PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-14);
        assert!((unit_ball_volume(4) - PI * PI / 2.0).abs() < 1e-14);
    }

    #[test]
    fn radius_volume_roundtrip() {
        for d in 1..=5 {
            let r = radius_for_volume(d, ball_volume(d, 1.7));
            assert!((r - 1.7).abs() < 1e-12);
        }
    }

    #[test]
    fn box_sdf_respects_dimension_padding() {
        let b = Shape::boxed(2, Point::ZERO, &[1.0, 2.0]);
        assert!((b.sdf(&Point::from_slice(&[0.0, 0.0])) + 1.0).abs() < 1e-15);
        assert!((b.sdf(&Point::from_slice(&[3.0, 0.0])) - 2.0).abs() < 1e-15);
        assert!((b.volume(2) - 8.0).abs() < 1e-15);
    }

    #[test]
    fn annulus_contains_ring_only() {
        let a = Shape::annulus(Point::ZERO, 1.0, 2.0);
        assert!(!a.contains(&Point::on_axis(0.5)));
        assert!(a.contains(&Point::on_axis(1.5)));
        assert!(!a.contains(&Point::on_axis(2.5)));
        assert!((a.volume(1) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn chord_bounds_bracket_dense_samples() {
        let shapes = [
            Shape::ball(Point::from_slice(&[0.3, -0.2]), 1.0),
            Shape::boxed(2, Point::from_slice(&[1.0, 0.0]), &[0.5, 1.5]),
            Shape::annulus(Point::ZERO, 0.8, 1.6),
        ];
        let a = Point::from_slice(&[-2.0, 0.4]);
        let b = Point::from_slice(&[2.5, -0.3]);
        for s in &shapes {
            let (lo, hi) = s.chord_sdf_bounds(&a, &b);
            for k in 0..=1000 {
                let v = s.sdf(&a.lerp(&b, k as f64 / 1000.0));
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
