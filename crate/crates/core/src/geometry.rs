//! Planar points, vectors and affine triangles.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

pub type Point = Vec2;

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Clockwise rotation by 90 degrees. For a counter-clockwise boundary
    /// traversal this points out of the enclosed region.
    pub fn perp_right(self) -> Vec2 {
        Vec2::new(self.y, -self.x)
    }

    pub fn midpoint(self, other: Vec2) -> Vec2 {
        Vec2::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}

/// Signed area of a closed polygon (shoelace formula); positive when the
/// vertices are counter-clockwise.
pub fn polygon_signed_area(points: &[Point]) -> f64 {
    let n = points.len();
    0.5 * (0..n)
        .map(|i| points[i].cross(points[(i + 1) % n]))
        .sum::<f64>()
}

/// A straight-sided triangle given by its three vertices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangle {
    pub vertices: [Point; 3],
}

impl Triangle {
    pub fn new(a: Point, b: Point, c: Point) -> Self {
        Self { vertices: [a, b, c] }
    }

    pub fn signed_area(&self) -> f64 {
        let [a, b, c] = self.vertices;
        0.5 * (b - a).cross(c - a)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn barycenter(&self) -> Point {
        let [a, b, c] = self.vertices;
        Vec2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
    }

    /// Longest edge length.
    pub fn diameter(&self) -> f64 {
        let [a, b, c] = self.vertices;
        (b - a).norm().max((c - b).norm()).max((a - c).norm())
    }

    /// Cartesian point for barycentric coordinates `lambda`.
    pub fn point_at(&self, lambda: [f64; 3]) -> Point {
        let [a, b, c] = self.vertices;
        a * lambda[0] + b * lambda[1] + c * lambda[2]
    }

    /// Constant gradients of the three P1 hat functions.
    pub fn basis_gradients(&self) -> Result<[Vec2; 3]> {
        let two_area = 2.0 * self.signed_area();
        if two_area.abs() <= f64::EPSILON * self.diameter().powi(2) {
            return Err(Error::DegenerateTriangle {
                area: 0.5 * two_area,
            });
        }
        let [a, b, c] = self.vertices;
        // grad(lambda_i) = rot(opposite edge) / (2|T|)
        let g = |p: Point, q: Point| Vec2::new(p.y - q.y, q.x - p.x) * (1.0 / two_area);
        Ok([g(b, c), g(c, a), g(a, b)])
    }
}
