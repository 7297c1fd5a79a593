//! Quadrature on triangles (barycentric rules) and on straight segments
//! (Gauss-Legendre mapped to `[0, 1]`).

use crate::geometry::{Point, Triangle};
use crate::mesh::{Segment, SubTriangle};
use crate::{Error, Result};

/// Symmetric rule on a triangle. Weights sum to one and are scaled by the
/// triangle area when applied.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: u32,
}

impl TriangleRule {
    pub fn centroid() -> Self {
        Self {
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![1.0],
            degree: 1,
        }
    }

    /// Three interior points, exact for quadratics.
    pub fn degree2() -> Self {
        let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
        Self {
            points: vec![[a, b, b], [b, a, b], [b, b, a]],
            weights: vec![1.0 / 3.0; 3],
            degree: 2,
        }
    }

    /// Seven-point Radon rule, exact for quintics.
    pub fn degree5() -> Self {
        let s15 = 15f64.sqrt();
        let a1 = (9.0 - 2.0 * s15) / 21.0;
        let b1 = (6.0 + s15) / 21.0;
        let a2 = (9.0 + 2.0 * s15) / 21.0;
        let b2 = (6.0 - s15) / 21.0;
        let w1 = (155.0 + s15) / 1200.0;
        let w2 = (155.0 - s15) / 1200.0;
        Self {
            points: vec![
                [1.0 / 3.0; 3],
                [a1, b1, b1],
                [b1, a1, b1],
                [b1, b1, a1],
                [a2, b2, b2],
                [b2, a2, b2],
                [b2, b2, a2],
            ],
            weights: vec![9.0 / 40.0, w1, w1, w1, w2, w2, w2],
            degree: 5,
        }
    }

    pub fn with_degree(degree: u32) -> Result<Self> {
        match degree {
            0 | 1 => Ok(Self::centroid()),
            2 => Ok(Self::degree2()),
            3..=5 => Ok(Self::degree5()),
            d => Err(Error::InvalidConfig(format!("no triangle rule of degree {d}"))),
        }
    }

    /// `Σ w_i |τ| g(λ_i, x_i)` without validity checks; used on hot paths
    /// where the triangle is known to be valid.
    #[inline]
    pub fn apply<F: FnMut([f64; 3], Point) -> f64>(&self, tri: &Triangle, mut g: F) -> f64 {
        let area = tri.area();
        let s: f64 = self
            .points
            .iter()
            .zip(&self.weights)
            .map(|(&lam, &w)| w * g(lam, tri.point_at(lam)))
            .sum();
        area * s
    }

    /// Applies the rule on each sub-triangle of an element. `g` receives the
    /// barycentric coordinates relative to the parent element.
    pub fn apply_composite<F: FnMut([f64; 3], Point) -> f64>(&self, parts: &[SubTriangle], mut g: F) -> f64 {
        parts
            .iter()
            .map(|st| self.apply(&st.triangle, |lam, x| g(st.bary_at(lam), x)))
            .sum()
    }
}

/// Gauss-Legendre rule on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub degree: u32,
}

impl SegmentRule {
    pub fn gauss(n: usize) -> Result<Self> {
        let (nodes, weights): (Vec<f64>, Vec<f64>) = match n {
            1 => (vec![0.0], vec![2.0]),
            2 => {
                let a = 1.0 / 3f64.sqrt();
                (vec![-a, a], vec![1.0, 1.0])
            }
            3 => {
                let a = 0.6f64.sqrt();
                (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
            }
            4 => {
                let r = 2.0 / 7.0 * 1.2f64.sqrt();
                let a = (3.0 / 7.0 - r).sqrt();
                let b = (3.0 / 7.0 + r).sqrt();
                let wa = (18.0 + 30f64.sqrt()) / 36.0;
                let wb = (18.0 - 30f64.sqrt()) / 36.0;
                (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
            }
            _ => return Err(Error::InvalidConfig(format!("no {n}-point Gauss rule"))),
        };
        Ok(Self {
            points: nodes.iter().map(|t| 0.5 * (t + 1.0)).collect(),
            weights: weights.iter().map(|w| 0.5 * w).collect(),
            degree: 2 * n as u32 - 1,
        })
    }

    pub fn gauss2() -> Self {
        Self::gauss(2).expect("2-point rule exists")
    }

    /// `|b - a| Σ w_i g(t_i)` over a stored segment, `g` taking the parameter.
    #[inline]
    pub fn apply<F: FnMut(f64) -> f64>(&self, seg: &Segment, mut g: F) -> f64 {
        let s: f64 = self.points.iter().zip(&self.weights).map(|(&t, &w)| w * g(t)).sum();
        seg.length() * s
    }
}

/// `∫_τ g dx` with the given rule.
pub fn integrate_triangle<F: Fn(Point) -> f64>(rule: &TriangleRule, tri: &Triangle, g: F) -> Result<f64> {
    let area = tri.signed_area();
    if area.abs() <= f64::EPSILON * tri.diameter().powi(2) {
        return Err(Error::DegenerateTriangle { area });
    }
    Ok(rule.apply(tri, |_, x| g(x)))
}

/// `∫_a^b g dl` along the straight segment from `a` to `b`.
pub fn integrate_segment<F: Fn(Point) -> f64>(rule: &SegmentRule, a: Point, b: Point, g: F) -> Result<f64> {
    let len = (b - a).norm();
    if len == 0.0 {
        return Err(Error::ZeroLengthSegment);
    }
    let s: f64 = rule
        .points
        .iter()
        .zip(&rule.weights)
        .map(|(&t, &w)| w * g(a + (b - a) * t))
        .sum();
    Ok(len * s)
}

/// Rules used by assembly, post-processing and error evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureConfig {
    /// Forcing terms, applied on the six barycentric sub-triangles of each element.
    pub forcing: TriangleRule,
    /// Bilinear-form terms (products of P1 quantities with coefficients).
    pub operator: TriangleRule,
    /// Control-volume edge integrals.
    pub segment: SegmentRule,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            forcing: TriangleRule::degree5(),
            operator: TriangleRule::degree2(),
            segment: SegmentRule::gauss2(),
        }
    }
}
