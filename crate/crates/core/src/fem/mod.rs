//! Problem description and the CGFEM/SUPG discretization of
//! `∇·(-k∇u + v u) = f` with Dirichlet data `g`.

mod assembly;
pub(crate) mod element;
pub mod solver;

use std::fmt;
use std::sync::Arc;

use crate::geometry::{Point, Vec2};
use crate::mesh::TriMesh;
use crate::quadrature::QuadratureConfig;
use crate::{Error, Result};

pub use assembly::{assemble, assemble_transient, SparseSystem};
pub use element::{element_f, element_load, element_mass, element_matrix, element_q, stabilization_delta, supg_delta, ElementGeometry, QPoint};
pub use solver::{solve, solve_from, Krylov, SolverOptions};

pub type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(Point) -> Vec2 + Send + Sync>;

/// Step for central differences when a coefficient has no analytic derivative.
const FD_STEP: f64 = 1e-6;

/// Coefficient values of a P1 function, one per mesh vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalField {
    values: Vec<f64>,
}

impl NodalField {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: &TriMesh, f: impl Fn(Point) -> f64) -> Self {
        Self {
            values: mesh.vertices().iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_len(&self, mesh: &TriMesh) -> Result<()> {
        if self.len() != mesh.num_vertices() {
            return Err(Error::FieldLength {
                expected: mesh.num_vertices(),
                got: self.len(),
            });
        }
        Ok(())
    }

    pub fn local(&self, nodes: [usize; 3]) -> [f64; 3] {
        nodes.map(|v| self.values[v])
    }

    /// Constant gradient on element `e`.
    pub fn element_gradient(&self, mesh: &TriMesh, e: usize) -> Result<Vec2> {
        let g = mesh.triangle(e).basis_gradients()?;
        let u = self.local(mesh.triangles()[e]);
        Ok(g[0] * u[0] + g[1] * u[1] + g[2] * u[2])
    }

    /// Per-element gradients of the whole field.
    pub fn gradients(&self, mesh: &TriMesh) -> Result<Vec<Vec2>> {
        (0..mesh.num_elements()).map(|e| self.element_gradient(mesh, e)).collect()
    }

    pub fn max_abs_diff(&self, other: &NodalField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Scalar coefficient (diffusivity, forcing or Dirichlet data).
#[derive(Clone)]
pub enum ScalarField {
    Constant(f64),
    Analytic { value: ScalarFn, gradient: Option<VectorFn> },
    /// P1 field on the mesh the problem is solved on.
    Nodal(NodalField),
}

impl ScalarField {
    pub fn analytic(f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        Self::Analytic {
            value: Arc::new(f),
            gradient: None,
        }
    }

    pub fn with_gradient(self, g: impl Fn(Point) -> Vec2 + Send + Sync + 'static) -> Self {
        match self {
            Self::Analytic { value, .. } => Self::Analytic {
                value,
                gradient: Some(Arc::new(g)),
            },
            other => other,
        }
    }

    #[inline]
    pub fn value(&self, q: &QPoint) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Analytic { value, .. } => value(q.x),
            Self::Nodal(u) => (0..3).map(|i| q.bary[i] * u.values[q.nodes[i]]).sum(),
        }
    }

    pub fn gradient(&self, q: &QPoint) -> Vec2 {
        match self {
            Self::Constant(_) => Vec2::ZERO,
            Self::Analytic { gradient: Some(g), .. } => g(q.x),
            Self::Analytic { value, gradient: None } => {
                let dx = Vec2::new(FD_STEP, 0.0);
                let dy = Vec2::new(0.0, FD_STEP);
                Vec2::new(
                    (value(q.x + dx) - value(q.x - dx)) / (2.0 * FD_STEP),
                    (value(q.x + dy) - value(q.x - dy)) / (2.0 * FD_STEP),
                )
            }
            Self::Nodal(u) => (0..3).fold(Vec2::ZERO, |acc, i| acc + q.grads[i] * u.values[q.nodes[i]]),
        }
    }

    pub fn value_at_vertex(&self, mesh: &TriMesh, z: usize) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Analytic { value, .. } => value(mesh.vertices()[z]),
            Self::Nodal(u) => u.values[z],
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Constant(c) if *c == 0.0)
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Analytic { gradient, .. } => write!(f, "Analytic {{ gradient: {} }}", gradient.is_some()),
            Self::Nodal(u) => write!(f, "Nodal({} values)", u.len()),
        }
    }
}

/// Advective velocity.
#[derive(Clone)]
pub enum VelocityField {
    Constant(Vec2),
    Analytic { value: VectorFn, divergence: Option<ScalarFn> },
    /// One constant vector per element, e.g. a scaled P1 gradient.
    Elementwise(Vec<Vec2>),
}

impl VelocityField {
    pub fn analytic(v: impl Fn(Point) -> Vec2 + Send + Sync + 'static) -> Self {
        Self::Analytic {
            value: Arc::new(v),
            divergence: None,
        }
    }

    pub fn with_divergence(self, d: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        match self {
            Self::Analytic { value, .. } => Self::Analytic {
                value,
                divergence: Some(Arc::new(d)),
            },
            other => other,
        }
    }

    #[inline]
    pub fn value(&self, q: &QPoint) -> Vec2 {
        match self {
            Self::Constant(v) => *v,
            Self::Analytic { value, .. } => value(q.x),
            Self::Elementwise(vs) => vs[q.element],
        }
    }

    pub fn divergence(&self, q: &QPoint) -> f64 {
        match self {
            Self::Constant(_) | Self::Elementwise(_) => 0.0,
            Self::Analytic { divergence: Some(d), .. } => d(q.x),
            Self::Analytic { value, divergence: None } => {
                let dx = Vec2::new(FD_STEP, 0.0);
                let dy = Vec2::new(0.0, FD_STEP);
                ((value(q.x + dx).x - value(q.x - dx).x) + (value(q.x + dy).y - value(q.x - dy).y)) / (2.0 * FD_STEP)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Constant(v) if *v == Vec2::ZERO)
    }
}

impl fmt::Debug for VelocityField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(v) => write!(f, "Constant({}, {})", v.x, v.y),
            Self::Analytic { divergence, .. } => write!(f, "Analytic {{ divergence: {} }}", divergence.is_some()),
            Self::Elementwise(vs) => write!(f, "Elementwise({} elements)", vs.len()),
        }
    }
}

/// Choice of the streamline-diffusion coefficient `δ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stabilization {
    /// `δ = 0`: plain Galerkin (CGFEM).
    #[default]
    Zero,
    /// `δ_τ = h/(2|v|) (coth Pe - 1/Pe)` from element-centroid values.
    ClassicSupg,
}

/// Coefficients, data and discretization choices for one steady problem.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub diffusivity: ScalarField,
    pub velocity: VelocityField,
    pub forcing: ScalarField,
    pub dirichlet: ScalarField,
    pub stabilization: Stabilization,
    pub quadrature: QuadratureConfig,
    /// Set for backward-Euler steps; conservation checks then need the
    /// previous state.
    pub time_dependent: bool,
}

impl ProblemSpec {
    pub fn new(diffusivity: ScalarField, velocity: VelocityField, forcing: ScalarField, dirichlet: ScalarField) -> Self {
        Self {
            diffusivity,
            velocity,
            forcing,
            dirichlet,
            stabilization: Stabilization::Zero,
            quadrature: QuadratureConfig::default(),
            time_dependent: false,
        }
    }

    pub fn with_stabilization(mut self, s: Stabilization) -> Self {
        self.stabilization = s;
        self
    }

    pub fn with_quadrature(mut self, q: QuadratureConfig) -> Self {
        self.quadrature = q;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Triangle;

    fn qpoint_at<'a>(x: Point, grads: &'a [Vec2; 3]) -> QPoint<'a> {
        QPoint {
            element: 0,
            x,
            bary: [1.0 / 3.0; 3],
            nodes: [0, 1, 2],
            grads,
        }
    }

    #[test]
    fn finite_difference_fallbacks_match_analytic() {
        let grads = [Vec2::ZERO; 3];
        let q = qpoint_at(Vec2::new(0.3, 0.7), &grads);
        let k = ScalarField::analytic(|p| 1.0 + p.x * p.x + p.x * p.y);
        let g = k.gradient(&q);
        assert!((g.x - (2.0 * 0.3 + 0.7)).abs() < 1e-8);
        assert!((g.y - 0.3).abs() < 1e-8);
        let v = VelocityField::analytic(|p| Vec2::new(p.x * p.y, p.y * p.y));
        assert!((v.divergence(&q) - (0.7 + 1.4)).abs() < 1e-8);
    }

    #[test]
    fn nodal_scalar_field_is_p1() {
        let t = Triangle::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0));
        let grads = t.basis_gradients().unwrap();
        let f = ScalarField::Nodal(NodalField::new(vec![1.0, 3.0, -2.0]));
        let q = QPoint {
            element: 0,
            x: t.point_at([0.2, 0.5, 0.3]),
            bary: [0.2, 0.5, 0.3],
            nodes: [0, 1, 2],
            grads: &grads,
        };
        assert!((f.value(&q) - (0.2 + 1.5 - 0.6)).abs() < 1e-15);
        assert_eq!(f.gradient(&q), Vec2::new(2.0, -3.0));
    }

    #[test]
    fn element_gradient_of_linear_interpolant() {
        let mesh = TriMesh::uniform(3).unwrap();
        let u = NodalField::interpolate(&mesh, |p| 2.0 * p.x - 5.0 * p.y + 1.0);
        for g in u.gradients(&mesh).unwrap() {
            assert!((g.x - 2.0).abs() < 1e-12 && (g.y + 5.0).abs() < 1e-12);
        }
    }
}
