//! Model problems with closed-form data.
//!
//! The forcings of the manufactured solutions were derived by hand and are
//! checked against finite differences in the tests below.

use std::sync::Arc;

use crate::fem::{ProblemSpec, ScalarField, ScalarFn, Stabilization, VectorFn, VelocityField};
use crate::geometry::{Point, Vec2};
use crate::mesh::TriMesh;
use crate::fem::NodalField;

/// Exact solution with its gradient and total flux `-k∇u + v u`.
#[derive(Clone)]
pub struct ExactSolution {
    pub value: ScalarFn,
    pub gradient: VectorFn,
    pub flux: VectorFn,
}

impl std::fmt::Debug for ExactSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ExactSolution")
    }
}

#[derive(Clone, Debug)]
pub struct Problem {
    pub name: &'static str,
    pub spec: ProblemSpec,
    pub exact: Option<ExactSolution>,
}

/// One-dimensional boundary-layer profile `s - (e^{s/k} - 1)/(e^{1/k} - 1)`
/// and its first two derivatives, evaluated without overflow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layer {
    pub k: f64,
}

impl Layer {
    fn denom(self) -> f64 {
        -(-1.0 / self.k).exp_m1()
    }

    pub fn value(self, s: f64) -> f64 {
        s - (((s - 1.0) / self.k).exp() - (-1.0 / self.k).exp()) / self.denom()
    }

    pub fn d1(self, s: f64) -> f64 {
        1.0 - ((s - 1.0) / self.k).exp() / (self.k * self.denom())
    }

    pub fn d2(self, s: f64) -> f64 {
        -((s - 1.0) / self.k).exp() / (self.k * self.k * self.denom())
    }
}

/// `u = X(x) X(y)` built from a [`Layer`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerProduct {
    pub layer: Layer,
}

impl LayerProduct {
    pub fn value(self, p: Point) -> f64 {
        self.layer.value(p.x) * self.layer.value(p.y)
    }

    pub fn gradient(self, p: Point) -> Vec2 {
        let l = self.layer;
        Vec2::new(l.d1(p.x) * l.value(p.y), l.value(p.x) * l.d1(p.y))
    }

    pub fn laplacian(self, p: Point) -> f64 {
        let l = self.layer;
        l.d2(p.x) * l.value(p.y) + l.value(p.x) * l.d2(p.y)
    }
}

/// `k = 1`, `v = (1, 1)`, `u = (x - x²)(y - y²)`, homogeneous Dirichlet data.
pub fn example1() -> Problem {
    let b = |s: f64| s - s * s;
    let db = |s: f64| 1.0 - 2.0 * s;
    let v = Vec2::new(1.0, 1.0);
    let spec = ProblemSpec::new(
        ScalarField::Constant(1.0),
        VelocityField::Constant(v),
        ScalarField::analytic(move |p| 2.0 * b(p.y) + 2.0 * b(p.x) + db(p.x) * b(p.y) + b(p.x) * db(p.y)),
        ScalarField::Constant(0.0),
    );
    let value: ScalarFn = Arc::new(move |p| b(p.x) * b(p.y));
    let gradient: VectorFn = Arc::new(move |p| Vec2::new(db(p.x) * b(p.y), b(p.x) * db(p.y)));
    let (u, g) = (value.clone(), gradient.clone());
    Problem {
        name: "example1",
        spec,
        exact: Some(ExactSolution {
            value,
            gradient,
            flux: Arc::new(move |p| v * u(p) - g(p)),
        }),
    }
}

/// `k = 0.01`, `v = (1, 1)`, `u = X(x) X(y)` with boundary layers at `x = 1`
/// and `y = 1`. Since `-kX'' + X' = 1`, the forcing is `X(x) + X(y)`.
pub fn example2() -> Problem {
    let k = 0.01;
    let layer = Layer { k };
    let u = LayerProduct { layer };
    let v = Vec2::new(1.0, 1.0);
    let spec = ProblemSpec::new(
        ScalarField::Constant(k),
        VelocityField::Constant(v),
        ScalarField::analytic(move |p| layer.value(p.x) + layer.value(p.y)),
        ScalarField::Constant(0.0),
    )
    .with_stabilization(Stabilization::ClassicSupg);
    Problem {
        name: "example2",
        spec,
        exact: Some(ExactSolution {
            value: Arc::new(move |p| u.value(p)),
            gradient: Arc::new(move |p| u.gradient(p)),
            flux: Arc::new(move |p| v * u.value(p) - u.gradient(p) * k),
        }),
    }
}

/// `k = 1`, `v = 0`, `f = 0`, `u = 1 + 2x - 3y`; reproduced exactly by P1.
pub fn patch() -> Problem {
    let value: ScalarFn = Arc::new(|p: Point| 1.0 + 2.0 * p.x - 3.0 * p.y);
    let u = value.clone();
    Problem {
        name: "patch",
        spec: ProblemSpec::new(
            ScalarField::Constant(1.0),
            VelocityField::Constant(Vec2::ZERO),
            ScalarField::Constant(0.0),
            ScalarField::Analytic { value: u, gradient: None },
        ),
        exact: Some(ExactSolution {
            value,
            gradient: Arc::new(|_| Vec2::new(2.0, -3.0)),
            flux: Arc::new(|_| Vec2::new(-2.0, 3.0)),
        }),
    }
}

pub const CYLINDER_CENTER: Point = Vec2 { x: 0.25, y: 0.5 };
pub const CYLINDER_RADIUS: f64 = 0.2;

/// Rigid rotation about `(0.5, 0.5)` with period `2π`.
pub fn rotation(p: Point) -> Vec2 {
    Vec2::new(p.y - 0.5, 0.5 - p.x)
}

/// Steady part of the rotating-cylinder problem: `k = 1e-5`, rotational
/// `v`, `f = 0`, `g = 0`, SUPG.
pub fn rotating_cylinder() -> Problem {
    Problem {
        name: "example3",
        spec: ProblemSpec::new(
            ScalarField::Constant(1e-5),
            VelocityField::analytic(rotation).with_divergence(|_| 0.0),
            ScalarField::Constant(0.0),
            ScalarField::Constant(0.0),
        )
        .with_stabilization(Stabilization::ClassicSupg),
        exact: None,
    }
}

/// Nodal indicator of the initial disk.
pub fn cylinder_initial(mesh: &TriMesh) -> NodalField {
    NodalField::interpolate(mesh, |p| {
        let d = p - CYLINDER_CENTER;
        if d.dot(d) <= CYLINDER_RADIUS * CYLINDER_RADIUS {
            1.0
        } else {
            0.0
        }
    })
}
