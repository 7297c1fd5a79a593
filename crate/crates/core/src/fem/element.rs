//! Element-level quantities: the SUPG parameter, the element matrix whose
//! action on `u_h` gives `Q^ξ = a_τ(u_h, φ_ξ)`, and the load `F^ξ = ℓ_τ(φ_ξ)`.

use crate::fem::{NodalField, ProblemSpec, Stabilization};
use crate::geometry::{Point, Triangle, Vec2};
use crate::mesh::{ElementSplit, TriMesh};
use crate::{Error, Result};

/// Evaluation point handed to coefficient fields.
#[derive(Clone, Copy, Debug)]
pub struct QPoint<'a> {
    pub element: usize,
    pub x: Point,
    /// Barycentric coordinates relative to the element.
    pub bary: [f64; 3],
    pub nodes: [usize; 3],
    pub grads: &'a [Vec2; 3],
}

/// Geometry of one element with its P1 basis gradients.
#[derive(Clone, Copy, Debug)]
pub struct ElementGeometry {
    pub element: usize,
    pub nodes: [usize; 3],
    pub triangle: Triangle,
    pub grads: [Vec2; 3],
}

impl ElementGeometry {
    pub fn new(mesh: &TriMesh, e: usize) -> Result<Self> {
        mesh.check_element(e)?;
        let triangle = mesh.triangle(e);
        Ok(Self {
            element: e,
            nodes: mesh.triangles()[e],
            grads: triangle.basis_gradients()?,
            triangle,
        })
    }

    #[inline]
    pub fn qpoint(&self, bary: [f64; 3], x: Point) -> QPoint<'_> {
        QPoint {
            element: self.element,
            x,
            bary,
            nodes: self.nodes,
            grads: &self.grads,
        }
    }

    pub fn centroid(&self) -> QPoint<'_> {
        self.qpoint([1.0 / 3.0; 3], self.triangle.barycenter())
    }

    pub fn split(&self) -> ElementSplit {
        ElementSplit::new(self.element, &self.triangle)
    }
}

/// `δ = h/(2|v|) (coth Pe - 1/Pe)` with `Pe = |v| h / (2k)`; zero for
/// vanishing velocity.
pub fn supg_delta(h: f64, k: f64, speed: f64) -> f64 {
    if speed < 1e-14 {
        return 0.0;
    }
    let pe = speed * h / (2.0 * k);
    // coth(x) - 1/x loses all digits for small x; use its series there
    let xi = if pe < 1e-3 {
        let p2 = pe * pe;
        pe * (1.0 / 3.0 - p2 / 45.0 + 2.0 * p2 * p2 / 945.0)
    } else {
        1.0 / pe.tanh() - 1.0 / pe
    };
    h / (2.0 * speed) * xi
}

pub fn stabilization_delta(geom: &ElementGeometry, spec: &ProblemSpec) -> f64 {
    match spec.stabilization {
        Stabilization::Zero => 0.0,
        Stabilization::ClassicSupg => {
            let c = geom.centroid();
            let k = spec.diffusivity.value(&c);
            let v = spec.velocity.value(&c);
            supg_delta(geom.triangle.diameter(), k, v.norm())
        }
    }
}

/// Element matrix `K[ξ][η] = a_τ(φ_η, φ_ξ)`.
///
/// For P1 trial functions `Δφ_η = 0` on the element, so the SUPG residual of
/// `φ_η` reduces to `-∇k·∇φ_η + φ_η ∇·v + v·∇φ_η`.
pub fn element_matrix(geom: &ElementGeometry, spec: &ProblemSpec, delta: f64) -> Result<[[f64; 3]; 3]> {
    let g = &geom.grads;
    let rule = &spec.quadrature.operator;
    let area = geom.triangle.area();
    let mut k_mat = [[0.0; 3]; 3];
    for (&lam, &w) in rule.points.iter().zip(&rule.weights) {
        let q = geom.qpoint(lam, geom.triangle.point_at(lam));
        let k = spec.diffusivity.value(&q);
        if !(k > 0.0) {
            return Err(Error::NonPositiveDiffusivity {
                element: geom.element,
                value: k,
            });
        }
        let v = spec.velocity.value(&q);
        let (grad_k, div_v) = if delta != 0.0 {
            (spec.diffusivity.gradient(&q), spec.velocity.divergence(&q))
        } else {
            (Vec2::ZERO, 0.0)
        };
        let wa = w * area;
        for xi in 0..3 {
            let streamline = v.dot(g[xi]);
            for eta in 0..3 {
                let galerkin = (g[eta] * k - v * lam[eta]).dot(g[xi]);
                let residual = -grad_k.dot(g[eta]) + lam[eta] * div_v + v.dot(g[eta]);
                k_mat[xi][eta] += wa * (galerkin + delta * residual * streamline);
            }
        }
    }
    Ok(k_mat)
}

/// Element load `F[ξ] = ∫_τ f (φ_ξ + δ v·∇φ_ξ)`, integrated on the six
/// barycentric sub-triangles so that `Σ_ξ F^ξ` equals the sum of the
/// quadrilateral forcing integrals to rounding.
pub fn element_load(geom: &ElementGeometry, split: &ElementSplit, spec: &ProblemSpec, delta: f64) -> [f64; 3] {
    if spec.forcing.is_zero() {
        return [0.0; 3];
    }
    let g = &geom.grads;
    let parts = split.subtriangles();
    let mut out = [0.0; 3];
    for part in &parts {
        let rule = &spec.quadrature.forcing;
        let area = part.triangle.area();
        for (&lam_local, &w) in rule.points.iter().zip(&rule.weights) {
            let lam = part.bary_at(lam_local);
            let q = geom.qpoint(lam, part.triangle.point_at(lam_local));
            let f = spec.forcing.value(&q);
            let v = if delta != 0.0 { spec.velocity.value(&q) } else { Vec2::ZERO };
            for xi in 0..3 {
                out[xi] += w * area * f * (lam[xi] + delta * v.dot(g[xi]));
            }
        }
    }
    out
}

/// Exact P1 mass matrix.
pub fn element_mass(geom: &ElementGeometry) -> [[f64; 3]; 3] {
    let a = geom.triangle.area() / 12.0;
    std::array::from_fn(|i| std::array::from_fn(|j| if i == j { 2.0 * a } else { a }))
}

/// `Q^ξ = a_τ(u_h, φ_ξ)` for the three local vertices of element `e`.
pub fn element_q(mesh: &TriMesh, e: usize, u_h: &NodalField, spec: &ProblemSpec) -> Result<[f64; 3]> {
    u_h.check_len(mesh)?;
    let geom = ElementGeometry::new(mesh, e)?;
    let delta = stabilization_delta(&geom, spec);
    let k = element_matrix(&geom, spec, delta)?;
    Ok(apply3(&k, u_h.local(geom.nodes)))
}

/// `F^ξ = ℓ_τ(φ_ξ)` for the three local vertices of element `e`.
pub fn element_f(mesh: &TriMesh, e: usize, spec: &ProblemSpec) -> Result<[f64; 3]> {
    let geom = ElementGeometry::new(mesh, e)?;
    let delta = stabilization_delta(&geom, spec);
    Ok(element_load(&geom, &geom.split(), spec, delta))
}

#[inline]
pub(crate) fn apply3(m: &[[f64; 3]; 3], u: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| m[i][0] * u[0] + m[i][1] * u[1] + m[i][2] * u[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{ScalarField, VelocityField};

    fn reference_mesh() -> TriMesh {
        TriMesh::from_parts(
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    fn spec(k: f64, v: Vec2, f: f64, s: Stabilization) -> ProblemSpec {
        ProblemSpec::new(
            ScalarField::Constant(k),
            VelocityField::Constant(v),
            ScalarField::Constant(f),
            ScalarField::Constant(0.0),
        )
        .with_stabilization(s)
    }

    #[test]
    fn zero_strategy_gives_zero_delta() {
        let m = reference_mesh();
        let g = ElementGeometry::new(&m, 0).unwrap();
        assert_eq!(stabilization_delta(&g, &spec(0.01, Vec2::new(1.0, 1.0), 0.0, Stabilization::Zero)), 0.0);
    }

    #[test]
    fn delta_small_peclet_limit() {
        assert_eq!(supg_delta(0.1, 1.0, 0.0), 0.0);
        let d = supg_delta(1e-3, 1.0, 1e-3);
        // Pe = 5e-7, δ ≈ h Pe / (6|v|)
        assert!((d - 1e-3 * 5e-7 / 6e-3).abs() < 1e-18);
        // series and closed form agree at the switch point
        let a = supg_delta(2e-3, 1.0, 0.999);
        let b = supg_delta(2e-3, 1.0, 1.001);
        assert!((a - b).abs() / b < 5e-3);
    }

    #[test]
    fn delta_matches_direct_evaluation() {
        // k = 0.01, |v| = √2, h = √2/40: Pe = 2.5
        let h = 2f64.sqrt() / 40.0;
        let speed = 2f64.sqrt();
        let pe: f64 = 2.5;
        // coth(2.5) from exponentials as an independent route
        let coth = (1.0 + (-2.0 * pe).exp()) / (1.0 - (-2.0 * pe).exp());
        let expected = h / (2.0 * speed) * (coth - 1.0 / pe);
        assert!((supg_delta(h, 0.01, speed) - expected).abs() < 1e-15);
        // high-precision reference (mpmath, 30 digits)
        assert!((supg_delta(h, 0.01, speed) - 0.007_669_591_372_657_605_777).abs() < 1e-16);
    }

    #[test]
    fn q_vanishes_for_constants_without_advection() {
        let m = reference_mesh();
        let u = NodalField::new(vec![2.5; 3]);
        let q = element_q(&m, 0, &u, &spec(1.0, Vec2::ZERO, 0.0, Stabilization::Zero)).unwrap();
        assert!(q.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn q_for_linear_field_on_reference_triangle() {
        let m = reference_mesh();
        let u = NodalField::new(vec![0.0, 1.0, 0.0]); // u = x
        let q = element_q(&m, 0, &u, &spec(1.0, Vec2::ZERO, 0.0, Stabilization::Zero)).unwrap();
        assert!((q[1] - 0.5).abs() < 1e-15);
        assert!((q[0] + 0.5).abs() < 1e-15);
        assert!(q[2].abs() < 1e-15);
    }

    #[test]
    fn q_sums_to_zero_and_f_sums_to_integral() {
        let m = reference_mesh();
        let u = NodalField::new(vec![0.3, -1.2, 2.0]);
        let s = ProblemSpec::new(
            ScalarField::analytic(|p| 1.0 + p.x + p.y * p.y),
            VelocityField::analytic(|p| Vec2::new(1.0 + p.y, -p.x)),
            ScalarField::analytic(|p| (p.x * 3.0).sin() + p.y),
            ScalarField::Constant(0.0),
        )
        .with_stabilization(Stabilization::ClassicSupg);
        let q = element_q(&m, 0, &u, &s).unwrap();
        assert!(q.iter().sum::<f64>().abs() < 1e-14);
        let f = element_f(&m, 0, &s).unwrap();
        let geom = ElementGeometry::new(&m, 0).unwrap();
        let exact = s.quadrature.forcing.apply_composite(&geom.split().subtriangles(), |_, x| (x.x * 3.0).sin() + x.y);
        assert!((f.iter().sum::<f64>() - exact).abs() < 1e-14);
    }

    #[test]
    fn unit_forcing_galerkin_load() {
        let m = TriMesh::uniform(2).unwrap();
        let s = spec(1.0, Vec2::ZERO, 1.0, Stabilization::Zero);
        for e in 0..m.num_elements() {
            let f = element_f(&m, e, &s).unwrap();
            let a = m.triangle(e).area();
            for v in f {
                assert!((v - a / 3.0).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn negative_diffusivity_rejected() {
        let m = reference_mesh();
        let u = NodalField::zeros(3);
        let err = element_q(&m, 0, &u, &spec(-1.0, Vec2::ZERO, 0.0, Stabilization::Zero)).unwrap_err();
        assert!(matches!(err, Error::NonPositiveDiffusivity { element: 0, .. }));
    }

    #[test]
    fn mass_matrix_integrates_products() {
        let m = reference_mesh();
        let g = ElementGeometry::new(&m, 0).unwrap();
        let mm = element_mass(&g);
        let total: f64 = mm.iter().flatten().sum();
        assert!((total - 0.5).abs() < 1e-16);
        assert!((mm[0][0] - 1.0 / 12.0).abs() < 1e-16);
    }
}
