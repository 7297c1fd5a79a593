//! Steady drift-diffusion system solved by successive substitution.
//!
//! ```text
//! -∇·(λ²∇ψ)                 = p - n + C
//!  ∇·(-n μ_n ∇ψ + D_n ∇n)   = R_n
//!  ∇·( p μ_p ∇ψ + D_p ∇p)   = R_p
//! ```
//!
//! Each carrier equation is cast as `∇·(-k∇u + v u) = f` with `k = D`,
//! `f = -R` and `v = μ_n∇ψ_h` for electrons, `v = -μ_p∇ψ_h` for holes.

use std::sync::Arc;

use crate::fem::{assemble, solve_from, NodalField, ProblemSpec, ScalarField, SolverOptions, Stabilization, VelocityField};
use crate::geometry::{Point, Vec2};
use crate::mesh::TriMesh;
use crate::postprocess::{postprocess_all, ElementFlux};
use crate::problems::{Layer, LayerProduct};
use crate::quadrature::QuadratureConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Carrier {
    Electrons,
    Holes,
}

#[derive(Clone, Debug)]
pub struct DriftSpec {
    pub lambda: f64,
    pub mu_n: f64,
    pub mu_p: f64,
    pub d_n: f64,
    pub d_p: f64,
    pub doping: f64,
    /// Right-hand side of the electron equation.
    pub r_n: ScalarField,
    /// Right-hand side of the hole equation.
    pub r_p: ScalarField,
    pub psi_bc: ScalarField,
    pub n_bc: ScalarField,
    pub p_bc: ScalarField,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Relaxation of the outer update, `1.0` is plain substitution.
    pub damping: f64,
    pub carrier_stabilization: Stabilization,
    pub quadrature: QuadratureConfig,
    pub solver: SolverOptions,
}

impl DriftSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_n > 0.0 && self.d_p > 0.0 && self.lambda > 0.0) {
            return Err(Error::InvalidConfig("λ, D_n and D_p must be positive".into()));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidConfig("outer tolerance and iteration limit must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidConfig(format!("damping {} outside (0, 1]", self.damping)));
        }
        Ok(())
    }

    /// Template problem of the potential for given carrier densities.
    pub fn poisson_spec(&self, n: &NodalField, p: &NodalField) -> ProblemSpec {
        let rhs = p.values().iter().zip(n.values()).map(|(p, n)| p - n + self.doping).collect();
        ProblemSpec::new(
            ScalarField::Constant(self.lambda * self.lambda),
            VelocityField::Constant(Vec2::ZERO),
            ScalarField::Nodal(NodalField::new(rhs)),
            self.psi_bc.clone(),
        )
        .with_quadrature(self.quadrature.clone())
    }

    /// Template problem of one carrier for elementwise potential gradients.
    pub fn carrier_spec(&self, carrier: Carrier, grad_psi: &[Vec2]) -> ProblemSpec {
        let (k, scale, r, bc) = match carrier {
            Carrier::Electrons => (self.d_n, self.mu_n, &self.r_n, &self.n_bc),
            Carrier::Holes => (self.d_p, -self.mu_p, &self.r_p, &self.p_bc),
        };
        ProblemSpec::new(
            ScalarField::Constant(k),
            VelocityField::Elementwise(grad_psi.iter().map(|&g| g * scale).collect()),
            negate(r),
            bc.clone(),
        )
        .with_stabilization(self.carrier_stabilization)
        .with_quadrature(self.quadrature.clone())
    }
}

fn negate(f: &ScalarField) -> ScalarField {
    match f {
        ScalarField::Constant(c) => ScalarField::Constant(-c),
        ScalarField::Nodal(u) => ScalarField::Nodal(NodalField::new(u.values().iter().map(|v| -v).collect())),
        ScalarField::Analytic { value, .. } => {
            let value = value.clone();
            ScalarField::analytic(move |p| -value(p))
        }
    }
}

#[derive(Clone, Debug)]
pub struct DriftSolution {
    pub psi: NodalField,
    pub n: NodalField,
    pub p: NodalField,
    pub iterations: usize,
    pub last_increment: f64,
}

impl DriftSolution {
    pub fn carrier(&self, c: Carrier) -> &NodalField {
        match c {
            Carrier::Electrons => &self.n,
            Carrier::Holes => &self.p,
        }
    }
}

fn relax(old: &NodalField, new: NodalField, w: f64) -> NodalField {
    if w == 1.0 {
        return new;
    }
    NodalField::new(old.values().iter().zip(new.values()).map(|(o, n)| o + w * (n - o)).collect())
}

/// Gummel-style iteration: potential by CGFEM, then both carriers by SUPG
/// with the updated `∇ψ_h`, until the largest nodal change drops below the
/// tolerance. Carriers start from zero in the interior.
pub fn gummel_solve(mesh: &TriMesh, spec: &DriftSpec) -> Result<DriftSolution> {
    spec.validate()?;
    let nv = mesh.num_vertices();
    let mut psi = NodalField::zeros(nv);
    let mut n = NodalField::zeros(nv);
    let mut p = NodalField::zeros(nv);
    let mut increment = f64::INFINITY;
    for it in 1..=spec.max_iterations {
        // previous iterates are good initial guesses once the coupling settles
        let psi_new = solve_from(&assemble(mesh, &spec.poisson_spec(&n, &p))?, &psi, &spec.solver)?;
        let grad = psi_new.gradients(mesh)?;
        let n_new = solve_from(&assemble(mesh, &spec.carrier_spec(Carrier::Electrons, &grad))?, &n, &spec.solver)?;
        let p_new = solve_from(&assemble(mesh, &spec.carrier_spec(Carrier::Holes, &grad))?, &p, &spec.solver)?;
        increment = psi_new.max_abs_diff(&psi).max(n_new.max_abs_diff(&n)).max(p_new.max_abs_diff(&p));
        psi = relax(&psi, psi_new, spec.damping);
        n = relax(&n, n_new, spec.damping);
        p = relax(&p, p_new, spec.damping);
        if increment < spec.tolerance {
            return Ok(DriftSolution {
                psi,
                n,
                p,
                iterations: it,
                last_increment: increment,
            });
        }
    }
    Err(Error::GummelDiverged {
        iterations: spec.max_iterations,
        increment,
    })
}

/// Post-processed fluxes of both carriers, each from its own template problem.
pub fn postprocess_carriers(mesh: &TriMesh, spec: &DriftSpec, sol: &DriftSolution) -> Result<(ElementFlux, ElementFlux)> {
    let grad = sol.psi.gradients(mesh)?;
    let n = postprocess_all(mesh, &sol.n, &spec.carrier_spec(Carrier::Electrons, &grad))?;
    let p = postprocess_all(mesh, &sol.p, &spec.carrier_spec(Carrier::Holes, &grad))?;
    Ok((n, p))
}

/// Manufactured test: `ψ = x + y`, `n = p = X(x) X(y)` with the boundary-layer
/// profile of width `D = 0.01`, `λ = μ = 1`, `C = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftManufactured {
    pub diffusivity: f64,
    pub mobility: f64,
}

impl Default for DriftManufactured {
    fn default() -> Self {
        Self {
            diffusivity: 0.01,
            mobility: 1.0,
        }
    }
}

impl DriftManufactured {
    pub fn density(self) -> LayerProduct {
        LayerProduct {
            layer: Layer { k: self.diffusivity },
        }
    }

    pub fn psi(self, p: Point) -> f64 {
        p.x + p.y
    }

    pub fn grad_psi(self) -> Vec2 {
        Vec2::new(1.0, 1.0)
    }

    /// `R_n = -μ ∇ψ·∇n + D Δn` (`Δψ = 0`).
    pub fn r_n(self, x: Point) -> f64 {
        let u = self.density();
        -self.mobility * self.grad_psi().dot(u.gradient(x)) + self.diffusivity * u.laplacian(x)
    }

    /// `R_p = μ ∇ψ·∇p + D Δp`.
    pub fn r_p(self, x: Point) -> f64 {
        let u = self.density();
        self.mobility * self.grad_psi().dot(u.gradient(x)) + self.diffusivity * u.laplacian(x)
    }

    /// Exact total flux `-D∇u + v u` of a carrier in template form.
    pub fn flux(self, carrier: Carrier, x: Point) -> Vec2 {
        let u = self.density();
        let sign = match carrier {
            Carrier::Electrons => 1.0,
            Carrier::Holes => -1.0,
        };
        self.grad_psi() * (sign * self.mobility * u.value(x)) - u.gradient(x) * self.diffusivity
    }

    /// Template residual `∇·(-k∇u + v u) - f` of the exact carrier, with the
    /// exact potential; vanishes when the sign mapping is right.
    pub fn template_residual(self, carrier: Carrier, x: Point) -> f64 {
        let u = self.density();
        let (v, f) = match carrier {
            Carrier::Electrons => (self.grad_psi() * self.mobility, -self.r_n(x)),
            Carrier::Holes => (self.grad_psi() * -self.mobility, -self.r_p(x)),
        };
        -self.diffusivity * u.laplacian(x) + v.dot(u.gradient(x)) - f
    }

    pub fn spec(self) -> DriftSpec {
        let u = self.density();
        let psi: Arc<dyn Fn(Point) -> f64 + Send + Sync> = Arc::new(move |p: Point| p.x + p.y);
        DriftSpec {
            lambda: 1.0,
            mu_n: self.mobility,
            mu_p: self.mobility,
            d_n: self.diffusivity,
            d_p: self.diffusivity,
            doping: 0.0,
            r_n: ScalarField::analytic(move |x| self.r_n(x)),
            r_p: ScalarField::analytic(move |x| self.r_p(x)),
            psi_bc: ScalarField::Analytic { value: psi, gradient: None },
            n_bc: ScalarField::analytic(move |x| u.value(x)),
            p_bc: ScalarField::analytic(move |x| u.value(x)),
            tolerance: 1e-10,
            max_iterations: 50,
            damping: 1.0,
            carrier_stabilization: Stabilization::ClassicSupg,
            quadrature: QuadratureConfig::default(),
            solver: SolverOptions::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::solve;

    #[test]
    fn sign_mapping_residual_vanishes() {
        let m = DriftManufactured::default();
        for i in 1..10 {
            for j in 1..10 {
                let x = Vec2::new(i as f64 / 10.0, j as f64 / 10.0 + 0.03);
                for c in [Carrier::Electrons, Carrier::Holes] {
                    assert!(m.template_residual(c, x).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn electron_forcing_is_example2_forcing() {
        // -R_n = -D Δu + ∇u·(1,1) = X(x) + X(y)
        let m = DriftManufactured::default();
        let l = Layer { k: 0.01 };
        for x in [Vec2::new(0.3, 0.8), Vec2::new(0.99, 0.1)] {
            assert!((-m.r_n(x) - (l.value(x.x) + l.value(x.y))).abs() < 1e-10);
        }
    }

    #[test]
    fn decoupled_zero_limit() {
        let mesh = TriMesh::uniform(8).unwrap();
        let mut spec = DriftManufactured::default().spec();
        spec.r_n = ScalarField::Constant(0.0);
        spec.r_p = ScalarField::Constant(0.0);
        spec.n_bc = ScalarField::Constant(0.0);
        spec.p_bc = ScalarField::Constant(0.0);
        spec.psi_bc = ScalarField::analytic(|p| p.x * p.x - p.y * p.y);
        let sol = gummel_solve(&mesh, &spec).unwrap();
        assert!(sol.n.values().iter().all(|v| *v == 0.0));
        assert!(sol.p.values().iter().all(|v| *v == 0.0));
        let laplace = ProblemSpec::new(
            ScalarField::Constant(1.0),
            VelocityField::Constant(Vec2::ZERO),
            ScalarField::Constant(0.0),
            spec.psi_bc.clone(),
        );
        let direct = solve(&assemble(&mesh, &laplace).unwrap(), &SolverOptions::default()).unwrap();
        assert!(sol.psi.max_abs_diff(&direct) < 1e-12);
    }

    #[test]
    fn linear_potential_has_exact_gradient() {
        let mesh = TriMesh::uniform(6).unwrap();
        let spec = DriftManufactured::default().spec();
        let zero = NodalField::zeros(mesh.num_vertices());
        let psi = solve(&assemble(&mesh, &spec.poisson_spec(&zero, &zero)).unwrap(), &spec.solver).unwrap();
        for g in psi.gradients(&mesh).unwrap() {
            assert!((g - Vec2::new(1.0, 1.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn invalid_specs() {
        let mut spec = DriftManufactured::default().spec();
        spec.d_n = 0.0;
        assert!(spec.validate().is_err());
        let mut spec = DriftManufactured::default().spec();
        spec.damping = 1.5;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn outer_limit_reports_increment() {
        let mesh = TriMesh::uniform(4).unwrap();
        let mut spec = DriftManufactured::default().spec();
        spec.max_iterations = 1;
        match gummel_solve(&mesh, &spec) {
            Err(Error::GummelDiverged { iterations: 1, increment }) => assert!(increment > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }
}
