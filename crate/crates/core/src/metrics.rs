//! Conservation defects, H¹ semi-norm errors, edge metrics and observed
//! convergence orders.

use rayon::prelude::*;

use crate::fem::{ElementGeometry, NodalField, ProblemSpec};
use crate::geometry::{Point, Vec2};
use crate::mesh::TriMesh;
use crate::output::{sci, CsvTable};
use crate::postprocess::{advective_cv_flux, quad_forcing, time_rate, ElementFlux, TimeRate};
use crate::quadrature::TriangleRule;
use crate::{Error, Result};

/// Which diffusive flux enters the balance.
#[derive(Clone, Copy, Debug)]
pub enum FluxSource<'a> {
    /// `-k∇u_h` of the finite element solution, discontinuous across elements.
    Raw(&'a NodalField),
    /// `-k∇ũ_{τ,h}` from post-processing; `u_h` still carries advection.
    PostProcessed { flux: &'a ElementFlux, u_h: &'a NodalField },
}

impl FluxSource<'_> {
    fn u_h(&self) -> &NodalField {
        match self {
            Self::Raw(u) => u,
            Self::PostProcessed { u_h, .. } => u_h,
        }
    }

    fn mode(&self) -> DefectMode {
        match self {
            Self::Raw(_) => DefectMode::RawFem,
            Self::PostProcessed { .. } => DefectMode::PostProcessed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DefectMode {
    RawFem,
    PostProcessed,
}

impl DefectMode {
    pub fn label(self) -> &'static str {
        match self {
            Self::RawFem => "raw_fem",
            Self::PostProcessed => "postprocessed",
        }
    }
}

/// How the discrete time derivative enters the control-volume balance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RateSign {
    /// `∮ ν·n = ∫ (f - (uⁿ - uⁿ⁻¹)/Δt)`, the balance of the backward-Euler step.
    #[default]
    Minus,
    Plus,
}

/// Previous state of a backward-Euler step.
#[derive(Clone, Copy, Debug)]
pub struct TransientData<'a> {
    pub u_prev: &'a NodalField,
    pub dt: f64,
    pub sign: RateSign,
}

/// Defects of `∮_{∂C^z} ν·n dl = ∫_{C^z} f dx` on the interior control volumes.
#[derive(Clone, Debug, PartialEq)]
pub struct ConservationReport {
    pub vertices: Vec<usize>,
    pub defects: Vec<f64>,
    pub max_abs: f64,
    pub l2: f64,
    pub mode: DefectMode,
}

impl ConservationReport {
    fn new(vertices: Vec<usize>, defects: Vec<f64>, mode: DefectMode) -> Self {
        let max_abs = defects.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let l2 = defects.iter().map(|d| d * d).sum::<f64>().sqrt();
        Self {
            vertices,
            defects,
            max_abs,
            l2,
            mode,
        }
    }

    pub fn sum(&self) -> f64 {
        self.defects.iter().sum()
    }
}

/// Per-element contributions to the balance of each local vertex.
fn element_balance(mesh: &TriMesh, e: usize, source: &FluxSource<'_>, spec: &ProblemSpec, rate: Option<TimeRate<'_>>) -> Result<[f64; 3]> {
    let geom = ElementGeometry::new(mesh, e)?;
    let split = geom.split();
    let u_h = source.u_h();
    let grad = match source {
        FluxSource::Raw(u) => {
            let l = u.local(geom.nodes);
            geom.grads[0] * l[0] + geom.grads[1] * l[1] + geom.grads[2] * l[2]
        }
        FluxSource::PostProcessed { flux, .. } => flux.grads[e],
    };
    let rule = &spec.quadrature.segment;
    let forcing = quad_forcing(&geom, &split, spec, rate);
    let advection = advective_cv_flux(&geom, &split, u_h.local(geom.nodes), spec);
    Ok(std::array::from_fn(|xi| {
        let diffusion: f64 = split.cv_segments[xi]
            .iter()
            .map(|seg| {
                rule.apply(seg, |t| {
                    let q = geom.qpoint(seg.bary_at(t), seg.point_at(t));
                    -spec.diffusivity.value(&q) * grad.dot(seg.normal)
                })
            })
            .sum();
        diffusion + advection[xi] - forcing[xi]
    }))
}

/// Interior control-volume defects, each assembled from the quadrilaterals
/// `t_ξ` of the incident elements.
pub fn conservation_defects(mesh: &TriMesh, source: FluxSource<'_>, spec: &ProblemSpec, transient: Option<TransientData<'_>>) -> Result<ConservationReport> {
    let u_h = source.u_h();
    u_h.check_len(mesh)?;
    if let FluxSource::PostProcessed { flux, .. } = source {
        if flux.len() != mesh.num_elements() {
            return Err(Error::FieldLength {
                expected: mesh.num_elements(),
                got: flux.len(),
            });
        }
    }
    if spec.time_dependent && transient.is_none() {
        return Err(Error::MissingTransientData);
    }
    let rate = match transient {
        Some(t) => {
            t.u_prev.check_len(mesh)?;
            let r = time_rate(u_h, t.u_prev, t.dt)?;
            Some(match t.sign {
                RateSign::Minus => r,
                RateSign::Plus => NodalField::new(r.into_values().into_iter().map(|v| -v).collect()),
            })
        }
        None => None,
    };
    let rate_ref = rate.as_ref().map(|r| TimeRate { rate: r });
    let parts = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| element_balance(mesh, e, &source, spec, rate_ref))
        .collect::<Result<Vec<_>>>()?;
    let mut per_vertex = vec![0.0; mesh.num_vertices()];
    for (nodes, c) in mesh.triangles().iter().zip(&parts) {
        for i in 0..3 {
            per_vertex[nodes[i]] += c[i];
        }
    }
    let vertices: Vec<usize> = mesh.interior_vertices().collect();
    let defects = vertices.iter().map(|&z| per_vertex[z]).collect();
    Ok(ConservationReport::new(vertices, defects, source.mode()))
}

/// `(Σ_τ ∫_τ |∇u - g_τ|² dx)^{1/2}` for elementwise-constant gradients `g_τ`,
/// integrated on the barycentric sub-triangles of every element.
pub fn h1_semi_error(mesh: &TriMesh, grads: &[Vec2], exact_grad: &(dyn Fn(Point) -> Vec2 + Sync), rule: &TriangleRule) -> Result<f64> {
    if grads.len() != mesh.num_elements() {
        return Err(Error::FieldLength {
            expected: mesh.num_elements(),
            got: grads.len(),
        });
    }
    let parts: Vec<f64> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            let split = mesh.split_element(e)?;
            Ok(rule.apply_composite(&split.subtriangles(), |_, x| {
                let d = exact_grad(x) - grads[e];
                d.dot(d)
            }))
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum::<f64>().sqrt())
}

/// Normal-flux errors on the dual segments.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EdgeMetrics {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub max_edge_length: f64,
}

/// `m1`, `m2`, `m3` of `ν̃·n - ν·n` over every barycenter-to-midpoint
/// segment. `m1` samples the endpoints and the segment quadrature points.
pub fn edge_metrics(mesh: &TriMesh, flux: &ElementFlux, u_h: &NodalField, spec: &ProblemSpec, exact_flux: &(dyn Fn(Point) -> Vec2 + Sync)) -> Result<EdgeMetrics> {
    u_h.check_len(mesh)?;
    if flux.len() != mesh.num_elements() {
        return Err(Error::FieldLength {
            expected: mesh.num_elements(),
            got: flux.len(),
        });
    }
    let rule = &spec.quadrature.segment;
    let parts = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            let geom = ElementGeometry::new(mesh, e)?;
            let split = geom.split();
            let u_local = u_h.local(geom.nodes);
            let grad = flux.grads[e];
            let diff = |bary: [f64; 3], x: Point, n: Vec2| {
                let q = geom.qpoint(bary, x);
                let u = bary[0] * u_local[0] + bary[1] * u_local[1] + bary[2] * u_local[2];
                let nu = grad * (-spec.diffusivity.value(&q)) + spec.velocity.value(&q) * u;
                (nu - exact_flux(x)).dot(n)
            };
            let mut out = EdgeMetrics::default();
            for cv in &split.cv_segments {
                let seg = &cv[0];
                let at = |t: f64| diff(seg.bary_at(t), seg.point_at(t), seg.normal);
                let samples = [0.0, 1.0].into_iter().chain(rule.points.iter().copied());
                let sup = samples.map(|t| at(t).abs()).fold(0.0f64, f64::max);
                let integral = rule.apply(seg, at);
                let square = rule.apply(seg, |t| at(t).powi(2));
                out.m1 = out.m1.max(sup);
                out.m2 = out.m2.max(integral.abs());
                out.m3 += square;
                out.max_edge_length = out.max_edge_length.max(seg.length());
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = parts.iter().fold(EdgeMetrics::default(), |acc, p| EdgeMetrics {
        m1: acc.m1.max(p.m1),
        m2: acc.m2.max(p.m2),
        m3: acc.m3 + p.m3,
        max_edge_length: acc.max_edge_length.max(p.max_edge_length),
    });
    total.m3 = total.m3.sqrt();
    Ok(total)
}

/// `ln(e_c/e_f) / ln(h_c/h_f)` for consecutive pairs; `log2(e_c/e_f)` when
/// `h` halves.
pub fn observed_orders(errors: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    if errors.len() < 2 || errors.len() != h.len() {
        return Err(Error::TooFewRows(errors.len().min(h.len())));
    }
    if let Some((row, &value)) = errors.iter().enumerate().find(|(_, e)| !(**e > 0.0)) {
        return Err(Error::NonPositiveError { row, value });
    }
    Ok(errors
        .windows(2)
        .zip(h.windows(2))
        .map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect())
}

/// Error values per mesh for several named metrics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceTable {
    pub metrics: Vec<String>,
    pub rows: Vec<ConvergenceRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub values: Vec<f64>,
}

impl ConvergenceTable {
    pub fn new<S: Into<String>>(metrics: impl IntoIterator<Item = S>) -> Self {
        Self {
            metrics: metrics.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    /// Appends the errors on the uniform `n x n` mesh (`h = √2/n`).
    pub fn push(&mut self, n: usize, values: Vec<f64>) -> Result<()> {
        if values.len() != self.metrics.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} metric values, got {}",
                self.metrics.len(),
                values.len()
            )));
        }
        if self.rows.last().is_some_and(|r| r.n >= n) {
            return Err(Error::InvalidConfig(format!("mesh sizes must increase, got {n} after {}", self.rows.last().unwrap().n)));
        }
        self.rows.push(ConvergenceRow {
            n,
            h: std::f64::consts::SQRT_2 / n as f64,
            values,
        });
        Ok(())
    }

    pub fn column(&self, metric: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.values[metric]).collect()
    }

    pub fn metric_index(&self, name: &str) -> Option<usize> {
        self.metrics.iter().position(|m| m == name)
    }

    pub fn orders(&self, metric: usize) -> Result<Vec<f64>> {
        let h: Vec<f64> = self.rows.iter().map(|r| r.h).collect();
        observed_orders(&self.column(metric), &h)
    }

    /// Long-format CSV `n,h,metric,value,order`; the order column refers to
    /// the previous row and is empty on the coarsest mesh.
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(["n", "h", "metric", "value", "order"]);
        for (m, name) in self.metrics.iter().enumerate() {
            let orders = self.orders(m).ok();
            for (i, r) in self.rows.iter().enumerate() {
                let order = match (&orders, i) {
                    (Some(o), i) if i > 0 => sci(o[i - 1]),
                    _ => String::new(),
                };
                t.push(vec![r.n.to_string(), sci(r.h), name.clone(), sci(r.values[m]), order]);
            }
        }
        t
    }
}

/// `vertex,x,y,defect` rows of a report.
pub fn defects_csv(mesh: &TriMesh, report: &ConservationReport) -> CsvTable {
    let mut t = CsvTable::new(["vertex", "x", "y", "defect"]);
    for (&z, &d) in report.vertices.iter().zip(&report.defects) {
        let p = mesh.vertices()[z];
        t.push(vec![z.to_string(), sci(p.x), sci(p.y), sci(d)]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble, solve, ScalarField, SolverOptions, Stabilization, VelocityField};
    use crate::postprocess::postprocess_all;

    #[test]
    fn orders_of_simple_sequences() {
        let h = [0.4, 0.2, 0.1];
        let o = observed_orders(&[0.4, 0.2, 0.1], &h).unwrap();
        assert!(o.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let o = observed_orders(&[0.4, 0.1], &h[..2]).unwrap();
        assert!((o[0] - 2.0).abs() < 1e-15);
        assert!(matches!(observed_orders(&[0.4], &[0.1]), Err(Error::TooFewRows(1))));
        assert!(matches!(observed_orders(&[0.4, 0.0], &[0.2, 0.1]), Err(Error::NonPositiveError { row: 1, .. })));
    }

    #[test]
    fn table_checks_and_csv() {
        let mut t = ConvergenceTable::new(["a"]);
        t.push(10, vec![0.4]).unwrap();
        t.push(20, vec![0.2]).unwrap();
        assert!(t.push(20, vec![0.1]).is_err());
        assert!(t.push(40, vec![0.1, 0.2]).is_err());
        let csv = t.to_csv().render();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "n,h,metric,value,order");
        assert!(lines[1].ends_with(','));
        assert!(lines[2].ends_with("1.0000000000000000e+00"));
        assert!((t.rows[0].h - 2f64.sqrt() / 10.0).abs() < 1e-16);
    }

    #[test]
    fn linear_interpolant_has_zero_h1_error() {
        let mesh = TriMesh::uniform(6).unwrap();
        let u = NodalField::interpolate(&mesh, |p| 3.0 * p.x - p.y + 0.5);
        let g = u.gradients(&mesh).unwrap();
        let err = h1_semi_error(&mesh, &g, &|_| Vec2::new(3.0, -1.0), &TriangleRule::degree5()).unwrap();
        assert!(err < 1e-12);
    }

    #[test]
    fn h1_error_of_zero_field() {
        // ∫ |∇(xy)|² = ∫ y² + x² = 2/3 on the unit square
        let mesh = TriMesh::uniform(3).unwrap();
        let g = vec![Vec2::ZERO; mesh.num_elements()];
        let err = h1_semi_error(&mesh, &g, &|p| Vec2::new(p.y, p.x), &TriangleRule::degree2()).unwrap();
        assert!((err - (2.0f64 / 3.0).sqrt()).abs() < 1e-14);
    }

    fn patch() -> ProblemSpec {
        ProblemSpec::new(
            ScalarField::Constant(2.0),
            VelocityField::Constant(Vec2::ZERO),
            ScalarField::Constant(0.0),
            ScalarField::analytic(|p| 0.3 - p.x + 4.0 * p.y),
        )
    }

    #[test]
    fn patch_is_conservative_both_ways() {
        let spec = patch();
        let mesh = TriMesh::uniform(4).unwrap();
        let u = solve(&assemble(&mesh, &spec).unwrap(), &SolverOptions::default()).unwrap();
        let flux = postprocess_all(&mesh, &u, &spec).unwrap();
        let raw = conservation_defects(&mesh, FluxSource::Raw(&u), &spec, None).unwrap();
        let pp = conservation_defects(&mesh, FluxSource::PostProcessed { flux: &flux, u_h: &u }, &spec, None).unwrap();
        assert!(raw.max_abs < 1e-12 && pp.max_abs < 1e-12);
        assert_eq!(raw.vertices.len(), 9);
        let m = edge_metrics(&mesh, &flux, &u, &spec, &|_| Vec2::new(2.0, -8.0)).unwrap();
        assert!(m.m1 < 1e-12 && m.m2 < 1e-12 && m.m3 < 1e-12);
    }

    #[test]
    fn edge_metric_bounds() {
        let spec = ProblemSpec::new(
            ScalarField::Constant(1.0),
            VelocityField::Constant(Vec2::new(1.0, 0.5)),
            ScalarField::analytic(|p| (p.x * 5.0).sin()),
            ScalarField::Constant(0.0),
        )
        .with_stabilization(Stabilization::ClassicSupg);
        let mesh = TriMesh::uniform(5).unwrap();
        let u = solve(&assemble(&mesh, &spec).unwrap(), &SolverOptions::default()).unwrap();
        let flux = postprocess_all(&mesh, &u, &spec).unwrap();
        let m = edge_metrics(&mesh, &flux, &u, &spec, &|p| Vec2::new(p.x, p.y * p.y)).unwrap();
        assert!(m.m1 > 0.0);
        assert!(m.m2 <= m.m1 * m.max_edge_length * (1.0 + 1e-12));
    }

    #[test]
    fn time_dependent_spec_needs_previous_state() {
        let mut spec = patch();
        spec.time_dependent = true;
        let mesh = TriMesh::uniform(2).unwrap();
        let u = NodalField::zeros(mesh.num_vertices());
        assert!(matches!(
            conservation_defects(&mesh, FluxSource::Raw(&u), &spec, None),
            Err(Error::MissingTransientData)
        ));
    }
}
