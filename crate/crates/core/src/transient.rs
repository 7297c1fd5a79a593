//! Backward-Euler SUPG time stepping and the rotating-cylinder run.

use std::f64::consts::PI;

use crate::fem::solver::{solve_free, CsrMatrix, Ilu0};
use crate::fem::{assemble_transient, element_mass, ElementGeometry, NodalField, ProblemSpec, SolverOptions, SparseSystem};
use crate::geometry::Point;
use crate::mesh::TriMesh;
use crate::output::{sci, CsvTable};
use crate::problems::{cylinder_initial, rotating_cylinder};
use crate::quadrature::TriangleRule;
use crate::{Error, Result};

/// Free-vertex count at or below which the stepper solves directly.
const DIRECT_LIMIT: usize = 64;

#[derive(Clone, Debug)]
pub struct TransientSpec {
    pub base: ProblemSpec,
    pub final_time: f64,
    pub steps: usize,
    pub initial: NodalField,
}

impl TransientSpec {
    pub fn new(mut base: ProblemSpec, final_time: f64, steps: usize, initial: NodalField) -> Result<Self> {
        let dt = final_time / steps as f64;
        if steps == 0 || !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidTimeStep(dt));
        }
        base.time_dependent = true;
        Ok(Self {
            base,
            final_time,
            steps,
            initial,
        })
    }

    pub fn dt(&self) -> f64 {
        self.final_time / self.steps as f64
    }
}

/// One step `(uⁿ, w) + Δt a(uⁿ, w) = (uⁿ⁻¹, w) + Δt ℓ(w)`.
pub fn be_supg_step(mesh: &TriMesh, u_prev: &NodalField, spec: &ProblemSpec, dt: f64, opts: &SolverOptions) -> Result<NodalField> {
    let system = assemble_transient(mesh, spec, dt, Some(u_prev))?;
    let mut x = system.restrict(u_prev);
    solve_free(&system.matrix, None, &system.rhs, &mut x, opts)?;
    Ok(system.expand(&x))
}

/// Reuses the matrix, its preconditioner and the data part of the
/// right-hand side across steps with fixed `Δt` and coefficients.
#[derive(Debug)]
pub struct Stepper {
    system: SparseSystem,
    /// Free rows of `M/Δt` over all vertex columns.
    scaled_mass: CsrMatrix,
    precond: Option<Ilu0>,
    opts: SolverOptions,
}

impl Stepper {
    pub fn new(mesh: &TriMesh, spec: &ProblemSpec, dt: f64, opts: SolverOptions) -> Result<Self> {
        let system = assemble_transient(mesh, spec, dt, None)?;
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); system.num_free()];
        for e in 0..mesh.num_elements() {
            let geom = ElementGeometry::new(mesh, e)?;
            let m = element_mass(&geom);
            for i in 0..3 {
                if let Some(r) = system.dof_of_vertex[geom.nodes[i]] {
                    for j in 0..3 {
                        rows[r].push((geom.nodes[j], m[i][j] / dt));
                    }
                }
            }
        }
        let scaled_mass = CsrMatrix::from_row_entries(mesh.num_vertices(), rows);
        let precond = if system.num_free() > DIRECT_LIMIT {
            Some(Ilu0::new(&system.matrix)?)
        } else {
            None
        };
        Ok(Self {
            system,
            scaled_mass,
            precond,
            opts,
        })
    }

    pub fn step(&self, u_prev: &NodalField) -> Result<NodalField> {
        let mut rhs = self.scaled_mass.mul(u_prev.values());
        for (r, s) in rhs.iter_mut().zip(&self.system.rhs) {
            *r += s;
        }
        let mut x = self.system.restrict(u_prev);
        solve_free(&self.system.matrix, self.precond.as_ref(), &rhs, &mut x, &self.opts)?;
        Ok(self.system.expand(&x))
    }
}

/// State after `step` steps together with its predecessor, which the
/// transient conservation balance needs.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub field: NodalField,
    pub previous: Option<NodalField>,
}

/// Runs `spec.steps` steps, keeping the states at the requested step numbers.
pub fn run_transient(mesh: &TriMesh, spec: &TransientSpec, snapshot_steps: &[usize], opts: SolverOptions) -> Result<Vec<Snapshot>> {
    spec.initial.check_len(mesh)?;
    let dt = spec.dt();
    let last = snapshot_steps.iter().copied().max().unwrap_or(0).min(spec.steps);
    let mut out = Vec::new();
    if snapshot_steps.contains(&0) {
        out.push(Snapshot {
            step: 0,
            time: 0.0,
            field: spec.initial.clone(),
            previous: None,
        });
    }
    if last == 0 {
        return Ok(out);
    }
    let stepper = Stepper::new(mesh, &spec.base, dt, opts)?;
    let mut u = spec.initial.clone();
    for step in 1..=last {
        let next = stepper.step(&u)?;
        if snapshot_steps.contains(&step) {
            out.push(Snapshot {
                step,
                time: step as f64 * dt,
                field: next.clone(),
                previous: Some(u),
            });
        }
        u = next;
    }
    Ok(out)
}

/// Rotating cylinder on the uniform `n x n` mesh with `Δt = 2π/steps_per_revolution`,
/// stopped after `stop` steps (a full revolution by default). Snapshots are
/// taken at every quarter revolution up to `stop` and at `stop` itself.
pub fn run_rotating_cylinder(n: usize, steps_per_revolution: usize, stop: Option<usize>, opts: SolverOptions) -> Result<(TriMesh, Vec<Snapshot>)> {
    let mesh = TriMesh::uniform(n)?;
    let spec = TransientSpec::new(rotating_cylinder().spec, 2.0 * PI, steps_per_revolution, cylinder_initial(&mesh))?;
    let stop = stop.unwrap_or(steps_per_revolution).min(steps_per_revolution);
    let mut wanted: Vec<usize> = (0..=4).map(|q| q * steps_per_revolution / 4).filter(|&s| s <= stop).collect();
    if !wanted.contains(&stop) {
        wanted.push(stop);
    }
    let snaps = run_transient(&mesh, &spec, &wanted, opts)?;
    Ok((mesh, snaps))
}

/// `∫_Ω u_h dx`.
pub fn total_mass(mesh: &TriMesh, u: &NodalField) -> f64 {
    mesh.triangles()
        .iter()
        .enumerate()
        .map(|(e, t)| mesh.triangle(e).area() * t.iter().map(|&z| u.values()[z]).sum::<f64>() / 3.0)
        .sum()
}

/// `∫ x u_h dx / ∫ u_h dx`.
pub fn center_of_mass(mesh: &TriMesh, u: &NodalField) -> Point {
    let rule = TriangleRule::degree2();
    let mut mass = 0.0;
    let mut moment = Point::ZERO;
    for (e, nodes) in mesh.triangles().iter().enumerate() {
        let tri = mesh.triangle(e);
        let l = u.local(*nodes);
        let val = |b: [f64; 3]| b[0] * l[0] + b[1] * l[1] + b[2] * l[2];
        mass += rule.apply(&tri, |b, _| val(b));
        moment.x += rule.apply(&tri, |b, x| x.x * val(b));
        moment.y += rule.apply(&tri, |b, x| x.y * val(b));
    }
    moment * (1.0 / mass)
}

/// `x,y,value` rows of a nodal field.
pub fn snapshot_csv(mesh: &TriMesh, u: &NodalField) -> CsvTable {
    let mut t = CsvTable::new(["x", "y", "value"]);
    for (p, v) in mesh.vertices().iter().zip(u.values()) {
        t.push(vec![sci(p.x), sci(p.y), sci(*v)]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble, solve, Stabilization};
    use crate::problems::{example1, CYLINDER_CENTER};

    #[test]
    fn zero_data_stays_zero() {
        let mesh = TriMesh::uniform(6).unwrap();
        let spec = rotating_cylinder().spec;
        let u = be_supg_step(&mesh, &NodalField::zeros(mesh.num_vertices()), &spec, 0.1, &SolverOptions::default()).unwrap();
        assert!(u.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn steady_solution_is_a_fixed_point() {
        let mesh = TriMesh::uniform(12).unwrap();
        let spec = example1().spec.with_stabilization(Stabilization::ClassicSupg);
        let opts = SolverOptions::default();
        let steady = solve(&assemble(&mesh, &spec).unwrap(), &opts).unwrap();
        let next = be_supg_step(&mesh, &steady, &spec, 0.05, &opts).unwrap();
        assert!(next.max_abs_diff(&steady) < 1e-10);
        let stepper = Stepper::new(&mesh, &spec, 0.05, opts).unwrap();
        assert!(stepper.step(&steady).unwrap().max_abs_diff(&next) < 1e-11);
    }

    #[test]
    fn stepper_matches_fresh_assembly() {
        let mesh = TriMesh::uniform(10).unwrap();
        let spec = rotating_cylinder().spec;
        let opts = SolverOptions::default();
        let u0 = cylinder_initial(&mesh);
        let a = be_supg_step(&mesh, &u0, &spec, 0.01, &opts).unwrap();
        let b = Stepper::new(&mesh, &spec, 0.01, opts).unwrap().step(&u0).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-11);
    }

    #[test]
    fn rejects_bad_step_count() {
        let spec = rotating_cylinder().spec;
        assert!(TransientSpec::new(spec.clone(), 1.0, 0, NodalField::zeros(1)).is_err());
        assert!(TransientSpec::new(spec, -1.0, 4, NodalField::zeros(1)).is_err());
    }

    #[test]
    fn snapshots_and_center_of_mass() {
        let (mesh, snaps) = run_rotating_cylinder(16, 40, Some(10), SolverOptions::default()).unwrap();
        let steps: Vec<usize> = snaps.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![0, 10]);
        assert!(snaps[0].previous.is_none() && snaps[1].previous.is_some());
        assert!((snaps[1].time - PI / 2.0).abs() < 1e-14);
        let c0 = center_of_mass(&mesh, &snaps[0].field);
        assert!((c0 - CYLINDER_CENTER).norm() < 0.5 / 16.0);
    }

    #[test]
    fn mass_of_constant() {
        let mesh = TriMesh::uniform(5).unwrap();
        let u = NodalField::new(vec![2.0; mesh.num_vertices()]);
        assert!((total_mass(&mesh, &u) - 2.0).abs() < 1e-14);
        let c = center_of_mass(&mesh, &u);
        assert!((c.x - 0.5).abs() < 1e-14 && (c.y - 0.5).abs() < 1e-14);
    }
}
