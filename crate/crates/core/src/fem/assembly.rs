use rayon::prelude::*;

use super::element::{element_load, element_mass, element_matrix, stabilization_delta, ElementGeometry};
use super::solver::CsrMatrix;
use crate::fem::{NodalField, ProblemSpec};
use crate::mesh::TriMesh;
use crate::{Error, Result};

/// Global system over the interior vertices with Dirichlet values eliminated.
#[derive(Clone, Debug)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Interior vertex of each unknown.
    pub free: Vec<usize>,
    /// Unknown index of each vertex (`None` on the boundary).
    pub dof_of_vertex: Vec<Option<usize>>,
    /// Prescribed `g_h` values at the boundary vertices.
    pub dirichlet: Vec<(usize, f64)>,
}

impl SparseSystem {
    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    /// Full nodal field from interior values plus the Dirichlet data.
    pub fn expand(&self, x: &[f64]) -> NodalField {
        let mut values = vec![0.0; self.dof_of_vertex.len()];
        for (&z, &xi) in self.free.iter().zip(x) {
            values[z] = xi;
        }
        for &(z, g) in &self.dirichlet {
            values[z] = g;
        }
        NodalField::new(values)
    }

    /// Interior values of a full nodal field.
    pub fn restrict(&self, u: &NodalField) -> Vec<f64> {
        self.free.iter().map(|&z| u.values()[z]).collect()
    }
}

/// Per-element contributions, computed independently.
struct Contribution {
    stiffness: [[f64; 3]; 3],
    load: [f64; 3],
}

fn contributions(
    mesh: &TriMesh,
    spec: &ProblemSpec,
    mass: Option<(f64, Option<&NodalField>)>,
) -> Result<Vec<Contribution>> {
    (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            let geom = ElementGeometry::new(mesh, e)?;
            let delta = stabilization_delta(&geom, spec);
            let mut stiffness = element_matrix(&geom, spec, delta)?;
            let mut load = element_load(&geom, &geom.split(), spec, delta);
            if let Some((inv_dt, prev)) = mass {
                let m = element_mass(&geom);
                let prev_local = prev.map(|p| p.local(geom.nodes));
                for i in 0..3 {
                    for j in 0..3 {
                        stiffness[i][j] += inv_dt * m[i][j];
                        if let Some(u) = prev_local {
                            load[i] += inv_dt * m[i][j] * u[j];
                        }
                    }
                }
            }
            Ok(Contribution { stiffness, load })
        })
        .collect()
}

fn assemble_from(mesh: &TriMesh, spec: &ProblemSpec, parts: Vec<Contribution>) -> SparseSystem {
    let nv = mesh.num_vertices();
    let mut dof_of_vertex = vec![None; nv];
    let mut free = Vec::new();
    for z in mesh.interior_vertices() {
        dof_of_vertex[z] = Some(free.len());
        free.push(z);
    }
    let g: Vec<f64> = (0..nv)
        .map(|z| if mesh.is_boundary(z) { spec.dirichlet.value_at_vertex(mesh, z) } else { 0.0 })
        .collect();
    let dirichlet = mesh.boundary_vertices().map(|z| (z, g[z])).collect();

    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); free.len()];
    let mut rhs = vec![0.0; free.len()];
    for (nodes, c) in mesh.triangles().iter().zip(parts) {
        for i in 0..3 {
            let Some(row) = dof_of_vertex[nodes[i]] else { continue };
            rhs[row] += c.load[i];
            for j in 0..3 {
                match dof_of_vertex[nodes[j]] {
                    Some(col) => rows[row].push((col, c.stiffness[i][j])),
                    None => rhs[row] -= c.stiffness[i][j] * g[nodes[j]],
                }
            }
        }
    }
    SparseSystem {
        matrix: CsrMatrix::from_row_entries(free.len(), rows),
        rhs,
        free,
        dof_of_vertex,
        dirichlet,
    }
}

/// Rows `a(u_h, φ_z) = ℓ(φ_z)` for every interior vertex `z`, with `g_h`
/// moved to the right-hand side.
pub fn assemble(mesh: &TriMesh, spec: &ProblemSpec) -> Result<SparseSystem> {
    let parts = contributions(mesh, spec, None)?;
    Ok(assemble_from(mesh, spec, parts))
}

/// Backward-Euler system `(u, w)/Δt + a(u, w) = (u_prev, w)/Δt + ℓ(w)`.
/// With `u_prev = None` the mass term is left out of the right-hand side.
pub fn assemble_transient(mesh: &TriMesh, spec: &ProblemSpec, dt: f64, u_prev: Option<&NodalField>) -> Result<SparseSystem> {
    if !(dt > 0.0) {
        return Err(Error::InvalidTimeStep(dt));
    }
    if let Some(u) = u_prev {
        u.check_len(mesh)?;
    }
    let parts = contributions(mesh, spec, Some((1.0 / dt, u_prev)))?;
    Ok(assemble_from(mesh, spec, parts))
}
