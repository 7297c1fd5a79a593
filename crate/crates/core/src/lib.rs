//! Linear (P1) finite elements for steady and transient advection-diffusion on
//! the unit square, with an element-local Neumann post-processing step that
//! turns CGFEM/SUPG solutions into fluxes that are exactly conservative on the
//! vertex-centered (barycentric) dual mesh.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`] and [`mesh`]: structured triangulations and their dual split
//!   into control-volume quadrilaterals.
//! - [`quadrature`]: triangle and segment rules.
//! - [`fem`]: problem description, element residuals `Q`/`F`, global assembly
//!   and the sparse Krylov solve.
//! - [`postprocess`]: the 3x3 local systems and the recovered flux field.
//! - [`metrics`]: conservation defects, H1 semi-norm errors, edge metrics and
//!   convergence tables.
//! - [`transient`]: backward-Euler SUPG time stepping.
//! - [`driftdiffusion`]: Gummel iteration for the coupled drift-diffusion system.
//! - [`problems`]: the manufactured test problems used by the experiment driver.
//! - [`cli`]: experiment runner behind the `lcf` binary.

pub mod cli;
pub mod driftdiffusion;
mod error;
pub mod fem;
pub mod geometry;
pub mod mesh;
pub mod metrics;
pub mod output;
pub mod postprocess;
pub mod problems;
pub mod quadrature;
pub mod transient;

pub use error::{Error, Result};
pub use fem::{NodalField, ProblemSpec, ScalarField, Stabilization, VelocityField};
pub use geometry::{Point, Triangle, Vec2};
pub use mesh::{ElementSplit, Segment, TriMesh};
pub use postprocess::ElementFlux;
