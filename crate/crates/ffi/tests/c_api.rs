use std::ffi::c_char;
use std::ptr;

use lcf_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    let n = unsafe { lcf_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

struct Run {
    mesh: *mut LcfMesh,
    problem: *mut LcfProblem,
    solution: *mut LcfSolution,
    flux: *mut LcfFlux,
}

impl Run {
    fn new(n: usize, kind: LcfExample, stab: LcfStabilization) -> Self {
        let mut r = Run {
            mesh: ptr::null_mut(),
            problem: ptr::null_mut(),
            solution: ptr::null_mut(),
            flux: ptr::null_mut(),
        };
        unsafe {
            assert_eq!(lcf_mesh_uniform(n, &mut r.mesh), LcfStatus::Ok);
            assert_eq!(lcf_problem_example(kind, stab, &mut r.problem), LcfStatus::Ok);
            assert_eq!(lcf_solve(r.mesh, r.problem, 0.0, &mut r.solution), LcfStatus::Ok);
            assert_eq!(lcf_postprocess(r.mesh, r.problem, r.solution, &mut r.flux), LcfStatus::Ok);
        }
        r
    }
}

impl Drop for Run {
    fn drop(&mut self) {
        unsafe {
            lcf_flux_free(self.flux);
            lcf_solution_free(self.solution);
            lcf_problem_free(self.problem);
            lcf_mesh_free(self.mesh);
        }
    }
}

#[test]
fn patch_round_trip() {
    let r = Run::new(4, LcfExample::Patch, LcfStabilization::Galerkin);
    unsafe {
        let nv = lcf_mesh_num_vertices(r.mesh);
        let ne = lcf_mesh_num_elements(r.mesh);
        assert_eq!((nv, ne), (25, 32));

        let mut xy = vec![0.0; 2 * nv];
        assert_eq!(lcf_mesh_vertices(r.mesh, xy.as_mut_ptr(), xy.len()), LcfStatus::Ok);
        let mut u = vec![0.0; nv];
        assert_eq!(lcf_solution_values(r.solution, u.as_mut_ptr(), u.len()), LcfStatus::Ok);
        for (z, v) in u.iter().enumerate() {
            let (x, y) = (xy[2 * z], xy[2 * z + 1]);
            assert!((v - (1.0 + 2.0 * x - 3.0 * y)).abs() < 1e-12);
        }

        let mut g = vec![0.0; 2 * ne];
        assert_eq!(lcf_flux_gradients(r.flux, g.as_mut_ptr(), g.len()), LcfStatus::Ok);
        for pair in g.chunks(2) {
            assert!((pair[0] - 2.0).abs() < 1e-10 && (pair[1] + 3.0).abs() < 1e-10);
        }
    }
}

#[test]
fn conservation_and_errors() {
    let r = Run::new(16, LcfExample::Example2, LcfStabilization::Supg);
    let (mut raw, mut pp) = (0.0, 0.0);
    let (mut e_fem, mut e_pp) = (0.0, 0.0);
    unsafe {
        assert_eq!(lcf_conservation_max_defect(r.mesh, r.problem, r.solution, ptr::null(), &mut raw), LcfStatus::Ok);
        assert_eq!(lcf_conservation_max_defect(r.mesh, r.problem, r.solution, r.flux, &mut pp), LcfStatus::Ok);
        assert_eq!(lcf_h1_errors(r.mesh, r.problem, r.solution, r.flux, &mut e_fem, &mut e_pp), LcfStatus::Ok);
    }
    assert!(pp <= 1e-10, "post-processed defect {pp}");
    assert!(raw > 1e3 * pp, "raw {raw} vs {pp}");
    assert!(e_fem > 0.0 && e_pp > 0.0 && e_fem.is_finite() && e_pp.is_finite());
}

#[test]
fn null_and_buffer_errors() {
    unsafe {
        assert_eq!(lcf_mesh_uniform(2, ptr::null_mut()), LcfStatus::NullPointer);
        assert!(last_error().contains("null"));

        let mut mesh = ptr::null_mut();
        assert_eq!(lcf_mesh_uniform(0, &mut mesh), LcfStatus::InvalidArgument);
        assert!(mesh.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(lcf_mesh_num_vertices(ptr::null()), 0);
        let mut buf = [0.0; 4];
        assert_eq!(lcf_mesh_vertices(ptr::null(), buf.as_mut_ptr(), 4), LcfStatus::NullPointer);

        assert_eq!(lcf_mesh_uniform(2, &mut mesh), LcfStatus::Ok);
        assert_eq!(last_error(), "");
        assert_eq!(lcf_mesh_vertices(mesh, buf.as_mut_ptr(), buf.len()), LcfStatus::BufferTooSmall);
        assert!(last_error().contains("need 18"));
        assert_eq!(lcf_mesh_vertices(mesh, ptr::null_mut(), 18), LcfStatus::NullPointer);

        let mut sol = ptr::null_mut();
        assert_eq!(lcf_solve(mesh, ptr::null(), 0.0, &mut sol), LcfStatus::NullPointer);
        assert!(sol.is_null());
        lcf_mesh_free(mesh);
        // freeing null is a no-op
        lcf_mesh_free(ptr::null_mut());
        lcf_solution_free(ptr::null_mut());
    }
}

#[test]
fn mismatched_handles_are_rejected() {
    let a = Run::new(4, LcfExample::Example1, LcfStabilization::Galerkin);
    let b = Run::new(8, LcfExample::Example1, LcfStabilization::Galerkin);
    let mut out = 0.0;
    let status = unsafe { lcf_conservation_max_defect(b.mesh, a.problem, a.solution, ptr::null(), &mut out) };
    assert_ne!(status, LcfStatus::Ok);
    assert!(!last_error().is_empty());
}

#[test]
fn error_message_truncates() {
    unsafe {
        lcf_mesh_uniform(2, ptr::null_mut());
        let mut small = [0 as c_char; 4];
        let full = lcf_last_error(small.as_mut_ptr(), small.len());
        assert!(full > 3);
        assert_eq!(small[3], 0);
        assert_eq!(lcf_last_error(ptr::null_mut(), 0), full);
    }
}

#[test]
fn header_declares_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/lcf.h")).unwrap();
    for name in ["lcf_mesh_uniform", "lcf_solve", "lcf_postprocess", "lcf_conservation_max_defect", "lcf_last_error", "LCF_STATUS_BUFFER_TOO_SMALL"] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
