//! C ABI over `lcf`.
//!
//! Every object is an opaque heap handle released with its `_free` function.
//! Functions return an [`LcfStatus`]; on failure the message is kept per
//! thread and read back with [`lcf_last_error`]. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lcf::fem::{assemble, solve, NodalField, SolverOptions, Stabilization};
use lcf::metrics::{conservation_defects, h1_semi_error, FluxSource};
use lcf::postprocess::{postprocess_all, ElementFlux};
use lcf::problems::{example1, example2, patch, Problem};
use lcf::quadrature::TriangleRule;
use lcf::TriMesh;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LcfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SolverFailed = 3,
    PostprocessFailed = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LcfExample {
    Example1 = 1,
    Example2 = 2,
    Patch = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LcfStabilization {
    Galerkin = 0,
    Supg = 1,
}

pub struct LcfMesh(TriMesh);
pub struct LcfProblem(Problem);
pub struct LcfSolution(NodalField);
pub struct LcfFlux(ElementFlux);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: LcfStatus, msg: impl std::fmt::Display) -> LcfStatus {
    set_error(msg.to_string());
    status
}

fn guard(f: impl FnOnce() -> LcfStatus) -> LcfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == LcfStatus::Ok {
                set_error("");
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(LcfStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T) -> Result<&'a T, LcfStatus> {
    p.as_ref().ok_or_else(|| fail(LcfStatus::NullPointer, "null handle"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> LcfStatus {
    *out = Box::into_raw(Box::new(value));
    LcfStatus::Ok
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> LcfStatus {
    if buf.is_null() {
        return fail(LcfStatus::NullPointer, "null output buffer");
    }
    if len < src.len() {
        return fail(LcfStatus::BufferTooSmall, format!("buffer holds {len} values, need {}", src.len()));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    LcfStatus::Ok
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Copies the last error message of this thread as a NUL-terminated string
/// into `buf` (truncating if needed) and returns its full length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn lcf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Uniform `n x n` mesh of the unit square.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lcf_mesh_uniform(n: usize, out: *mut *mut LcfMesh) -> LcfStatus {
    guard(|| {
        if out.is_null() {
            return fail(LcfStatus::NullPointer, "null output handle");
        }
        match TriMesh::uniform(n) {
            Ok(m) => put(out, LcfMesh(m)),
            Err(e) => fail(LcfStatus::InvalidArgument, e),
        }
    })
}

/// # Safety
/// `mesh` must be null or a handle from [`lcf_mesh_uniform`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lcf_mesh_free(mesh: *mut LcfMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// # Safety
/// `mesh` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn lcf_mesh_num_vertices(mesh: *const LcfMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.num_vertices())
}

/// # Safety
/// `mesh` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn lcf_mesh_num_elements(mesh: *const LcfMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.num_elements())
}

/// Interleaved `x0, y0, x1, y1, ...`; `len` counts doubles.
///
/// # Safety
/// `mesh` must be a live handle; `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lcf_mesh_vertices(mesh: *const LcfMesh, buf: *mut f64, len: usize) -> LcfStatus {
    guard(|| {
        let m = try_ffi!(borrow(mesh));
        let xy: Vec<f64> = m.0.vertices().iter().flat_map(|p| [p.x, p.y]).collect();
        copy_out(&xy, buf, len)
    })
}

/// One of the built-in model problems.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lcf_problem_example(kind: LcfExample, stabilization: LcfStabilization, out: *mut *mut LcfProblem) -> LcfStatus {
    guard(|| {
        if out.is_null() {
            return fail(LcfStatus::NullPointer, "null output handle");
        }
        let mut p = match kind {
            LcfExample::Example1 => example1(),
            LcfExample::Example2 => example2(),
            LcfExample::Patch => patch(),
        };
        p.spec.stabilization = match stabilization {
            LcfStabilization::Galerkin => Stabilization::Zero,
            LcfStabilization::Supg => Stabilization::ClassicSupg,
        };
        put(out, LcfProblem(p))
    })
}

/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lcf_problem_free(problem: *mut LcfProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Assembles and solves; `tolerance <= 0` selects the default.
///
/// # Safety
/// Handles must be live; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lcf_solve(mesh: *const LcfMesh, problem: *const LcfProblem, tolerance: f64, out: *mut *mut LcfSolution) -> LcfStatus {
    guard(|| {
        let m = try_ffi!(borrow(mesh));
        let p = try_ffi!(borrow(problem));
        if out.is_null() {
            return fail(LcfStatus::NullPointer, "null output handle");
        }
        let mut opts = SolverOptions::default();
        if tolerance > 0.0 {
            opts.tolerance = tolerance;
        }
        match assemble(&m.0, &p.0.spec).and_then(|s| solve(&s, &opts)) {
            Ok(u) => put(out, LcfSolution(u)),
            Err(e) => fail(LcfStatus::SolverFailed, e),
        }
    })
}

/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lcf_solution_free(solution: *mut LcfSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Nodal values, one per vertex.
///
/// # Safety
/// `solution` must be a live handle; `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lcf_solution_values(solution: *const LcfSolution, buf: *mut f64, len: usize) -> LcfStatus {
    guard(|| {
        let s = try_ffi!(borrow(solution));
        copy_out(s.0.values(), buf, len)
    })
}

/// Element-local post-processing of a solution.
///
/// # Safety
/// Handles must be live and belong together; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lcf_postprocess(mesh: *const LcfMesh, problem: *const LcfProblem, solution: *const LcfSolution, out: *mut *mut LcfFlux) -> LcfStatus {
    guard(|| {
        let m = try_ffi!(borrow(mesh));
        let p = try_ffi!(borrow(problem));
        let s = try_ffi!(borrow(solution));
        if out.is_null() {
            return fail(LcfStatus::NullPointer, "null output handle");
        }
        match postprocess_all(&m.0, &s.0, &p.0.spec) {
            Ok(f) => put(out, LcfFlux(f)),
            Err(e) => fail(LcfStatus::PostprocessFailed, e),
        }
    })
}

/// # Safety
/// `flux` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lcf_flux_free(flux: *mut LcfFlux) {
    if !flux.is_null() {
        drop(Box::from_raw(flux));
    }
}

/// Post-processed gradients, interleaved per element.
///
/// # Safety
/// `flux` must be a live handle; `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lcf_flux_gradients(flux: *const LcfFlux, buf: *mut f64, len: usize) -> LcfStatus {
    guard(|| {
        let f = try_ffi!(borrow(flux));
        let g: Vec<f64> = f.0.grads.iter().flat_map(|g| [g.x, g.y]).collect();
        copy_out(&g, buf, len)
    })
}

/// Largest interior control-volume defect. A null `flux` measures the raw
/// finite element flux.
///
/// # Safety
/// Non-null handles must be live and belong together; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lcf_conservation_max_defect(
    mesh: *const LcfMesh,
    problem: *const LcfProblem,
    solution: *const LcfSolution,
    flux: *const LcfFlux,
    out: *mut f64,
) -> LcfStatus {
    guard(|| {
        let m = try_ffi!(borrow(mesh));
        let p = try_ffi!(borrow(problem));
        let s = try_ffi!(borrow(solution));
        if out.is_null() {
            return fail(LcfStatus::NullPointer, "null output pointer");
        }
        let source = match flux.as_ref() {
            Some(f) => FluxSource::PostProcessed { flux: &f.0, u_h: &s.0 },
            None => FluxSource::Raw(&s.0),
        };
        match conservation_defects(&m.0, source, &p.0.spec, None) {
            Ok(r) => {
                *out = r.max_abs;
                LcfStatus::Ok
            }
            Err(e) => fail(LcfStatus::InvalidArgument, e),
        }
    })
}

/// H¹ semi-norm errors of the solution and of the post-processed field
/// against the problem's exact solution.
///
/// # Safety
/// Handles must be live and belong together; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn lcf_h1_errors(
    mesh: *const LcfMesh,
    problem: *const LcfProblem,
    solution: *const LcfSolution,
    flux: *const LcfFlux,
    out_fem: *mut f64,
    out_pp: *mut f64,
) -> LcfStatus {
    guard(|| {
        let m = try_ffi!(borrow(mesh));
        let p = try_ffi!(borrow(problem));
        let s = try_ffi!(borrow(solution));
        let f = try_ffi!(borrow(flux));
        if out_fem.is_null() || out_pp.is_null() {
            return fail(LcfStatus::NullPointer, "null output pointer");
        }
        let Some(exact) = p.0.exact.as_ref() else {
            return fail(LcfStatus::InvalidArgument, "problem has no exact solution");
        };
        let rule = TriangleRule::degree5();
        let grad = |x| (exact.gradient)(x);
        let fem = s.0.gradients(&m.0).and_then(|g| h1_semi_error(&m.0, &g, &grad, &rule));
        let pp = h1_semi_error(&m.0, &f.0.grads, &grad, &rule);
        match (fem, pp) {
            (Ok(a), Ok(b)) => {
                *out_fem = a;
                *out_pp = b;
                LcfStatus::Ok
            }
            (Err(e), _) | (_, Err(e)) => fail(LcfStatus::InvalidArgument, e),
        }
    })
}
