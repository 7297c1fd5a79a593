#ifndef LCF_H
#define LCF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LcfExample {
  LCF_EXAMPLE_EXAMPLE1 = 1,
  LCF_EXAMPLE_EXAMPLE2 = 2,
  LCF_EXAMPLE_PATCH = 3,
} LcfExample;

typedef enum LcfStabilization {
  LCF_STABILIZATION_GALERKIN = 0,
  LCF_STABILIZATION_SUPG = 1,
} LcfStabilization;

typedef enum LcfStatus {
  LCF_STATUS_OK = 0,
  LCF_STATUS_NULL_POINTER = 1,
  LCF_STATUS_INVALID_ARGUMENT = 2,
  LCF_STATUS_SOLVER_FAILED = 3,
  LCF_STATUS_POSTPROCESS_FAILED = 4,
  LCF_STATUS_BUFFER_TOO_SMALL = 5,
  LCF_STATUS_PANIC = 6,
} LcfStatus;

typedef struct LcfFlux LcfFlux;

typedef struct LcfMesh LcfMesh;

typedef struct LcfProblem LcfProblem;

typedef struct LcfSolution LcfSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread as a NUL-terminated string
 * into `buf` (truncating if needed) and returns its full length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t lcf_last_error(char *buf, size_t len);

/**
 * Uniform `n x n` mesh of the unit square.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LcfStatus lcf_mesh_uniform(size_t n, struct LcfMesh **out);

/**
 * # Safety
 * `mesh` must be null or a handle from [`lcf_mesh_uniform`] not yet freed.
 */
void lcf_mesh_free(struct LcfMesh *mesh);

/**
 * # Safety
 * `mesh` must be a live handle or null (returns 0).
 */
size_t lcf_mesh_num_vertices(const struct LcfMesh *mesh);

/**
 * # Safety
 * `mesh` must be a live handle or null (returns 0).
 */
size_t lcf_mesh_num_elements(const struct LcfMesh *mesh);

/**
 * Interleaved `x0, y0, x1, y1, ...`; `len` counts doubles.
 *
 * # Safety
 * `mesh` must be a live handle; `buf` valid for `len` doubles.
 */
enum LcfStatus lcf_mesh_vertices(const struct LcfMesh *mesh, double *buf, size_t len);

/**
 * One of the built-in model problems.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LcfStatus lcf_problem_example(enum LcfExample kind,
                                   enum LcfStabilization stabilization,
                                   struct LcfProblem **out);

/**
 * # Safety
 * `problem` must be null or a live handle.
 */
void lcf_problem_free(struct LcfProblem *problem);

/**
 * Assembles and solves; `tolerance <= 0` selects the default.
 *
 * # Safety
 * Handles must be live; `out` must be a valid pointer.
 */
enum LcfStatus lcf_solve(const struct LcfMesh *mesh,
                         const struct LcfProblem *problem,
                         double tolerance,
                         struct LcfSolution **out);

/**
 * # Safety
 * `solution` must be null or a live handle.
 */
void lcf_solution_free(struct LcfSolution *solution);

/**
 * Nodal values, one per vertex.
 *
 * # Safety
 * `solution` must be a live handle; `buf` valid for `len` doubles.
 */
enum LcfStatus lcf_solution_values(const struct LcfSolution *solution, double *buf, size_t len);

/**
 * Element-local post-processing of a solution.
 *
 * # Safety
 * Handles must be live and belong together; `out` must be a valid pointer.
 */
enum LcfStatus lcf_postprocess(const struct LcfMesh *mesh,
                               const struct LcfProblem *problem,
                               const struct LcfSolution *solution,
                               struct LcfFlux **out);

/**
 * # Safety
 * `flux` must be null or a live handle.
 */
void lcf_flux_free(struct LcfFlux *flux);

/**
 * Post-processed gradients, interleaved per element.
 *
 * # Safety
 * `flux` must be a live handle; `buf` valid for `len` doubles.
 */
enum LcfStatus lcf_flux_gradients(const struct LcfFlux *flux, double *buf, size_t len);

/**
 * Largest interior control-volume defect. A null `flux` measures the raw
 * finite element flux.
 *
 * # Safety
 * Non-null handles must be live and belong together; `out` must be valid.
 */
enum LcfStatus lcf_conservation_max_defect(const struct LcfMesh *mesh,
                                           const struct LcfProblem *problem,
                                           const struct LcfSolution *solution,
                                           const struct LcfFlux *flux,
                                           double *out);

/**
 * H¹ semi-norm errors of the solution and of the post-processed field
 * against the problem's exact solution.
 *
 * # Safety
 * Handles must be live and belong together; outputs must be valid.
 */
enum LcfStatus lcf_h1_errors(const struct LcfMesh *mesh,
                             const struct LcfProblem *problem,
                             const struct LcfSolution *solution,
                             const struct LcfFlux *flux,
                             double *out_fem,
                             double *out_pp);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LCF_H */
