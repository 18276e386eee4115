#ifndef BQSOLVE_H
#define BQSOLVE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result codes.
typedef enum BqStatus {
  BQ_STATUS_OK = 0,
  BQ_STATUS_NULL_POINTER = 1,
  BQ_STATUS_INVALID_ARGUMENT = 2,
  // Symbols or kernels failed the admissibility checks.
  BQ_STATUS_INADMISSIBLE = 3,
  BQ_STATUS_NON_CONTRACTION = 4,
  BQ_STATUS_NON_FINITE = 5,
  BQ_STATUS_IO = 6,
  BQ_STATUS_CONFIG = 7,
  BQ_STATUS_OUT_OF_RANGE = 8,
  BQ_STATUS_INTERNAL = 99,
} BqStatus;

// How a solve ended.
typedef enum BqTermination {
  // Linear solve; no windows.
  BQ_TERMINATION_LINEAR = 0,
  BQ_TERMINATION_HORIZON_REACHED = 1,
  BQ_TERMINATION_BLOW_UP_DETECTED = 2,
  BQ_TERMINATION_MAX_WINDOWS = 3,
} BqTermination;

// Opaque spectral grid.
typedef struct BqGrid BqGrid;

// Opaque decoded snapshot.
typedef struct BqSnapshot BqSnapshot;

// Opaque solution: fields at the requested output times.
typedef struct BqSolution BqSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into this library from the same thread.
const char *bq_last_error_message(void);

// Creates a grid on `[-half_width, half_width)^n` with `points[d]` points per axis.
//
// # Safety
// `points` must reference `n` readable values and `out` must be writable.
enum BqStatus bq_grid_create(size_t n,
                             const size_t *points,
                             double half_width,
                             struct BqGrid **out);

// Number of lattice sites.
//
// # Safety
// `grid` must come from [`bq_grid_create`] or be null.
size_t bq_grid_len(const struct BqGrid *grid);

// # Safety
// `grid` must come from [`bq_grid_create`] or be null; it is invalid afterwards.
void bq_grid_free(struct BqGrid *grid);

// Loads a problem file and solves the linear problem at its output times.
//
// # Safety
// `problem_path` must be a nul-terminated string and `out` writable.
enum BqStatus bq_solve_linear_file(const char *problem_path, struct BqSolution **out);

// Loads a problem file and solves the nonlinear problem up to `horizon`.
// A detected blow-up is not an error: query [`bq_solution_termination`].
//
// # Safety
// `problem_path` must be a nul-terminated string and `out` writable.
enum BqStatus bq_solve_file(const char *problem_path, double horizon, struct BqSolution **out);

// Number of stored output times.
//
// # Safety
// `sol` must come from a solve function or be null.
size_t bq_solution_count(const struct BqSolution *sol);

// Number of lattice sites per stored field.
//
// # Safety
// `sol` must come from a solve function or be null.
size_t bq_solution_len(const struct BqSolution *sol);

// # Safety
// `sol` must come from a solve function; `t` must be writable.
enum BqStatus bq_solution_time(const struct BqSolution *sol, size_t index, double *t);

// Termination reason; for blow-up, `crossing_time` receives the first
// time the monitor exceeded its ceiling (NaN otherwise). `crossing_time`
// may be null.
//
// # Safety
// `sol` must come from a solve function.
enum BqStatus bq_solution_termination(const struct BqSolution *sol,
                                      enum BqTermination *termination,
                                      double *crossing_time);

// Copies physical `u` at output `index` into `re`/`im` (each `len` long).
//
// # Safety
// `re` and `im` must each hold `len` writable doubles.
enum BqStatus bq_solution_copy_u(const struct BqSolution *sol,
                                 size_t index,
                                 double *re,
                                 double *im,
                                 size_t len);

// Copies physical `u_t` at output `index`.
//
// # Safety
// `re` and `im` must each hold `len` writable doubles.
enum BqStatus bq_solution_copy_ut(const struct BqSolution *sol,
                                  size_t index,
                                  double *re,
                                  double *im,
                                  size_t len);

// # Safety
// `sol` must come from a solve function or be null; it is invalid afterwards.
void bq_solution_free(struct BqSolution *sol);

// Invertibility margin of a kernel pair. Either path may be null for the
// zero kernel, but not both.
//
// # Safety
// Non-null paths must be nul-terminated; `margin` and `admissible` writable.
enum BqStatus bq_check_kernels_file(const char *alpha_path,
                                    const char *beta_path,
                                    double *margin,
                                    int *admissible);

// Reads a BQF1 snapshot file.
//
// # Safety
// `path` must be nul-terminated and `out` writable.
enum BqStatus bq_snapshot_read(const char *path, struct BqSnapshot **out);

// Writes up to `cap` per-axis point counts into `points` and returns the
// dimension (0 for a null handle).
//
// # Safety
// `points` must hold `cap` writable values or be null.
size_t bq_snapshot_dims(const struct BqSnapshot *snap, uint32_t *points, size_t cap);

// # Safety
// `snap` must come from [`bq_snapshot_read`] or be null.
size_t bq_snapshot_len(const struct BqSnapshot *snap);

// # Safety
// `re` and `im` must each hold `len` writable doubles.
enum BqStatus bq_snapshot_copy(const struct BqSnapshot *snap, double *re, double *im, size_t len);

// # Safety
// `snap` must come from [`bq_snapshot_read`] or be null; it is invalid afterwards.
void bq_snapshot_free(struct BqSnapshot *snap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BQSOLVE_H */
