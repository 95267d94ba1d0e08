#ifndef BAYESCG_H
#define BAYESCG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum BcgStatus {
  BCG_STATUS_OK = 0,
  BCG_STATUS_NULL_POINTER = 1,
  BCG_STATUS_INVALID_ARGUMENT = 2,
  BCG_STATUS_DIMENSION_MISMATCH = 3,
  /**
   * Not symmetric, or not positive definite.
   */
  BCG_STATUS_NOT_SPD = 4,
  BCG_STATUS_PARSE = 5,
  BCG_STATUS_IO = 6,
  BCG_STATUS_SOLVE_FAILED = 7,
  BCG_STATUS_PANIC = 8,
} BcgStatus;

/**
 * Within-system prior covariance.
 */
typedef enum BcgPrior {
  /**
   * `gamma * I`.
   */
  BCG_PRIOR_IDENTITY = 0,
  /**
   * `diag(A)^-1`.
   */
  BCG_PRIOR_JACOBI = 1,
  /**
   * `A^-1`, applied by Cholesky solves.
   */
  BCG_PRIOR_PRECONDITIONER = 2,
} BcgPrior;

typedef enum BcgTermination {
  BCG_TERMINATION_CONVERGED = 0,
  BCG_TERMINATION_MAX_ITERATIONS = 1,
  BCG_TERMINATION_BREAKDOWN = 2,
} BcgTermination;

/**
 * Symmetric positive-definite operator.
 */
typedef struct BcgOperator BcgOperator;

/**
 * Posterior and trace of a solve.
 */
typedef struct BcgResult BcgResult;

typedef struct BcgSolverOptions {
  /**
   * 0 means the system dimension.
   */
  size_t max_iterations;
  double residual_tolerance;
  bool reorthogonalize;
} BcgSolverOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *bcg_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next failing call on the same thread.
 */
const char *bcg_last_error_message(void);

struct BcgSolverOptions bcg_solver_options_default(void);

/**
 * Operator from an `n`×`n` row-major dense matrix.
 *
 * # Safety
 * `values` must point to `n * n` doubles; `out` must be writable.
 */
enum BcgStatus bcg_operator_dense(size_t n, const double *values, struct BcgOperator **out);

/**
 * Operator from an `n`×`n` CSR matrix with 0-based indices.
 *
 * # Safety
 * `row_ptr` must hold `n + 1` entries; `col_idx` and `values` must hold
 * `row_ptr[n]` entries; `out` must be writable.
 */
enum BcgStatus bcg_operator_csr(size_t n,
                                const size_t *row_ptr,
                                const size_t *col_idx,
                                const double *values,
                                struct BcgOperator **out);

/**
 * Operator from a Matrix Market coordinate file.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
enum BcgStatus bcg_operator_read_matrix_market(const char *path, struct BcgOperator **out);

/**
 * Dimension of `op`, or 0 for NULL.
 *
 * # Safety
 * `op` must be NULL or a live handle.
 */
size_t bcg_operator_dim(const struct BcgOperator *op);

/**
 * `y = op * x`, both of length `n`.
 *
 * # Safety
 * `op` must be a live handle; `x` and `y` must hold `n` doubles.
 */
enum BcgStatus bcg_operator_apply(const struct BcgOperator *op,
                                  const double *x,
                                  double *y,
                                  size_t n);

/**
 * # Safety
 * `op` must be NULL or a handle not yet freed.
 */
void bcg_operator_free(struct BcgOperator *op);

/**
 * Solves `a x = b` from a zero prior mean. `opts` may be NULL for defaults.
 *
 * # Safety
 * `a` must be a live handle; `b` must hold `n` doubles; `out` must be writable.
 */
enum BcgStatus bcg_solve(const struct BcgOperator *a,
                         const double *b,
                         size_t n,
                         enum BcgPrior prior,
                         double gamma,
                         const struct BcgSolverOptions *opts,
                         struct BcgResult **out);

/**
 * Jointly solves `count` systems of dimension `n`. `rhs` holds the
 * right-hand sides back to back (`count * n` doubles). With `rho == 0` the
 * joint prior is block-diagonal with the within prior built per system;
 * otherwise it is `B ⊗ Σ₀(A_0)` with `B = (1 − rho) I + rho 11ᵀ`.
 *
 * # Safety
 * `ops` must hold `count` live handles; `rhs` must hold `count * n`
 * doubles; `out` must be writable.
 */
enum BcgStatus bcg_solve_multi(const struct BcgOperator *const *ops,
                               size_t count,
                               const double *rhs,
                               size_t n,
                               enum BcgPrior prior,
                               double gamma,
                               double rho,
                               const struct BcgSolverOptions *opts,
                               struct BcgResult **out);

/**
 * Length of the posterior mean (the stacked dimension for joint solves),
 * or 0 for NULL.
 *
 * # Safety
 * `res` must be NULL or a live handle.
 */
size_t bcg_result_dim(const struct BcgResult *res);

/**
 * Number of completed iterations, or 0 for NULL.
 *
 * # Safety
 * `res` must be NULL or a live handle.
 */
size_t bcg_result_iterations(const struct BcgResult *res);

/**
 * Number of systems: 1 for single solves, 0 for NULL.
 *
 * # Safety
 * `res` must be NULL or a live handle.
 */
size_t bcg_result_system_count(const struct BcgResult *res);

/**
 * # Safety
 * `res` must be a live handle; `out` must be writable.
 */
enum BcgStatus bcg_result_termination(const struct BcgResult *res, enum BcgTermination *out);

/**
 * Copies the posterior mean; `len` must equal [`bcg_result_dim`].
 *
 * # Safety
 * `res` must be a live handle; `out` must hold `len` doubles.
 */
enum BcgStatus bcg_result_mean(const struct BcgResult *res, double *out, size_t len);

/**
 * Copies the posterior marginal variances; `len` must equal [`bcg_result_dim`].
 *
 * # Safety
 * `res` must be a live handle; `out` must hold `len` doubles.
 */
enum BcgStatus bcg_result_variance(const struct BcgResult *res, double *out, size_t len);

/**
 * Copies `‖r_m‖` for every iteration; `len` must equal [`bcg_result_iterations`].
 *
 * # Safety
 * `res` must be a live handle; `out` must hold `len` doubles.
 */
enum BcgStatus bcg_result_residual_norms(const struct BcgResult *res, double *out, size_t len);

/**
 * Copies the posterior mean and variances of system `j` (0-based) of a
 * joint solve; both buffers hold `len` doubles, the per-system dimension.
 * `variance` may be NULL.
 *
 * # Safety
 * `res` must be a live handle; `mean` (and `variance` unless NULL) must
 * hold `len` doubles.
 */
enum BcgStatus bcg_result_marginal(const struct BcgResult *res,
                                   size_t j,
                                   double *mean,
                                   double *variance,
                                   size_t len);

/**
 * # Safety
 * `res` must be NULL or a handle not yet freed.
 */
void bcg_result_free(struct BcgResult *res);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BAYESCG_H */
