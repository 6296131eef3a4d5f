#ifndef CCOPF_H
#define CCOPF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CcopfStatus {
  CCOPF_STATUS_OK = 0,
  CCOPF_STATUS_NULL_POINTER = 1,
  CCOPF_STATUS_INVALID_UTF8 = 2,
  CCOPF_STATUS_IO = 3,
  CCOPF_STATUS_PARSE = 4,
  CCOPF_STATUS_VALIDATION = 5,
  CCOPF_STATUS_DIMENSION = 6,
  CCOPF_STATUS_PF_DIVERGENCE = 7,
  CCOPF_STATUS_SINGULAR_JACOBIAN = 8,
  CCOPF_STATUS_BUFFER_TOO_SMALL = 9,
  CCOPF_STATUS_PANIC = 10,
  CCOPF_STATUS_OTHER = 11,
} CcopfStatus;

/**
 * Opaque parsed network.
 */
typedef struct CcopfCase CcopfCase;

/**
 * Opaque trained policy.
 */
typedef struct CcopfPolicy CcopfPolicy;

/**
 * Sizes of the vectors exchanged with a case.
 */
typedef struct CcopfDims {
  size_t n_bus;
  size_t n_gen;
  size_t dim_x;
  size_t dim_u;
  size_t dim_phi;
  size_t n_constraints;
} CcopfDims;

/**
 * Outcome of [`ccopf_pf_solve`].
 */
typedef struct CcopfPfSummary {
  /**
   * Total generation cost, $/h.
   */
  double cost;
  /**
   * Largest `value − limit` over the constraint rows; positive means violated.
   */
  double max_residual;
  size_t n_violated;
} CcopfPfSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ccopf_version(void);

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len − 1` bytes). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t ccopf_last_error(char *buf, size_t len);

/**
 * Read a MATPOWER case file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum CcopfStatus ccopf_case_load(const char *path, struct CcopfCase **out);

/**
 * Parse MATPOWER case text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum CcopfStatus ccopf_case_parse(const char *text, struct CcopfCase **out);

/**
 * Release a case. Null is ignored.
 *
 * # Safety
 * `case` must come from `ccopf_case_load`/`ccopf_case_parse` and not be used afterwards.
 */
void ccopf_case_free(struct CcopfCase *case_);

/**
 * # Safety
 * `case` must be a live handle; `out` must be valid for writes.
 */
enum CcopfStatus ccopf_case_dims(const struct CcopfCase *case_, struct CcopfDims *out);

/**
 * Write the nominal load vector `φ` of the case.
 *
 * # Safety
 * `case` must be a live handle; `phi` must be valid for `len` doubles.
 */
enum CcopfStatus ccopf_case_nominal_loads(const struct CcopfCase *case_, double *phi, size_t len);

/**
 * Read a policy checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum CcopfStatus ccopf_policy_load(const char *path, struct CcopfPolicy **out);

/**
 * Release a policy. Null is ignored.
 *
 * # Safety
 * `policy` must come from `ccopf_policy_load` and not be used afterwards.
 */
void ccopf_policy_free(struct CcopfPolicy *policy);

/**
 * Dispatch `x` chosen by `policy` for loads `phi` on `case`.
 *
 * # Safety
 * Handles must be live; `phi` must hold `phi_len` doubles and `x` room for `x_len`.
 */
enum CcopfStatus ccopf_policy_forward(const struct CcopfPolicy *policy,
                                      const struct CcopfCase *case_,
                                      const double *phi,
                                      size_t phi_len,
                                      double *x,
                                      size_t x_len);

/**
 * Newton power flow for dispatch `x` and loads `phi`. Writes the state `u`
 * and, if `summary` is non-null, cost and constraint status.
 *
 * # Safety
 * `case` must be live; `x`, `phi` must hold `x_len`, `phi_len` doubles and
 * `u` room for `u_len`; `summary` must be null or valid for writes.
 */
enum CcopfStatus ccopf_pf_solve(const struct CcopfCase *case_,
                                const double *x,
                                size_t x_len,
                                const double *phi,
                                size_t phi_len,
                                double *u,
                                size_t u_len,
                                struct CcopfPfSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CCOPF_H */
