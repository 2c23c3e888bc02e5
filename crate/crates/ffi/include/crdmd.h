#ifndef CRDMD_H
#define CRDMD_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CrdmdStatus {
  CRDMD_STATUS_OK = 0,
  CRDMD_STATUS_NULL_POINTER = 1,
  CRDMD_STATUS_DIMENSION = 2,
  CRDMD_STATUS_FORMAT = 3,
  CRDMD_STATUS_INPUT = 4,
  CRDMD_STATUS_CONFIG = 5,
  CRDMD_STATUS_NUMERICAL = 6,
  CRDMD_STATUS_DIVERGENCE = 7,
  CRDMD_STATUS_IO = 8,
  CRDMD_STATUS_PANIC = 9,
} CrdmdStatus;

typedef enum CrdmdNoiseKind {
  CRDMD_NOISE_KIND_SALT_PEPPER = 0,
  CRDMD_NOISE_KIND_MISSING = 1,
} CrdmdNoiseKind;

/**
 * Opaque spatio-temporal field.
 */
typedef struct CrdmdField CrdmdField;

/**
 * Opaque set of DMD modes.
 */
typedef struct CrdmdModes CrdmdModes;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. Valid
 * until the next failing call on the same thread.
 */
const char *crdmd_last_error(void);

/**
 * Copies `n1 * n2 * m` values (frame-major, row-major within a frame).
 *
 * # Safety
 * `values` must point to `n1 * n2 * m` doubles; `out` must be writable.
 */
enum CrdmdStatus crdmd_field_new(size_t n1,
                                 size_t n2,
                                 size_t m,
                                 const double *values,
                                 struct CrdmdField **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CrdmdStatus crdmd_field_load(const char *path, struct CrdmdField **out);

/**
 * # Safety
 * `field` must be a live handle; `path` a NUL-terminated string.
 */
enum CrdmdStatus crdmd_field_save(const struct CrdmdField *field, const char *path);

/**
 * # Safety
 * `field` must be a live handle; the outputs must be writable.
 */
enum CrdmdStatus crdmd_field_dims(const struct CrdmdField *field,
                                  size_t *n1,
                                  size_t *n2,
                                  size_t *m);

/**
 * Copies the values into `out`, which must hold exactly `len` doubles.
 *
 * # Safety
 * `field` must be a live handle; `out` must point to `len` doubles.
 */
enum CrdmdStatus crdmd_field_copy_values(const struct CrdmdField *field, double *out, size_t len);

/**
 * # Safety
 * `field` must come from this library and not be used afterwards.
 */
void crdmd_field_free(struct CrdmdField *field);

/**
 * Gaussian noise plus salt-and-pepper or missing entries, seeded.
 *
 * # Safety
 * `field` must be a live handle; `out` must be writable.
 */
enum CrdmdStatus crdmd_corrupt(const struct CrdmdField *field,
                               double sigma,
                               double ps,
                               enum CrdmdNoiseKind kind,
                               uint64_t seed,
                               struct CrdmdField **out);

/**
 * Mixed-noise preprocessing. Writes the denoised field and the sparse
 * component; `iterations` and `converged` may be null.
 *
 * # Safety
 * `observed` must be a live handle; `x_out` and `s_out` must be writable.
 */
enum CrdmdStatus crdmd_denoise(const struct CrdmdField *observed,
                               double eps,
                               double eta,
                               double w,
                               double tol,
                               size_t max_iter,
                               struct CrdmdField **x_out,
                               struct CrdmdField **s_out,
                               size_t *iterations,
                               int *converged);

/**
 * Rank-`r` DMD of `data`.
 *
 * # Safety
 * `data` must be a live handle; `out` must be writable.
 */
enum CrdmdStatus crdmd_extract_modes(const struct CrdmdField *data,
                                     size_t r,
                                     struct CrdmdModes **out);

/**
 * Number of modes (0 for a null handle).
 *
 * # Safety
 * `modes` must be null or a live handle.
 */
size_t crdmd_modes_rank(const struct CrdmdModes *modes);

/**
 * # Safety
 * `modes` must be a live handle; `re` and `im` must hold `len` doubles.
 */
enum CrdmdStatus crdmd_modes_eigenvalues(const struct CrdmdModes *modes,
                                         double *re,
                                         double *im,
                                         size_t len);

/**
 * Least-squares amplitudes of `data` and the importance weights `nu`.
 * `nu` may be null.
 *
 * # Safety
 * Handles must be live; every non-null buffer must hold `len` doubles.
 */
enum CrdmdStatus crdmd_modes_fit_amplitudes(const struct CrdmdModes *modes,
                                            const struct CrdmdField *data,
                                            double *xi_re,
                                            double *xi_im,
                                            double *nu,
                                            size_t len);

/**
 * # Safety
 * `modes` must come from this library and not be used afterwards.
 */
void crdmd_modes_free(struct CrdmdModes *modes);

/**
 * Sparse amplitude reduction against `observed`. Amplitudes are updated in
 * place in `xi_re`/`xi_im` (the initial guess on entry); `recon_out`
 * receives the reconstruction. `feasible` may be null.
 *
 * # Safety
 * Handles must be live; buffers must hold `len` doubles; `recon_out`
 * must be writable.
 */
enum CrdmdStatus crdmd_reduce(const struct CrdmdField *observed,
                              const struct CrdmdModes *modes,
                              const double *nu,
                              double *xi_re,
                              double *xi_im,
                              size_t len,
                              double eps,
                              double eta,
                              double w,
                              double mu,
                              double tol,
                              size_t max_iter,
                              struct CrdmdField **recon_out,
                              int *feasible);

/**
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum CrdmdStatus crdmd_mpsnr(const struct CrdmdField *truth,
                             const struct CrdmdField *estimate,
                             double *out);

/**
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum CrdmdStatus crdmd_mssim(const struct CrdmdField *truth,
                             const struct CrdmdField *estimate,
                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRDMD_H */
