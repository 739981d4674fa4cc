/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef HRSA_H
#define HRSA_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum HrsaStatus {
  HRSA_STATUS_OK = 0,
  HRSA_STATUS_NULL_POINTER = 1,
  HRSA_STATUS_INVALID_ARGUMENT = 2,
  HRSA_STATUS_IO = 3,
  // A metric precondition failed numerically (constant input, zero-norm
  // row, SVD failure).
  HRSA_STATUS_NUMERICAL = 4,
  HRSA_STATUS_PANIC = 5,
} HrsaStatus;

// Opaque handle to a loaded activation dump.
typedef struct HrsaActivationSet HrsaActivationSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread, or NULL.
// The pointer stays valid until the next failing call on the same thread.
const char *hrsa_last_error(void);

// Library version as a static NUL-terminated string.
const char *hrsa_version(void);

// Load a dump directory (`manifest.json` + `layer_{i}.npy`).
//
// # Safety
// `dir` must be a NUL-terminated string; `out` must be writable.
enum HrsaStatus hrsa_activation_set_load(const char *dir, struct HrsaActivationSet **out);

// Release a handle from [`hrsa_activation_set_load`]. NULL is a no-op.
//
// # Safety
// `set` must come from this library and not be used afterwards.
void hrsa_activation_set_free(struct HrsaActivationSet *set);

// # Safety
// `set` must be a live handle; `out` must be writable.
enum HrsaStatus hrsa_activation_set_num_layers(const struct HrsaActivationSet *set, size_t *out);

// # Safety
// `set` must be a live handle; `out` must be writable.
enum HrsaStatus hrsa_activation_set_n_tokens(const struct HrsaActivationSet *set, size_t *out);

// Hidden width of one layer.
//
// # Safety
// `set` must be a live handle; `out` must be writable.
enum HrsaStatus hrsa_activation_set_layer_dim(const struct HrsaActivationSet *set,
                                              size_t layer,
                                              size_t *out);

// Copy one layer into `out` (row-major, `len` must equal `N * D`).
//
// # Safety
// `set` must be a live handle; `out` must hold `len` doubles.
enum HrsaStatus hrsa_activation_set_copy_layer(const struct HrsaActivationSet *set,
                                               size_t layer,
                                               double *out,
                                               size_t len);

// Linear CKA of `x` (`n x dx`) and `y` (`n x dy`).
//
// # Safety
// Buffers must hold `n * dx` and `n * dy` doubles; `out` must be writable.
enum HrsaStatus hrsa_linear_cka(const double *x,
                                const double *y,
                                size_t n,
                                size_t dx,
                                size_t dy,
                                double *out);

// Mean Jaccard overlap of cosine k-NN sets.
//
// # Safety
// Buffers must hold `n * dx` and `n * dy` doubles; `out` must be writable.
enum HrsaStatus hrsa_knn_overlap(const double *x,
                                 const double *y,
                                 size_t n,
                                 size_t dx,
                                 size_t dy,
                                 size_t k,
                                 double *out);

// Mean per-dimension Pearson correlation; undefined columns are skipped.
//
// # Safety
// Both buffers must hold `n * d` doubles; `out` must be writable.
enum HrsaStatus hrsa_dimwise_mean(const double *x,
                                  const double *y,
                                  size_t n,
                                  size_t d,
                                  double *out);

// Orthogonal Procrustes alignment of `x` onto `y`.
//
// `o_star` (optional, `d * d`, row-major) receives the alignment map;
// `residual` and `h_inv` (optional) receive the fit error and the inverse
// row entropy of the map.
//
// # Safety
// Both buffers must hold `n * d` doubles; non-NULL outputs must be writable.
enum HrsaStatus hrsa_procrustes(const double *x,
                                const double *y,
                                size_t n,
                                size_t d,
                                bool center,
                                double *o_star,
                                double *residual,
                                double *h_inv);

// Inverse normalized row entropy of a `d x d` orthogonal matrix.
//
// # Safety
// `o` must hold `d * d` doubles; `out` must be writable.
enum HrsaStatus hrsa_inverse_row_entropy(const double *o, size_t d, double *out);

// Metric for every layer pair of `a` (rows) and `b` (columns).
//
// `metric` is one of `dimwise`, `procrustes`, `cka`, `knn:{k}`. `out` holds
// `rows * cols` doubles, row-major; cells whose preconditions fail are NaN.
// `jobs` bounds worker threads (0 = available parallelism).
//
// # Safety
// Handles must be live, `metric` NUL-terminated, `out` writable for
// `rows * cols` doubles.
enum HrsaStatus hrsa_layer_grid(const struct HrsaActivationSet *a,
                                const struct HrsaActivationSet *b,
                                const char *metric,
                                size_t jobs,
                                double *out,
                                size_t rows,
                                size_t cols);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HRSA_H */
