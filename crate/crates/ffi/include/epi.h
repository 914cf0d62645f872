#ifndef EPI_H
#define EPI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum EpiStatus {
  EPI_STATUS_OK = 0,
  EPI_STATUS_NULL_POINTER = 1,
  EPI_STATUS_INVALID_ARGUMENT = 2,
  EPI_STATUS_LENGTH_MISMATCH = 3,
  EPI_STATUS_INVALID_PARTITION = 4,
  EPI_STATUS_NON_FINITE = 5,
  EPI_STATUS_DEGENERATE = 6,
  EPI_STATUS_CORRUPT_SNAPSHOT = 7,
  EPI_STATUS_BUFFER_TOO_SMALL = 8,
  EPI_STATUS_PANIC = 9,
  EPI_STATUS_INTERNAL = 10,
} EpiStatus;

// Mask selection rule; the numeric values match the snapshot strategy byte.
typedef enum EpiStrategy {
  EPI_STRATEGY_EPI = 0,
  EPI_STRATEGY_STATIC = 1,
  EPI_STRATEGY_PER_LAYER_BUDGET = 2,
  EPI_STRATEGY_GLOBAL_RAW = 3,
  EPI_STRATEGY_RANDOM = 4,
  EPI_STRATEGY_NONE = 5,
} EpiStrategy;

// A protected-coordinate set with its step, ratio and strategy.
typedef struct EpiMask EpiMask;

// Named, contiguous parameter groups.
typedef struct EpiPartition EpiPartition;

// EMA of squared gradients.
typedef struct EpiSensitivity EpiSensitivity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next `epi_*` call on the same thread.
const char *epi_last_error(void);

// Library version as a static nul-terminated string.
const char *epi_version(void);

// Builds a partition from `n` group sizes laid out in order. `names` may be
// null (groups are then called `g0`, `g1`, …) or point to `n` C strings.
//
// # Safety
// `sizes` must point to `n` values and `names`, when non-null, to `n` valid
// nul-terminated strings. `out` must be writable.
enum EpiStatus epi_partition_new(const size_t *sizes,
                                 const char *const *names,
                                 size_t n,
                                 struct EpiPartition **out);

// Total parameter count of the partition; 0 for a null handle.
//
// # Safety
// `partition` must be null or a live handle.
size_t epi_partition_dim(const struct EpiPartition *partition);

// Number of groups in the partition; 0 for a null handle.
//
// # Safety
// `partition` must be null or a live handle.
size_t epi_partition_groups(const struct EpiPartition *partition);

// # Safety
// `partition` must be null or a handle not yet freed.
void epi_partition_free(struct EpiPartition *partition);

// Creates a zeroed sensitivity state over `dim` coordinates with decay `beta` in [0, 1).
//
// # Safety
// `out` must be writable.
enum EpiStatus epi_sensitivity_new(size_t dim, double beta, struct EpiSensitivity **out);

// Folds one gradient of length `len` into the running average.
//
// # Safety
// `state` must be a live handle and `grad` must point to `len` values.
enum EpiStatus epi_sensitivity_accumulate(struct EpiSensitivity *state,
                                          const double *grad,
                                          size_t len);

// Copies the current scores into `out`, which must hold exactly the state's dimension.
//
// # Safety
// `state` must be a live handle and `out` must point to `len` writable values.
enum EpiStatus epi_sensitivity_values(const struct EpiSensitivity *state, double *out, size_t len);

// Number of gradients accumulated since creation or the last reset; 0 for a null handle.
//
// # Safety
// `state` must be null or a live handle.
uint64_t epi_sensitivity_steps(const struct EpiSensitivity *state);

// Zeroes the scores and step count.
//
// # Safety
// `state` must be a live handle.
enum EpiStatus epi_sensitivity_reset(struct EpiSensitivity *state);

// # Safety
// `state` must be null or a handle not yet freed.
void epi_sensitivity_free(struct EpiSensitivity *state);

// Min-max normalises `scores` within each group of `partition` into `out`.
//
// # Safety
// `partition` must be a live handle; `scores` and `out` must each point to `len` values.
enum EpiStatus epi_normalize(const struct EpiPartition *partition,
                             const double *scores,
                             double *out,
                             size_t len);

// Selects a mask protecting round(p·d) coordinates from the sensitivity
// state. `seed` only matters for `EPI_STRATEGY_RANDOM`.
//
// # Safety
// `state` and `partition` must be live handles; `out` must be writable.
enum EpiStatus epi_mask_select(const struct EpiSensitivity *state,
                               const struct EpiPartition *partition,
                               double p,
                               enum EpiStrategy strategy,
                               uint64_t seed,
                               uint64_t step,
                               struct EpiMask **out);

// Builds a mask of dimension `dim` protecting the listed coordinates.
//
// # Safety
// `indices` must point to `n` values; `out` must be writable.
enum EpiStatus epi_mask_from_indices(size_t dim,
                                     const size_t *indices,
                                     size_t n,
                                     uint64_t step,
                                     struct EpiMask **out);

// Mask dimension; 0 for a null handle.
//
// # Safety
// `mask` must be null or a live handle.
size_t epi_mask_dim(const struct EpiMask *mask);

// Protected-coordinate count; 0 for a null handle.
//
// # Safety
// `mask` must be null or a live handle.
size_t epi_mask_popcount(const struct EpiMask *mask);

// Step the mask was selected at; 0 for a null handle.
//
// # Safety
// `mask` must be null or a live handle.
uint64_t epi_mask_step(const struct EpiMask *mask);

// Writes whether coordinate `j` is protected.
//
// # Safety
// `mask` must be a live handle; `out` must be writable.
enum EpiStatus epi_mask_get(const struct EpiMask *mask, size_t j, bool *out);

// Writes the protected indices in ascending order. `written` always receives
// the popcount; if `cap` is smaller, nothing is copied and
// `EPI_STATUS_BUFFER_TOO_SMALL` is returned.
//
// # Safety
// `mask` must be a live handle, `out` must point to `cap` writable values
// (or be null when `cap` is 0) and `written` must be writable.
enum EpiStatus epi_mask_indices(const struct EpiMask *mask,
                                size_t *out,
                                size_t cap,
                                size_t *written);

// Number of coordinates whose protection differs between two equal-length masks.
//
// # Safety
// `a` and `b` must be live handles; `out` must be writable.
enum EpiStatus epi_mask_hamming(const struct EpiMask *a, const struct EpiMask *b, size_t *out);

// |a ∩ b| / |a ∪ b|; fails with `EPI_STATUS_DEGENERATE` if both masks are empty.
//
// # Safety
// `a` and `b` must be live handles; `out` must be writable.
enum EpiStatus epi_mask_jaccard(const struct EpiMask *a, const struct EpiMask *b, double *out);

// Serialises the mask in the EPIM snapshot format. `written` always receives
// the encoded size; pass a null `buf` with `cap` 0 to query it.
//
// # Safety
// `mask` must be a live handle, `buf` must point to `cap` writable bytes (or
// be null when `cap` is 0) and `written` must be writable.
enum EpiStatus epi_mask_encode(const struct EpiMask *mask,
                               uint8_t *buf,
                               size_t cap,
                               size_t *written);

// Parses an EPIM snapshot, rejecting bad magic, version, length or strategy.
//
// # Safety
// `bytes` must point to `len` readable bytes; `out` must be writable.
enum EpiStatus epi_mask_decode(const uint8_t *bytes, size_t len, struct EpiMask **out);

// # Safety
// `mask` must be null or a handle not yet freed.
void epi_mask_free(struct EpiMask *mask);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EPI_H */
