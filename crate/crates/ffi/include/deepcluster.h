#ifndef DEEPCLUSTER_H
#define DEEPCLUSTER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes. Values 2 to 5 match the command-line exit codes.
 */
typedef enum dc_status {
  DC_STATUS_OK = 0,
  DC_STATUS_INVALID_ARGUMENT = 1,
  DC_STATUS_CONFIG = 2,
  DC_STATUS_DATA = 3,
  DC_STATUS_MODEL = 4,
  DC_STATUS_RUNTIME = 5,
  DC_STATUS_PANIC = 6,
} dc_status;

typedef enum dc_algorithm {
  DC_ALGORITHM_K_MEANS = 0,
  DC_ALGORITHM_MINI_BATCH_K_MEANS = 1,
  DC_ALGORITHM_AFFINITY_PROPAGATION = 2,
  DC_ALGORITHM_MEAN_SHIFT = 3,
  DC_ALGORITHM_AGGLOMERATIVE = 4,
  DC_ALGORITHM_DBSCAN = 5,
  DC_ALGORITHM_BIRCH = 6,
} dc_algorithm;

/**
 * Labels of one clustering run; `-1` marks noise.
 */
typedef struct dc_assignment dc_assignment;

/**
 * Row-major feature matrix with record ids.
 */
typedef struct dc_features dc_features;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *dc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dc_version(void);

/**
 * Copies an `n x d` row-major matrix. Rows get ids `"0"`, `"1"`, ...
 *
 * # Safety
 * `data` must point to `n * d` readable floats and `out` to writable
 * storage for one pointer.
 */
enum dc_status dc_features_new(const float *data,
                               uintptr_t n,
                               uintptr_t d,
                               struct dc_features **out);

/**
 * Loads a feature cache file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum dc_status dc_features_load(const char *path, struct dc_features **out);

/**
 * Writes a feature cache file.
 *
 * # Safety
 * `features` must be a live handle and `path` a NUL-terminated string.
 */
enum dc_status dc_features_save(const struct dc_features *features, const char *path);

/**
 * Number of rows, or 0 for NULL.
 *
 * # Safety
 * `features` must be NULL or a live handle.
 */
uintptr_t dc_features_rows(const struct dc_features *features);

/**
 * Row width, or 0 for NULL.
 *
 * # Safety
 * `features` must be NULL or a live handle.
 */
uintptr_t dc_features_dim(const struct dc_features *features);

/**
 * # Safety
 * `features` must be NULL or a handle not yet freed.
 */
void dc_features_free(struct dc_features *features);

/**
 * Clusters with default parameters. Pass `k = 0` for algorithms that find
 * the number of clusters themselves (AP, MS, DBSCAN).
 *
 * # Safety
 * `features` must be a live handle and `out` writable.
 */
enum dc_status dc_cluster(const struct dc_features *features,
                          enum dc_algorithm algorithm,
                          uintptr_t k,
                          uint64_t seed,
                          struct dc_assignment **out);

/**
 * Clusters with a JSON config such as
 * `{"algorithm": "DBS", "overrides": {"eps": 2.0}}`.
 *
 * # Safety
 * `features` must be a live handle, `config_json` a NUL-terminated string
 * and `out` writable.
 */
enum dc_status dc_cluster_json(const struct dc_features *features,
                               const char *config_json,
                               uint64_t seed,
                               struct dc_assignment **out);

/**
 * Number of labels, or 0 for NULL.
 *
 * # Safety
 * `assignment` must be NULL or a live handle.
 */
uintptr_t dc_assignment_len(const struct dc_assignment *assignment);

/**
 * Number of clusters found, noise excluded; 0 for NULL.
 *
 * # Safety
 * `assignment` must be NULL or a live handle.
 */
uintptr_t dc_assignment_clusters(const struct dc_assignment *assignment);

/**
 * Fit time in seconds; 0 for NULL.
 *
 * # Safety
 * `assignment` must be NULL or a live handle.
 */
double dc_assignment_seconds(const struct dc_assignment *assignment);

/**
 * Copies the labels into `buf`, which must hold at least
 * [`dc_assignment_len`] entries.
 *
 * # Safety
 * `assignment` must be a live handle and `buf` writable for `capacity`
 * ints.
 */
enum dc_status dc_assignment_labels(const struct dc_assignment *assignment,
                                    int32_t *buf,
                                    uintptr_t capacity);

/**
 * # Safety
 * `assignment` must be NULL or a handle not yet freed.
 */
void dc_assignment_free(struct dc_assignment *assignment);

/**
 * NMI (geometric normalization) and purity of `pred` against `truth`.
 * Negative predictions count as one noise cluster.
 *
 * # Safety
 * `pred` and `truth` must point to `n` readable values; `nmi` and `purity`
 * must be writable.
 */
enum dc_status dc_score(const int32_t *pred,
                        const uint32_t *truth,
                        uintptr_t n,
                        double *nmi,
                        double *purity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEEPCLUSTER_H */
