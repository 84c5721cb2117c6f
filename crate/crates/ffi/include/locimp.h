#ifndef LOCIMP_H
#define LOCIMP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LocimpStatus {
  LOCIMP_STATUS_OK = 0,
  LOCIMP_STATUS_NULL_POINTER = 1,
  LOCIMP_STATUS_INVALID_ARGUMENT = 2,
  LOCIMP_STATUS_DIMENSION_MISMATCH = 3,
  LOCIMP_STATUS_INDEX_OUT_OF_RANGE = 4,
  LOCIMP_STATUS_IO = 5,
  LOCIMP_STATUS_PARSE = 6,
  LOCIMP_STATUS_NUMERIC = 7,
  LOCIMP_STATUS_INTERNAL = 8,
} LocimpStatus;

// A trained random forest.
typedef struct LocimpForest LocimpForest;

// Per-instance normalized feature importances.
typedef struct LocimpImportance LocimpImportance;

// A data table: features plus one target column.
typedef struct LocimpTable LocimpTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *locimp_last_error(void);

// Library version as a static NUL-terminated string.
const char *locimp_version(void);

// Builds a table from `n * d` row-major features and `n` targets.
//
// # Safety
// `features` must point to `n * d` doubles, `target` to `n` doubles and
// `out` to writable handle storage.
enum LocimpStatus locimp_table_new(const double *features,
                                   size_t n,
                                   size_t d,
                                   const double *target,
                                   struct LocimpTable **out);

// Generates `n` rows of synthetic dataset `id` (1 to 6) with `d` features.
//
// # Safety
// `out` must point to writable handle storage.
enum LocimpStatus locimp_generate_synthetic(uint32_t id,
                                            size_t n,
                                            size_t d,
                                            uint64_t seed,
                                            struct LocimpTable **out);

// Writes the true local coefficients of synthetic dataset `id` at every row
// of `table` into `out` (`n * d` values).
//
// # Safety
// `table` must be a live handle and `out` must point to `len` doubles.
enum LocimpStatus locimp_true_coefficients(uint32_t id,
                                           const struct LocimpTable *table,
                                           double *out,
                                           size_t len);

// Number of rows, or 0 for a null handle.
//
// # Safety
// `table` must be null or a live handle.
size_t locimp_table_n(const struct LocimpTable *table);

// Number of feature columns, or 0 for a null handle.
//
// # Safety
// `table` must be null or a live handle.
size_t locimp_table_d(const struct LocimpTable *table);

// Copies the row-major features (`n * d` values).
//
// # Safety
// `table` must be a live handle and `out` must point to `len` doubles.
enum LocimpStatus locimp_table_features(const struct LocimpTable *table, double *out, size_t len);

// Copies the target column (`n` values).
//
// # Safety
// `table` must be a live handle and `out` must point to `len` doubles.
enum LocimpStatus locimp_table_target(const struct LocimpTable *table, double *out, size_t len);

// Returns a copy of `table` whose target column is replaced by `target`.
//
// # Safety
// `table` must be a live handle, `target` must point to `n` doubles and
// `out` to writable handle storage.
enum LocimpStatus locimp_table_with_target(const struct LocimpTable *table,
                                           const double *target,
                                           size_t n,
                                           struct LocimpTable **out);

// Releases a table. Null is ignored.
//
// # Safety
// `table` must be null or a handle not yet freed.
void locimp_table_free(struct LocimpTable *table);

// Trains a regression forest on `table`. `mtry = 0` selects `max(d / 3, 1)`.
//
// # Safety
// `table` must be a live handle and `out` must point to writable handle storage.
enum LocimpStatus locimp_forest_train(const struct LocimpTable *table,
                                      size_t n_trees,
                                      size_t mtry,
                                      size_t node_size,
                                      uint64_t seed,
                                      struct LocimpForest **out);

// Predicts `n` row-major rows of width `d` into `out` (`n` values).
//
// # Safety
// `forest` must be a live handle, `rows` must point to `n * d` doubles and
// `out` to `n` doubles.
enum LocimpStatus locimp_forest_predict(const struct LocimpForest *forest,
                                        const double *rows,
                                        size_t n,
                                        size_t d,
                                        double *out);

// Writes the forest as JSON.
//
// # Safety
// `forest` must be a live handle and `path` a NUL-terminated UTF-8 string.
enum LocimpStatus locimp_forest_save(const struct LocimpForest *forest, const char *path);

// Reads a forest written by [`locimp_forest_save`].
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string and `out` writable handle storage.
enum LocimpStatus locimp_forest_load(const char *path, struct LocimpForest **out);

// Releases a forest. Null is ignored.
//
// # Safety
// `forest` must be null or a handle not yet freed.
void locimp_forest_free(struct LocimpForest *forest);

// Out-of-bag local importance of every feature for every row of `table`,
// which must be the table `forest` was trained on.
//
// # Safety
// `forest` and `table` must be live handles and `out` writable handle storage.
enum LocimpStatus locimp_importance_compute(const struct LocimpForest *forest,
                                            const struct LocimpTable *table,
                                            uint64_t seed,
                                            struct LocimpImportance **out);

// Copies the normalized importances (`n * d` values, rows sum to one).
//
// # Safety
// `importance` must be a live handle and `out` must point to `len` doubles.
enum LocimpStatus locimp_importance_weights(const struct LocimpImportance *importance,
                                            double *out,
                                            size_t len);

// Releases an importance matrix. Null is ignored.
//
// # Safety
// `importance` must be null or a handle not yet freed.
void locimp_importance_free(struct LocimpImportance *importance);

// Importance-weighted local explanation of row `index` of `table`, whose
// target column holds the black-box predictions. Writes the intercept, the
// `d` coefficients and the `d` effects; `max_features = 0` allows all features.
//
// # Safety
// Handles must be live; `intercept` must point to one double, and
// `coefficients` and `effects` to `d` doubles each (either may be null).
enum LocimpStatus locimp_varimp_explain(const struct LocimpTable *table,
                                        const struct LocimpImportance *importance,
                                        size_t index,
                                        double bandwidth,
                                        size_t max_features,
                                        double *intercept,
                                        double *coefficients,
                                        double *effects,
                                        size_t d);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOCIMP_H */
