/* Generated by cbindgen from the tgfd-ffi crate. Do not edit. */

#ifndef TGFD_H
#define TGFD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TgfdPooling {
  TGFD_POOLING_MEAN = 0,
  TGFD_POOLING_ATTENTION = 1,
} TgfdPooling;

typedef enum TgfdStatus {
  TGFD_STATUS_OK = 0,
  /**
   * A null pointer, bad UTF-8, an out-of-range index or a rejected option.
   */
  TGFD_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Data that does not satisfy the model's structural requirements.
   */
  TGFD_STATUS_VALIDATION = 2,
  /**
   * A computation produced a non-finite value.
   */
  TGFD_STATUS_NUMERICAL = 3,
  TGFD_STATUS_IO = 4,
  /**
   * A file could not be parsed.
   */
  TGFD_STATUS_FORMAT = 5,
  TGFD_STATUS_PANIC = 6,
} TgfdStatus;

/**
 * A set of labelled graph windows.
 */
typedef struct TgfdDataset TgfdDataset;

/**
 * Trained parameters together with their training configuration.
 */
typedef struct TgfdModel TgfdModel;

/**
 * Training options. Start from [`tgfd_train_options_default`].
 */
typedef struct TgfdTrainOptions {
  size_t hidden_dim;
  enum TgfdPooling pooling;
  double learning_rate;
  double beta1;
  double beta2;
  double epsilon;
  size_t batch_size;
  size_t max_epochs;
  /**
   * 0 disables early stopping.
   */
  size_t patience;
  uint64_t seed;
  double validation_fraction;
  /**
   * Values `<= 0` disable clipping.
   */
  double clip_norm;
} TgfdTrainOptions;

/**
 * Headline metrics. `auc_roc` is NaN when no class has both positives and negatives.
 */
typedef struct TgfdMetrics {
  double accuracy;
  double precision;
  double recall;
  double f1;
  double auc_roc;
  double macro_f1;
  double micro_f1;
  double mcc;
} TgfdMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *tgfd_last_error(void);

const char *tgfd_version(void);

/**
 * # Safety
 * `dir` must be a null-terminated string and `out_dataset` writable.
 */
enum TgfdStatus tgfd_dataset_load(const char *dir, struct TgfdDataset **out_dataset);

/**
 * Simulated dataset with `per_class` windows of each fault class, using the
 * default topology and scenario settings.
 *
 * # Safety
 * `out_dataset` must be writable.
 */
enum TgfdStatus tgfd_dataset_simulate(size_t per_class,
                                      uint64_t seed,
                                      struct TgfdDataset **out_dataset);

/**
 * # Safety
 * `dataset` must come from this library and `dir` be a null-terminated string.
 */
enum TgfdStatus tgfd_dataset_save(const struct TgfdDataset *dataset, const char *dir);

/**
 * # Safety
 * `dataset` must come from this library and `out_len` be writable.
 */
enum TgfdStatus tgfd_dataset_len(const struct TgfdDataset *dataset, size_t *out_len);

/**
 * Label of window `index`.
 *
 * # Safety
 * `dataset` must come from this library and `out_label` be writable.
 */
enum TgfdStatus tgfd_dataset_label(const struct TgfdDataset *dataset,
                                   size_t index,
                                   size_t *out_label);

/**
 * # Safety
 * `dataset` must be null or come from this library, and not be used afterwards.
 */
void tgfd_dataset_free(struct TgfdDataset *dataset);

struct TgfdTrainOptions tgfd_train_options_default(void);

/**
 * # Safety
 * `dataset` must come from this library, `options` be null or readable, and
 * `out_model` writable. A null `options` means the defaults.
 */
enum TgfdStatus tgfd_train(const struct TgfdDataset *dataset,
                           const struct TgfdTrainOptions *options,
                           struct TgfdModel **out_model);

/**
 * # Safety
 * `path` must be a null-terminated string and `out_model` writable.
 */
enum TgfdStatus tgfd_model_load(const char *path, struct TgfdModel **out_model);

/**
 * # Safety
 * `model` must come from this library and `path` be a null-terminated string.
 */
enum TgfdStatus tgfd_model_save(const struct TgfdModel *model, const char *path);

/**
 * # Safety
 * `model` must come from this library and `out_classes` be writable.
 */
enum TgfdStatus tgfd_model_num_classes(const struct TgfdModel *model, size_t *out_classes);

/**
 * # Safety
 * `model` must be null or come from this library, and not be used afterwards.
 */
void tgfd_model_free(struct TgfdModel *model);

/**
 * # Safety
 * Handles must come from this library and `out_metrics` be writable.
 */
enum TgfdStatus tgfd_evaluate(const struct TgfdModel *model,
                              const struct TgfdDataset *dataset,
                              struct TgfdMetrics *out_metrics);

/**
 * Class distribution for window `index`, written to `out_probs`, which must
 * hold `len` values; `len` must equal the model's class count.
 *
 * # Safety
 * Handles must come from this library and `out_probs` point to `len` writable doubles.
 */
enum TgfdStatus tgfd_predict(const struct TgfdModel *model,
                             const struct TgfdDataset *dataset,
                             size_t index,
                             double *out_probs,
                             size_t len);

/**
 * Finite-difference check of every parameter gradient on a random window.
 * Writes the largest relative error.
 *
 * # Safety
 * `out_max_rel_error` must be writable.
 */
enum TgfdStatus tgfd_gradcheck(uint64_t seed,
                               size_t nodes,
                               size_t steps,
                               size_t feat_dim,
                               size_t hidden_dim,
                               size_t classes,
                               double edge_prob,
                               enum TgfdPooling pooling,
                               double step,
                               double *out_max_rel_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TGFD_H */
