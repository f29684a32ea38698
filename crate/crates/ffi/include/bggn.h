#ifndef BGGN_H
#define BGGN_H

#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum BggnStatus {
  BGGN_STATUS_OK = 0,
  BGGN_STATUS_NULL_POINTER = 1,
  BGGN_STATUS_INVALID_ARGUMENT = 2,
  BGGN_STATUS_DIMENSION_MISMATCH = 3,
  BGGN_STATUS_NOT_FOUND = 4,
  BGGN_STATUS_IO = 5,
  BGGN_STATUS_PARSE = 6,
  BGGN_STATUS_CONFIG = 7,
  BGGN_STATUS_NUMERIC = 8,
  BGGN_STATUS_PANIC = 9,
} BggnStatus;

// Attribute vectors drawn from a model, in draw order.
typedef struct BggnGenerated BggnGenerated;

// Synthetic bias landscape with known ground truth.
typedef struct BggnLandscape BggnLandscape;

// Generative model (pretrained or fine-tuned).
typedef struct BggnModel BggnModel;

// Bias predictor trained on a group table.
typedef struct BggnPredictor BggnPredictor;

// Group bias table (observed, holdout or reference).
typedef struct BggnTable BggnTable;

// Scores of a generated set against a reference table. Metrics that are
// undefined for the inputs are NaN; `bias_number` is then -1.
typedef struct BggnMetrics {
  double tau;
  uint64_t n_gen;
  uint64_t n_distinct;
  uint64_t distinct_bias_number;
  int64_t bias_number;
  double bias_ratio;
  double precision_at_k;
  double recall_at_k;
  double avg_dcg_at_k;
  double rr_at_k_score;
} BggnMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *bggn_version(void);

// Copies the calling thread's last error message into `buf` (truncated and
// always NUL-terminated when `len > 0`). Returns the full message length
// in bytes, excluding the terminator.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t bggn_last_error_message(char *buf, size_t len);

// Creates an empty table over `dimension` attributes.
//
// # Safety
// `out_table` must be a valid pointer to write the handle to.
enum BggnStatus bggn_table_new(size_t dimension, struct BggnTable **out_table);

// Reads `a0..,bias[,count]` rows.
//
// # Safety
// `path` must be a NUL-terminated string; `out_table` a valid pointer.
enum BggnStatus bggn_table_read_csv(const char *path, struct BggnTable **out_table);

// Writes the table as CSV with a count column.
//
// # Safety
// `table` must be a live handle; `path` a NUL-terminated string.
enum BggnStatus bggn_table_write_csv(const struct BggnTable *table, const char *path);

// Adds a group; an existing group is merged by count-weighted mean.
//
// # Safety
// `table` must be a live handle; `bits` must point to `dimension` bytes.
enum BggnStatus bggn_table_insert(struct BggnTable *table,
                                  const uint8_t *bits,
                                  size_t dimension,
                                  double bias,
                                  uint64_t count);

// Number of distinct groups, or 0 for a null handle.
//
// # Safety
// `table` must be null or a live handle.
size_t bggn_table_len(const struct BggnTable *table);

// Attribute dimension, or 0 for a null handle.
//
// # Safety
// `table` must be null or a live handle.
size_t bggn_table_dimension(const struct BggnTable *table);

// Bias of one group; `BGGN_STATUS_NOT_FOUND` when the group is absent.
//
// # Safety
// `table` must be a live handle; `bits` must point to `dimension` bytes;
// `out_bias` must be valid.
enum BggnStatus bggn_table_bias(const struct BggnTable *table,
                                const uint8_t *bits,
                                size_t dimension,
                                double *out_bias);

// Linearly interpolated quantile of group bias values.
//
// # Safety
// `table` must be a live handle; `out_value` must be valid.
enum BggnStatus bggn_table_bias_quantile(const struct BggnTable *table,
                                         double q,
                                         double *out_value);

// Splits groups into observation and holdout tables.
//
// # Safety
// `table` must be a live handle; both output pointers must be valid.
enum BggnStatus bggn_table_split(const struct BggnTable *table,
                                 double holdout_fraction,
                                 uint64_t seed,
                                 struct BggnTable **out_observation,
                                 struct BggnTable **out_holdout);

// # Safety
// `table` must be null or a handle not yet freed.
void bggn_table_free(struct BggnTable *table);

// Random landscape with `cohorts` planted high-bias cohorts.
//
// # Safety
// `out_landscape` must be valid.
enum BggnStatus bggn_landscape_planted(size_t dimension,
                                       size_t cohorts,
                                       uint64_t seed,
                                       struct BggnLandscape **out_landscape);

// Reads a landscape JSON file.
//
// # Safety
// `path` must be a NUL-terminated string; `out_landscape` must be valid.
enum BggnStatus bggn_landscape_load(const char *path, struct BggnLandscape **out_landscape);

// Noiseless bias of one attribute vector.
//
// # Safety
// `landscape` must be a live handle; `bits` must point to `dimension`
// bytes; `out_bias` must be valid.
enum BggnStatus bggn_landscape_bias(const struct BggnLandscape *landscape,
                                    const uint8_t *bits,
                                    size_t dimension,
                                    double *out_bias);

// Samples a noisy group table of `n_groups` groups.
//
// # Safety
// `landscape` must be a live handle; `out_table` must be valid.
enum BggnStatus bggn_landscape_sample(const struct BggnLandscape *landscape,
                                      size_t n_groups,
                                      uint64_t samples_per_group,
                                      struct BggnTable **out_table);

// # Safety
// `landscape` must be null or a handle not yet freed.
void bggn_landscape_free(struct BggnLandscape *landscape);

// Trains a predictor with default settings and the given seed.
//
// # Safety
// `table` must be a live handle; `out_predictor` must be valid.
enum BggnStatus bggn_predictor_train(const struct BggnTable *table,
                                     uint64_t seed,
                                     struct BggnPredictor **out_predictor);

// # Safety
// `path` must be a NUL-terminated string; `out_predictor` must be valid.
enum BggnStatus bggn_predictor_load(const char *path, struct BggnPredictor **out_predictor);

// # Safety
// `predictor` must be a live handle; `path` a NUL-terminated string.
enum BggnStatus bggn_predictor_save(const struct BggnPredictor *predictor, const char *path);

// # Safety
// `predictor` must be a live handle; `bits` must point to `dimension`
// bytes; `out_bias` must be valid.
enum BggnStatus bggn_predictor_predict(const struct BggnPredictor *predictor,
                                       const uint8_t *bits,
                                       size_t dimension,
                                       double *out_bias);

// # Safety
// `predictor` must be null or a handle not yet freed.
void bggn_predictor_free(struct BggnPredictor *predictor);

// Fresh model with the default architecture.
//
// # Safety
// `out_model` must be valid.
enum BggnStatus bggn_model_new(size_t dimension, uint64_t seed, struct BggnModel **out_model);

// Pretrains the model on the observation table.
//
// # Safety
// `model` and `observation` must be live handles.
enum BggnStatus bggn_model_pretrain(struct BggnModel *model,
                                    const struct BggnTable *observation,
                                    uint64_t seed);

// Bias-guided fine-tuning against `predictor`.
//
// # Safety
// `model`, `predictor` and `observation` must be live handles.
enum BggnStatus bggn_model_finetune(struct BggnModel *model,
                                    const struct BggnPredictor *predictor,
                                    const struct BggnTable *observation,
                                    uint64_t seed);

// # Safety
// `path` must be a NUL-terminated string; `out_model` must be valid.
enum BggnStatus bggn_model_load(const char *path, struct BggnModel **out_model);

// # Safety
// `model` must be a live handle; `path` a NUL-terminated string.
enum BggnStatus bggn_model_save(const struct BggnModel *model, const char *path);

// # Safety
// `model` must be null or a handle not yet freed.
void bggn_model_free(struct BggnModel *model);

// Draws `n` attribute vectors, scored by `predictor`. When `reference` is
// not null, items found in it also carry their reference bias.
//
// # Safety
// `model` and `predictor` must be live handles, `reference` null or live,
// and `out_set` valid.
enum BggnStatus bggn_generate(const struct BggnModel *model,
                              const struct BggnPredictor *predictor,
                              size_t n,
                              const struct BggnTable *reference,
                              uint64_t seed,
                              struct BggnGenerated **out_set);

// Number of generated items (duplicates included), or 0 for null.
//
// # Safety
// `set` must be null or a live handle.
size_t bggn_generated_len(const struct BggnGenerated *set);

// Copies item `index` into `out_bits` (`dimension` bytes) and its
// predicted bias into `out_predicted` (may be null).
//
// # Safety
// `set` must be a live handle and `out_bits` must point to `dimension`
// writable bytes.
enum BggnStatus bggn_generated_get(const struct BggnGenerated *set,
                                   size_t index,
                                   uint8_t *out_bits,
                                   size_t dimension,
                                   double *out_predicted);

// # Safety
// `set` must be a live handle; `path` a NUL-terminated string.
enum BggnStatus bggn_generated_save(const struct BggnGenerated *set, const char *path);

// # Safety
// `set` must be null or a handle not yet freed.
void bggn_generated_free(struct BggnGenerated *set);

// Scores `set` against `reference` at threshold `tau` with default metric
// settings.
//
// # Safety
// `set` and `reference` must be live handles; `out_metrics` must be valid.
enum BggnStatus bggn_evaluate(const struct BggnGenerated *set,
                              const struct BggnTable *reference,
                              double tau,
                              struct BggnMetrics *out_metrics);

// Runs the full staged pipeline from a JSON config. `output_dir` overrides
// the config's output directory when not null.
//
// # Safety
// `config_path` must be a NUL-terminated string; `output_dir` null or one.
enum BggnStatus bggn_run_pipeline(const char *config_path, const char *output_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BGGN_H */
