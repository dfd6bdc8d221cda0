/*
 * C interface to the simmil library: weakly supervised MIL pretraining,
 * feature extraction, downstream aggregator training, and evaluation.
 *
 * Every entry point returns a simmil_status; on failure a thread-local
 * message is available through simmil_last_error(). Status values double
 * as process exit codes for the CLI: 0 success, 1 runtime failure
 * (I/O, corrupt artifacts), 2 usage/config errors (bad config keys or
 * values, contract violations such as mismatched task kinds).
 */
#ifndef SIMMIL_SIMMIL_H
#define SIMMIL_SIMMIL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SIMMIL_API __declspec(dllexport)
#else
#define SIMMIL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum simmil_status {
  SIMMIL_OK = 0,
  SIMMIL_ERR_RUNTIME = 1,
  SIMMIL_ERR_USAGE = 2
} simmil_status;

SIMMIL_API const char* simmil_version(void);
SIMMIL_API const char* simmil_last_error(void);

/*
 * Pipeline runs. Each writes its artifacts plus a manifest.json (command,
 * config fingerprint, seed, artifact hashes) under out_dir.
 *
 * synth_bags writes train/ and test/ dataset directories (bag manifest,
 * instance store, ground-truth sidecar).
 */
SIMMIL_API simmil_status simmil_synth_bags(const char* config_path, const char* out_dir,
                                           uint64_t seed);

/* data_dir is a synth_bags output directory; trains on its train/ split. */
SIMMIL_API simmil_status simmil_pretrain(const char* config_path, const char* data_dir,
                                         const char* out_dir, uint64_t seed);
SIMMIL_API simmil_status simmil_pretrain_survival(const char* config_path, const char* data_dir,
                                                  const char* out_dir, uint64_t seed);
SIMMIL_API simmil_status simmil_pretrain_contrastive(const char* config_path,
                                                     const char* data_dir, const char* out_dir,
                                                     uint64_t seed);
SIMMIL_API simmil_status simmil_continue_pretrain(const char* config_path,
                                                  const char* parent_checkpoint,
                                                  const char* data_dir, const char* out_dir,
                                                  uint64_t seed);

/* Writes train.smfc / test.smfc feature caches for the two splits. */
SIMMIL_API simmil_status simmil_extract(const char* config_path, const char* checkpoint_path,
                                        const char* data_dir, const char* out_dir);

/* features_dir must hold train.smfc and test.smfc from simmil_extract. */
SIMMIL_API simmil_status simmil_train_aggregator(const char* config_path,
                                                 const char* features_dir,
                                                 const char* aggregator, const char* out_dir,
                                                 uint64_t seed);

/* Instance-level linear probing / fine-tuning against generator truth. */
SIMMIL_API simmil_status simmil_eval_instance(const char* config_path,
                                              const char* checkpoint_path,
                                              const char* data_dir, const char* out_dir,
                                              uint64_t seed);

/*
 * Finite-difference verification of all training components. Writes
 * gradcheck.json under out_dir (when non-NULL) and reports the worst
 * relative error through max_rel_err (when non-NULL). Returns
 * SIMMIL_ERR_RUNTIME when the check exceeds the 1e-3 tolerance.
 */
SIMMIL_API simmil_status simmil_gradcheck(int trials, uint64_t seed, const char* out_dir,
                                          double* max_rel_err);

/* Aggregates run reports into summary.csv / summary.json under out_dir. */
SIMMIL_API simmil_status simmil_report(const char* const* run_dirs, size_t count,
                                       const char* out_dir);

/* ---- opaque artifact handles ---- */

typedef struct simmil_dataset simmil_dataset;
SIMMIL_API simmil_status simmil_dataset_open(const char* dir, simmil_dataset** out);
SIMMIL_API void simmil_dataset_close(simmil_dataset* ds);
SIMMIL_API int64_t simmil_dataset_bag_count(const simmil_dataset* ds);
SIMMIL_API int64_t simmil_dataset_instance_count(const simmil_dataset* ds);
SIMMIL_API int simmil_dataset_class_count(const simmil_dataset* ds);

typedef struct simmil_checkpoint simmil_checkpoint;
SIMMIL_API simmil_status simmil_checkpoint_open(const char* path, simmil_checkpoint** out);
SIMMIL_API void simmil_checkpoint_close(simmil_checkpoint* ckpt);
SIMMIL_API int64_t simmil_checkpoint_array_count(const simmil_checkpoint* ckpt);
/* hex must hold at least 65 bytes (64 hex digits + NUL) */
SIMMIL_API simmil_status simmil_checkpoint_fingerprint(const simmil_checkpoint* ckpt, char* hex,
                                                       size_t len);

typedef struct simmil_features simmil_features;
SIMMIL_API simmil_status simmil_features_open(const char* path, simmil_features** out);
SIMMIL_API void simmil_features_close(simmil_features* features);
SIMMIL_API int simmil_features_dim(const simmil_features* features);
SIMMIL_API int64_t simmil_features_bag_count(const simmil_features* features);

#ifdef __cplusplus
}
#endif

#endif /* SIMMIL_SIMMIL_H */
