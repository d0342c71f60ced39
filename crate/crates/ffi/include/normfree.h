#ifndef NORMFREE_H
#define NORMFREE_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every call.
typedef enum NfStatus {
  NF_STATUS_OK = 0,
  NF_STATUS_NULL_POINTER = 1,
  NF_STATUS_INVALID_ARGUMENT = 2,
  NF_STATUS_SHAPE = 3,
  NF_STATUS_NON_FINITE = 4,
  NF_STATUS_CONFIG = 5,
  NF_STATUS_IO = 6,
  NF_STATUS_INTERNAL = 7,
  NF_STATUS_PANIC = 8,
} NfStatus;

typedef enum NfBlockKind {
  NF_BLOCK_KIND_ORIGINAL_BN = 0,
  NF_BLOCK_KIND_MODIFIED_WEIGHTNORM = 1,
  NF_BLOCK_KIND_PLAIN = 2,
} NfBlockKind;

typedef enum NfScheduleKind {
  NF_SCHEDULE_KIND_MONOTONIC_DECREASE = 0,
  NF_SCHEDULE_KIND_STEP_DECREASE = 1,
  NF_SCHEDULE_KIND_CYCLIC_TRIANGULAR = 2,
  NF_SCHEDULE_KIND_WARMUP_THEN_DECAY = 3,
} NfScheduleKind;

typedef enum NfClipMode {
  NF_CLIP_MODE_NONE = 0,
  NF_CLIP_MODE_CONSTANT = 1,
  NF_CLIP_MODE_ADAPTIVE_LOG_INCREASE = 2,
  NF_CLIP_MODE_ADAPTIVE_LOG_DECREASE = 3,
} NfClipMode;

typedef enum NfRunStatus {
  NF_RUN_STATUS_COMPLETED = 0,
  NF_RUN_STATUS_DIVERGED = 1,
  NF_RUN_STATUS_ERROR = 2,
} NfRunStatus;

// Opaque network handle (32-bit floats).
typedef struct NfNetwork NfNetwork;

// Learning-rate schedule. Fields not used by `kind` are ignored.
typedef struct NfSchedule {
  enum NfScheduleKind kind;
  // Base rate of the decreasing schedules.
  double base;
  // Epochs at the base rate before a step decrease starts.
  double hold;
  double min;
  double max;
  // Half-period of the cyclic schedule.
  double step;
  double start;
  double target;
  double warmup;
  double total;
} NfSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the next call.
const char *nf_last_error(void);

// Build a mini-ResNet with `stages` stages of the given widths and block counts.
// `dropout` applies only to weight-norm blocks. The handle is released with [`nf_network_free`].
//
// # Safety
// `widths` and `blocks` must each point to `stages` values; `out` must be writable.
enum NfStatus nf_network_new(size_t in_channels,
                             const size_t *widths,
                             const size_t *blocks,
                             size_t stages,
                             enum NfBlockKind kind,
                             size_t classes,
                             double dropout,
                             uint64_t seed,
                             struct NfNetwork **out);

// Release a handle from [`nf_network_new`]. Null is ignored.
//
// # Safety
// `net` must be null or a live handle not used afterwards.
void nf_network_free(struct NfNetwork *net);

// Total number of trainable scalars.
//
// # Safety
// `net` must be a live handle; `out` must be writable.
enum NfStatus nf_network_param_count(const struct NfNetwork *net, size_t *out);

// Logits for an `n × c × h × w` batch, written row-major to `out` (`n × classes`).
// Evaluation mode unless `train` is set; train mode uses batch statistics and
// updates running statistics.
//
// # Safety
// `net` must be a live handle, `input` must hold `n·c·h·w` values and `out`
// must have room for `out_len` values.
enum NfStatus nf_network_forward(struct NfNetwork *net,
                                 const float *input,
                                 size_t n,
                                 size_t c,
                                 size_t h,
                                 size_t w,
                                 bool train,
                                 float *out,
                                 size_t out_len);

// Learning rate at real-valued epoch progress `t`.
//
// # Safety
// `schedule` must be readable and `out` writable.
enum NfStatus nf_lr_at(const struct NfSchedule *schedule, double t, double *out);

// Clipping threshold at `epoch`. With mode `None`, `*enabled` is false and `*out` is untouched.
//
// # Safety
// `enabled` and `out` must be writable.
enum NfStatus nf_clip_threshold_at(enum NfClipMode mode,
                                   double initial,
                                   size_t epoch,
                                   bool *enabled,
                                   double *out);

// Run the experiment described by the TOML file at `config_path`. A non-null
// `out_dir` overrides the config's output directory. A diverged run is still
// `NF_STATUS_OK`; its outcome is reported in `*status`.
//
// # Safety
// `config_path` and a non-null `out_dir` must be NUL-terminated UTF-8; `status` must be writable.
enum NfStatus nf_run_config(const char *config_path, const char *out_dir, enum NfRunStatus *status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NORMFREE_H */
