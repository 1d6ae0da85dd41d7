#ifndef LFPS_H
#define LFPS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Maximum number of expansion offsets carried in [`LfpsConfig`].
#define LFPS_MAX_OFFSETS 8

typedef enum LfpsStatus {
  LFPS_STATUS_OK = 0,
  LFPS_STATUS_NULL_POINTER = 1,
  LFPS_STATUS_INVALID_ARGUMENT = 2,
  LFPS_STATUS_INVALID_CONFIG = 3,
  LFPS_STATUS_DIMENSION_MISMATCH = 4,
  LFPS_STATUS_INSUFFICIENT_CONTEXT = 5,
  LFPS_STATUS_NON_FINITE = 6,
  LFPS_STATUS_TRACE_FORMAT = 7,
  LFPS_STATUS_IO = 8,
  LFPS_STATUS_PANIC = 9,
} LfpsStatus;

// Opaque single-head decoding session.
typedef struct LfpsSession LfpsSession;

// Opaque parsed trace.
typedef struct LfpsTrace LfpsTrace;

// Pipeline parameters. Fill with [`lfps_config_default`] and adjust.
typedef struct LfpsConfig {
  size_t head_dim;
  size_t prefill_window;
  size_t sink_count;
  size_t local_window;
  double decay;
  double epsilon;
  double threshold_scale;
  int64_t expansion_offsets[LFPS_MAX_OFFSETS];
  size_t expansion_offset_count;
  // Nonzero clamps table entries at zero.
  uint8_t clamp_negative;
  // Nonzero probes every non-sink position.
  uint8_t exhaustive;
  // Nonzero returns the prefill mean value for bypassed heads.
  uint8_t bypass_mean_only;
} LfpsConfig;

typedef struct LfpsTraceInfo {
  uint64_t layers;
  uint64_t heads;
  uint64_t head_dim;
  uint64_t n_prefill;
  uint64_t steps;
  uint64_t prefill_window;
  uint64_t sink_count;
} LfpsTraceInfo;

typedef struct LfpsStepInfo {
  uint64_t step;
  // Context length before this step's key was appended.
  size_t context_len;
  size_t selected;
  size_t probe_len;
  size_t dot_products;
  uint8_t bypassed;
  double rho;
} LfpsStepInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *lfps_version(void);

// Message for the last failed call on this thread, or NULL.
//
// The pointer stays valid until the next library call on the same thread.
const char *lfps_last_error_message(void);

// Writes the default configuration for head dimension `head_dim`.
//
// # Safety
// `out` must be NULL or point to writable memory for one `LfpsConfig`.
enum LfpsStatus lfps_config_default(size_t head_dim, struct LfpsConfig *out);

// Reads and verifies a trace file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum LfpsStatus lfps_trace_read(const char *path, struct LfpsTrace **out);

// Parses a trace from an in-memory buffer.
//
// # Safety
// `bytes` must point to `len` readable bytes; `out` must be writable.
enum LfpsStatus lfps_trace_from_bytes(const uint8_t *bytes, size_t len, struct LfpsTrace **out);

// # Safety
// `trace` must come from this library; `out` must be writable.
enum LfpsStatus lfps_trace_info(const struct LfpsTrace *trace, struct LfpsTraceInfo *out);

// Releases a trace. NULL is ignored.
//
// # Safety
// `trace` must come from this library and not be used afterwards.
void lfps_trace_free(struct LfpsTrace *trace);

// Copies the step inputs of `head` at `step` into caller buffers of length `head_dim`.
//
// # Safety
// `trace` must come from this library; each output must hold `head_dim` doubles.
enum LfpsStatus lfps_trace_step_input(const struct LfpsTrace *trace,
                                      size_t step,
                                      size_t head,
                                      double *query,
                                      double *key,
                                      double *value);

// Starts a session for flat head index `head` of a trace.
//
// # Safety
// `trace` and `config` must be valid; `out` must be writable.
enum LfpsStatus lfps_session_from_trace(const struct LfpsTrace *trace,
                                        size_t head,
                                        const struct LfpsConfig *config,
                                        struct LfpsSession **out);

// Starts a session from raw prefill state.
//
// `keys` and `values` are row-major `n x head_dim`. `weights` holds
// `prefill_window` rows of `n - sink_count` attention weights, oldest first.
//
// # Safety
// Every pointer must reference the number of doubles described above.
enum LfpsStatus lfps_session_new(const struct LfpsConfig *config,
                                 const double *keys,
                                 const double *values,
                                 size_t n,
                                 const double *weights,
                                 const double *last_query,
                                 struct LfpsSession **out);

// Decodes one step. On failure the session is unchanged.
//
// `output` receives `head_dim` doubles; `info` may be NULL.
//
// # Safety
// `session` must be valid; vectors must hold `head_dim` doubles.
enum LfpsStatus lfps_session_step(struct LfpsSession *session,
                                  const double *query,
                                  const double *key,
                                  const double *value,
                                  double budget,
                                  double *output,
                                  struct LfpsStepInfo *info);

// # Safety
// `session` must be valid; `out` must be writable.
enum LfpsStatus lfps_session_context_len(const struct LfpsSession *session, size_t *out);

// Releases a session. NULL is ignored.
//
// # Safety
// `session` must come from this library and not be used afterwards.
void lfps_session_free(struct LfpsSession *session);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LFPS_H */
