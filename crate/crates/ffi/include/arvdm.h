#ifndef ARVDM_H
#define ARVDM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ArvdmStatus {
  ARVDM_STATUS_OK = 0,
  ARVDM_STATUS_NULL_POINTER = 1,
  ARVDM_STATUS_INVALID_ARGUMENT = 2,
  ARVDM_STATUS_PARSE = 3,
  ARVDM_STATUS_IO = 4,
  ARVDM_STATUS_SCHEDULE = 5,
  ARVDM_STATUS_NUMERICAL = 6,
  ARVDM_STATUS_BUFFER_TOO_SMALL = 7,
  ARVDM_STATUS_PANIC = 8,
} ArvdmStatus;

typedef struct ArvdmLadder ArvdmLadder;

typedef struct ArvdmReport ArvdmReport;

typedef struct ArvdmRunConfig ArvdmRunConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the next failure.
const char *arvdm_last_error(void);

// Library version as a static NUL-terminated string.
const char *arvdm_version(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must come from this library and not be freed twice.
void arvdm_string_free(char *s);

// Parses a ladder document (TOML).
//
// # Safety
// `toml` must be a NUL-terminated string; `out_ladder` must be writable.
enum ArvdmStatus arvdm_ladder_parse(const char *toml, struct ArvdmLadder **out_ladder);

// Block ladder with stride `delta` and horizon `horizon_num / horizon_den`. `delta = 1` is
// FIFO and `delta = w` is outpainting.
//
// # Safety
// `out_ladder` must be writable.
enum ArvdmStatus arvdm_ladder_block(size_t w,
                                    size_t delta,
                                    int64_t horizon_num,
                                    int64_t horizon_den,
                                    struct ArvdmLadder **out_ladder);

// Number of schedule violations; zero means the ladder is valid.
//
// # Safety
// `ladder` must be a live handle; `out_violations` must be writable.
enum ArvdmStatus arvdm_ladder_validate(const struct ArvdmLadder *ladder, size_t *out_violations);

// Violation lines, newline-separated, as a string to release with [`arvdm_string_free`].
//
// # Safety
// `ladder` must be a live handle; `out_text` must be writable.
enum ArvdmStatus arvdm_ladder_report(const struct ArvdmLadder *ladder, char **out_text);

// # Safety
// `ladder` must be null or a handle not yet freed.
void arvdm_ladder_free(struct ArvdmLadder *ladder);

// Builds a run from an experiment document without sweep axes. Ladder files named by the
// document are resolved against `base_dir` (null means the current directory).
//
// # Safety
// `toml` and non-null `base_dir` must be NUL-terminated strings; `out_config` must be writable.
enum ArvdmStatus arvdm_config_parse(const char *toml,
                                    const char *base_dir,
                                    struct ArvdmRunConfig **out_config);

// # Safety
// `config` must be a live handle.
enum ArvdmStatus arvdm_config_set_seed(struct ArvdmRunConfig *config, uint64_t seed);

// Clean video coordinates per path, `K·Δ·d`.
//
// # Safety
// `config` must be a live handle; `out_len` must be writable.
enum ArvdmStatus arvdm_config_video_len(const struct ArvdmRunConfig *config, size_t *out_len);

// # Safety
// `config` must be null or a handle not yet freed.
void arvdm_config_free(struct ArvdmRunConfig *config);

// Runs the full decomposition.
//
// # Safety
// `config` must be a live handle; `out_report` must be writable.
enum ArvdmStatus arvdm_decompose(const struct ArvdmRunConfig *config,
                                 struct ArvdmReport **out_report);

// Measured KL of the generated video against the true one, in nats.
//
// # Safety
// `report` must be a live handle; `out_value` must be writable.
enum ArvdmStatus arvdm_report_measured_kl(const struct ArvdmReport *report, double *out_value);

// Sum of all bound terms and memory-bottleneck values, in nats.
//
// # Safety
// `report` must be a live handle; `out_value` must be writable.
enum ArvdmStatus arvdm_report_bound_total(const struct ArvdmReport *report, double *out_value);

// Copies the per-step memory-bottleneck values into `buf`. `out_len` always receives the
// number of steps; a short buffer yields `BufferTooSmall` and copies nothing.
//
// # Safety
// `report` must be a live handle; `buf` must hold `buf_len` doubles; `out_len` must be writable.
enum ArvdmStatus arvdm_report_mb(const struct ArvdmReport *report,
                                 double *buf,
                                 size_t buf_len,
                                 size_t *out_len);

// Report as JSON, released with [`arvdm_string_free`].
//
// # Safety
// `report` must be a live handle; `out_json` must be writable.
enum ArvdmStatus arvdm_report_to_json(const struct ArvdmReport *report, char **out_json);

// # Safety
// `report` must be null or a handle not yet freed.
void arvdm_report_free(struct ArvdmReport *report);

// Monte Carlo draws of the clean video, row-major `n_paths × video_len`.
//
// # Safety
// `config` must be a live handle; `buf` must hold `buf_len` doubles.
enum ArvdmStatus arvdm_sample_paths(const struct ArvdmRunConfig *config,
                                    size_t n_paths,
                                    double *buf,
                                    size_t buf_len);

// `ε ∈ [0, ½]` with binary entropy `y` bits.
//
// # Safety
// `out_eps` must be writable.
enum ArvdmStatus arvdm_binary_entropy_inverse(double y, double *out_eps);

// Fraction of plugin-estimator trials whose KL reaches `s²/2`.
//
// # Safety
// `out_fraction` must be writable.
enum ArvdmStatus arvdm_minimax_fraction(double s,
                                        size_t n,
                                        size_t trials,
                                        uint64_t seed,
                                        double *out_fraction);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ARVDM_H */
