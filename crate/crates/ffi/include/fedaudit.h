#ifndef FEDAUDIT_H
#define FEDAUDIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Which side of the null distribution indicates membership.
typedef enum FaOrientation {
  FA_ORIENTATION_MEMBER_HIGH = 0,
  FA_ORIENTATION_MEMBER_LOW = 1,
} FaOrientation;

// Result code of every fallible call.
typedef enum FaStatus {
  FA_STATUS_OK = 0,
  FA_STATUS_NULL_POINTER = 1,
  FA_STATUS_INVALID_ARGUMENT = 2,
  FA_STATUS_CONFIG = 3,
  FA_STATUS_INTEGRITY = 4,
  FA_STATUS_IO = 5,
  FA_STATUS_BUFFER_TOO_SMALL = 6,
  FA_STATUS_RUNTIME = 7,
  FA_STATUS_PANIC = 8,
} FaStatus;

// FedMIA measurement variant: I scores the reconstructed local loss,
// II the update/gradient cosine.
typedef enum FaVariant {
  FA_VARIANT_I = 0,
  FA_VARIANT_II = 1,
} FaVariant;

// A loaded update trace together with its audited targets.
typedef struct FaTrace FaTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *fa_version(void);

// Copies the calling thread's last error message into `buf`.
//
// Returns the buffer size required including the terminating NUL, or 0 when
// the last call succeeded.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t fa_last_error_message(char *buf, size_t len);

// `P(X <= x)` for `X ~ N(mean, variance)`.
//
// # Safety
// `out` must be a valid pointer to a `double`.
enum FaStatus fa_gaussian_cdf(double x, double mean, double variance, double *out);

// Area under the ROC curve; `is_member[i]` is nonzero for members.
//
// # Safety
// `scores` and `is_member` must each hold `n` elements; `out` must be valid.
enum FaStatus fa_auc(const double *scores, const uint8_t *is_member, size_t n, double *out);

// Best true-positive rate whose false-positive rate stays within `fpr_cap`.
// `achieved_fpr` may be null.
//
// # Safety
// `scores` and `is_member` must each hold `n` elements; `tpr` must be valid;
// `achieved_fpr` must be null or valid.
enum FaStatus fa_tpr_at_fpr(const double *scores,
                            const uint8_t *is_member,
                            size_t n,
                            double fpr_cap,
                            double *tpr,
                            double *achieved_fpr);

// Area dominated by the points `(utility_loss[i], privacy_leakage[i])`
// up to the reference point, both objectives minimized.
//
// # Safety
// `utility_loss` and `privacy_leakage` must each hold `n` elements; `out`
// must be valid.
enum FaStatus fa_hypervolume(const double *utility_loss,
                             const double *privacy_leakage,
                             size_t n,
                             double ref_x,
                             double ref_y,
                             double *out);

// Membership score of one target from its measurement matrix.
//
// `values` is row-major `rounds x clients`: entry `t * clients + k` is the
// measurement of client `k`'s round-`t` update. `per_round` may be null;
// otherwise it receives `rounds` per-round scores.
//
// # Safety
// `values` must hold `rounds * clients` elements, `per_round` must be null
// or hold `rounds` writable elements, and `aggregate` must be valid.
enum FaStatus fa_lrt_score(const double *values,
                           size_t rounds,
                           size_t clients,
                           size_t target_client,
                           enum FaOrientation orientation,
                           double *per_round,
                           double *aggregate);

// Loads a trace directory written by an experiment run. The directory's
// `targets.csv`, if present, becomes the trace's target list.
//
// # Safety
// `dir` must be a NUL-terminated path; `out` must be valid. On success
// `*out` owns a handle to release with [`fa_trace_free`].
enum FaStatus fa_trace_load(const char *dir, struct FaTrace **out);

// Releases a handle from [`fa_trace_load`]. Null is ignored.
//
// # Safety
// `trace` must be null or a live handle not used afterwards.
void fa_trace_free(struct FaTrace *trace);

// Rounds, clients, parameter dimension and stored targets of a trace. Any
// out pointer may be null.
//
// # Safety
// `trace` must be a live handle; each out pointer must be null or valid.
enum FaStatus fa_trace_dims(const struct FaTrace *trace,
                            size_t *rounds,
                            size_t *clients,
                            size_t *dim,
                            size_t *targets);

// FedMIA aggregate scores of the trace's stored targets against its audited
// client. `scores` receives one value per target and `is_member` (may be
// null) the ground truth as 0/1.
//
// # Safety
// `trace` must be a live handle; `scores` must hold `len` writable
// elements; `is_member` must be null or hold `len` writable bytes.
enum FaStatus fa_trace_fedmia(const struct FaTrace *trace,
                              enum FaVariant variant,
                              double *scores,
                              uint8_t *is_member,
                              size_t len);

// Runs the experiment described by a config file under `out_root` and
// copies the run directory path into `run_dir` (see
// [`fa_last_error_message`] for the size convention; `run_dir_len` receives
// the size needed).
//
// # Safety
// `config_path` and `out_root` must be NUL-terminated paths; `run_dir` must
// be null or hold `len` writable bytes; `run_dir_len` must be null or valid.
enum FaStatus fa_run_experiment(const char *config_path,
                                const char *out_root,
                                char *run_dir,
                                size_t len,
                                size_t *run_dir_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDAUDIT_H */
