#ifndef ROBSUITE_H
#define ROBSUITE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible entry point.
 */
typedef enum rs_status {
  /**
   * Success.
   */
  RS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  RS_NULL_ARGUMENT = 1,
  /**
   * A path was not valid UTF-8, or an index was out of range.
   */
  RS_INVALID_ARGUMENT = 2,
  /**
   * The operating system refused a read.
   */
  RS_IO_ERROR = 3,
  /**
   * An artifact failed its integrity checks: bad magic, truncated
   * payload, checksum or format-version mismatch, or a suite member
   * outside its scheme's budget.
   */
  RS_CORRUPT_ARTIFACT = 4,
  /**
   * Input rejected by the library (shape mismatch, degenerate data, ...).
   */
  RS_DOMAIN_ERROR = 5,
  /**
   * A panic was caught at the boundary; state may be stale but the
   * process is intact.
   */
  RS_INTERNAL_ERROR = 6,
} rs_status;

/**
 * Loaded frozen suite. Opaque to C.
 */
typedef struct RsSuite RsSuite;

/**
 * Loaded verification system. Opaque to C.
 */
typedef struct RsSystem RsSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message for this thread, NUL-terminated. Valid until the next
 * library call on the same thread; empty string if no error occurred yet.
 *
 * # Safety
 * The returned pointer must not be freed and must not be read after any
 * other call into this library from the same thread.
 */
const char *rs_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rs_version(void);

/**
 * Loads a frozen suite from the directory written by the pipeline's suite
 * stage (`suite.json` plus its blobs). On success writes a handle to `out`.
 *
 * # Safety
 * `dir` must point to a NUL-terminated string and `out` to writable
 * storage for one pointer; both must stay valid for the duration of the
 * call. The handle written to `out` must be released with
 * [`rs_suite_free`].
 */
enum rs_status rs_suite_load(const char *dir, struct RsSuite **out);

/**
 * Releases a suite handle. Null is a no-op.
 *
 * # Safety
 * `s` must be a pointer returned by [`rs_suite_load`] that has not been
 * freed yet; no other thread may use it concurrently or afterwards.
 */
void rs_suite_free(struct RsSuite *s);

/**
 * Number of test sets in the suite.
 *
 * # Safety
 * `s` must be a live suite handle and `out` writable for one `uintptr_t`.
 */
enum rs_status rs_suite_set_count(const struct RsSuite *s, uintptr_t *out);

/**
 * Total members across all sets.
 *
 * # Safety
 * `s` must be a live suite handle and `out` writable for one `uintptr_t`.
 */
enum rs_status rs_suite_member_count(const struct RsSuite *s, uintptr_t *out);

/**
 * Name of set `index`, NUL-terminated. The pointer stays valid for the
 * life of the suite handle.
 *
 * # Safety
 * `s` must be a live suite handle and `out` writable for one pointer. The
 * string written to `out` must not be freed and must not outlive `s`.
 */
enum rs_status rs_suite_set_name(const struct RsSuite *s, uintptr_t index, const char **out);

/**
 * Member count of set `index`.
 *
 * # Safety
 * `s` must be a live suite handle and `out` writable for one `uintptr_t`.
 */
enum rs_status rs_suite_set_size(const struct RsSuite *s, uintptr_t index, uintptr_t *out);

/**
 * Audits every member against its scheme's budget. Returns `RS_OK` when
 * all members pass and `RS_CORRUPT_ARTIFACT` (with a message naming the
 * first offender) when any violate membership.
 *
 * # Safety
 * `s` must be a live suite handle.
 */
enum rs_status rs_suite_verify(const struct RsSuite *s);

/**
 * Loads a verification system from the directory written by the zoo stage
 * (`system.json` plus `weights.rbt`). On success writes a handle to `out`.
 *
 * # Safety
 * `dir` must point to a NUL-terminated string and `out` to writable
 * storage for one pointer; both must stay valid for the duration of the
 * call. The handle written to `out` must be released with
 * [`rs_system_free`].
 */
enum rs_status rs_system_load(const char *dir, struct RsSystem **out);

/**
 * Releases a system handle. Null is a no-op.
 *
 * # Safety
 * `s` must be a pointer returned by [`rs_system_load`] that has not been
 * freed yet; no other thread may use it concurrently or afterwards.
 */
void rs_system_free(struct RsSystem *s);

/**
 * System identifier, NUL-terminated, valid for the life of the handle.
 *
 * # Safety
 * `s` must be a live system handle and `out` writable for one pointer. The
 * string written to `out` must not be freed and must not outlive `s`.
 */
enum rs_status rs_system_id(const struct RsSystem *s, const char **out);

/**
 * Acceptance threshold (cosine margin) of the system.
 *
 * # Safety
 * `s` must be a live system handle and `out` writable for one `double`.
 */
enum rs_status rs_system_kappa(const struct RsSystem *s, double *out);

/**
 * Clean verification accuracy recorded when the system was calibrated.
 *
 * # Safety
 * `s` must be a live system handle and `out` writable for one `double`.
 */
enum rs_status rs_system_clean_accuracy(const struct RsSystem *s, double *out);

/**
 * Scores the system on the whole suite with forward passes only and writes
 * the unweighted mean of per-set robustness (in [0, 1]) to `out_mean`.
 *
 * # Safety
 * `s` and `sys` must be live handles and `out_mean` writable for one
 * `double`. Handles may be shared across threads for concurrent scoring;
 * they are never mutated after load.
 */
enum rs_status rs_suite_evaluate(const struct RsSuite *s,
                                 const struct RsSystem *sys,
                                 double *out_mean);

/**
 * Scores the system and writes per-set robustness into `out`, one value
 * per set in suite order. `len` must equal the set count.
 *
 * # Safety
 * `s` and `sys` must be live handles and `out` writable for `len`
 * `double`s.
 */
enum rs_status rs_suite_evaluate_sets(const struct RsSuite *s,
                                      const struct RsSystem *sys,
                                      double *out,
                                      uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROBSUITE_H */
