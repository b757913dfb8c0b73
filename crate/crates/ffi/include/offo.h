#ifndef OFFO_H
#define OFFO_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum OffoStatus {
  OFFO_STATUS_OK = 0,
  OFFO_STATUS_NULL_POINTER = 1,
  OFFO_STATUS_INVALID_ARGUMENT = 2,
  OFFO_STATUS_CONFIG = 3,
  OFFO_STATUS_IO = 4,
  /**
   * The solver stopped on an error, e.g. a non-finite gradient.
   */
  OFFO_STATUS_ABORTED = 5,
  OFFO_STATUS_PANIC = 6,
  OFFO_STATUS_BUFFER_TOO_SMALL = 7,
} OffoStatus;

/**
 * Validated experiment configuration.
 */
typedef struct OffoConfig OffoConfig;

/**
 * Finished experiment: trace and final iterate.
 */
typedef struct OffoRun OffoRun;

/**
 * One cycle of a run. `d_norm` is NaN where no value was recorded.
 */
typedef struct OffoCycle {
  size_t cycle;
  double d_norm;
  double xi_norm;
  double cost;
  uint64_t fine_evals;
} OffoCycle;

/**
 * Writes the gradient at `x` into `g` (both of length `n`). A nonzero
 * return stops the solver with `OFFO_STATUS_ABORTED`.
 */
typedef int (*OffoGradientFn)(void *user, const double *x, double *g, size_t n);

typedef struct OffoMinimizeInfo {
  size_t iterations;
  uint64_t gradient_evals;
  double final_xi;
  bool converged;
} OffoMinimizeInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, NUL-terminated and static.
 */
const char *offo_version(void);

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next call into the library on this thread.
 */
const char *offo_last_error(void);

/**
 * Parses a TOML configuration.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum OffoStatus offo_config_from_toml(const char *text, struct OffoConfig **out);

/**
 * Reads a TOML configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum OffoStatus offo_config_load(const char *path, struct OffoConfig **out);

/**
 * Default configuration for a problem (`membrane`, `minsurf`, ...) and a
 * solver (`adagb2`, `ml`, `dd`, `ml-dd`).
 *
 * # Safety
 * `problem` and `solver` must be NUL-terminated strings and `out` a valid pointer.
 */
enum OffoStatus offo_config_new(const char *problem,
                                size_t cells,
                                const char *solver,
                                struct OffoConfig **out);

/**
 * # Safety
 * `cfg` must come from this library and not be freed.
 */
enum OffoStatus offo_config_set_seed(struct OffoConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must come from this library and not be freed.
 */
enum OffoStatus offo_config_set_max_cycles(struct OffoConfig *cfg, size_t max_cycles);

/**
 * Writes the 64-character configuration hash and a NUL into `buf`.
 *
 * # Safety
 * `cfg` must be valid and `buf` writable for `len` bytes.
 */
enum OffoStatus offo_config_hash(const struct OffoConfig *cfg, char *buf, size_t len);

/**
 * # Safety
 * `cfg` must come from this library (or be null) and is invalid afterwards.
 */
void offo_config_free(struct OffoConfig *cfg);

/**
 * Runs the configured experiment. A run that exhausts its cycle budget
 * still succeeds; inspect [`offo_run_exit_code`].
 *
 * # Safety
 * `cfg` must be valid and `out` a valid pointer.
 */
enum OffoStatus offo_run(const struct OffoConfig *cfg, struct OffoRun **out);

/**
 * 0 converged, 2 cycle budget exhausted, 1 aborted; -1 for a null handle.
 *
 * # Safety
 * `run` must be valid or null.
 */
int offo_run_exit_code(const struct OffoRun *run);

/**
 * # Safety
 * `run` must be valid or null.
 */
size_t offo_run_num_cycles(const struct OffoRun *run);

/**
 * Number of cycle records, including the initial one.
 *
 * # Safety
 * `run` must be valid or null.
 */
size_t offo_run_num_records(const struct OffoRun *run);

/**
 * # Safety
 * `run` must be valid or null.
 */
double offo_run_final_cost(const struct OffoRun *run);

/**
 * # Safety
 * `run` must be valid or null.
 */
double offo_run_final_xi(const struct OffoRun *run);

/**
 * # Safety
 * `run` must be valid or null.
 */
size_t offo_run_dim(const struct OffoRun *run);

/**
 * Copies the final iterate into `out`, which must hold `offo_run_dim` values.
 *
 * # Safety
 * `run` must be valid and `out` writable for `len` doubles.
 */
enum OffoStatus offo_run_solution(const struct OffoRun *run, double *out, size_t len);

/**
 * Record `index` (0 is the starting point).
 *
 * # Safety
 * `run` must be valid and `out` a valid pointer.
 */
enum OffoStatus offo_run_cycle(const struct OffoRun *run, size_t index, struct OffoCycle *out);

/**
 * Writes `<stem>.ndjson` and `<stem>.csv`.
 *
 * # Safety
 * `run` must be valid and `stem` a NUL-terminated string.
 */
enum OffoStatus offo_run_save(const struct OffoRun *run, const char *stem);

/**
 * # Safety
 * `run` must come from this library (or be null) and is invalid afterwards.
 */
void offo_run_free(struct OffoRun *run);

/**
 * Minimizes over the box `[lower, upper]` with single-level ADAGB2 using
 * only gradients from `grad`. `x` holds the start on entry (projected onto
 * the box) and the final iterate on return. `lower` or `upper` may be null
 * for an unbounded side. The callback is also used to report the stopping
 * measure; those calls are not counted in `info.gradient_evals`.
 *
 * # Safety
 * `x` must be writable for `n` doubles, `lower`/`upper` readable for `n`
 * doubles when non-null, and `info` valid or null.
 */
enum OffoStatus offo_minimize(size_t n,
                              OffoGradientFn grad,
                              void *user,
                              const double *lower,
                              const double *upper,
                              double *x,
                              size_t max_iterations,
                              double tolerance,
                              struct OffoMinimizeInfo *info);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OFFO_H */
