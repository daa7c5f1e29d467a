#ifndef GRIDSENS_H
#define GRIDSENS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum GsStatus {
  GS_STATUS_OK = 0,
  GS_STATUS_NULL_POINTER = 1,
  GS_STATUS_IO = 2,
  GS_STATUS_PARSE = 3,
  GS_STATUS_INVALID_ARGUMENT = 4,
  GS_STATUS_NOT_CONVERGED = 5,
  GS_STATUS_SINGULAR = 6,
  GS_STATUS_ISLANDING = 7,
  GS_STATUS_BUFFER_TOO_SMALL = 8,
  GS_STATUS_PANIC = 9,
} GsStatus;

typedef enum GsMode {
  GS_MODE_FULL = 0,
  GS_MODE_NETWORK = 1,
} GsMode;

typedef enum GsMetric {
  GS_METRIC_VMAG_INF = 0,
  GS_METRIC_VMAG2 = 1,
  GS_METRIC_IMAG_INF = 2,
  GS_METRIC_PLINE_INF = 3,
} GsMetric;

// A parsed case.
typedef struct GsCase GsCase;

// A factorized linear model at a solution. Keeps its solution alive.
typedef struct GsLinearization GsLinearization;

// A converged AC power flow.
typedef struct GsSolution GsSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread. Valid until the next
// failing call on the same thread.
const char *gs_last_error_message(void);

// Reads a MATPOWER case file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum GsStatus gs_case_load(const char *path, struct GsCase **out);

// Parses MATPOWER case text.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum GsStatus gs_case_parse(const char *text, struct GsCase **out);

// # Safety
// `case` must come from `gs_case_load`/`gs_case_parse` or be null.
void gs_case_free(struct GsCase *case_);

// # Safety
// `case` must be a valid handle.
uintptr_t gs_case_bus_count(const struct GsCase *case_);

// # Safety
// `case` must be a valid handle.
uintptr_t gs_case_branch_count(const struct GsCase *case_);

// Solves the AC power flow from flat start. `tol <= 0` or `max_iter == 0`
// select the defaults.
//
// # Safety
// `case` must be a valid handle and `out` a valid pointer.
enum GsStatus gs_solve(const struct GsCase *case_,
                       double tol,
                       uintptr_t max_iter,
                       struct GsSolution **out);

// # Safety
// `sol` must come from `gs_solve` or be null.
void gs_solution_free(struct GsSolution *sol);

// # Safety
// `sol` must be a valid handle.
uintptr_t gs_solution_iterations(const struct GsSolution *sol);

// Writes bus voltages as interleaved `(re, im)` pairs; `len` must be at least
// twice the bus count.
//
// # Safety
// `sol` must be a valid handle and `buf` point to `len` doubles.
enum GsStatus gs_solution_voltages(const struct GsSolution *sol, double *buf, uintptr_t len);

// Builds and factorizes the linear model at a solution.
//
// # Safety
// `sol` must be a valid handle and `out` a valid pointer.
enum GsStatus gs_linearize(const struct GsSolution *sol,
                           enum GsMode mode,
                           struct GsLinearization **out);

// # Safety
// `lin` must come from `gs_linearize` or be null.
void gs_linearization_free(struct GsLinearization *lin);

// Predicted impact of removing `branch` (zero-based). On success
// `*islanding` is set; when it is 0, `*severity` holds the metric value and
// `dvmag` (if non-null, `len` ≥ bus count) receives per-bus `Δ|V|`. Islanding
// outages report an infinite severity.
//
// # Safety
// Handles and output pointers must be valid; `dvmag` may be null.
enum GsStatus gs_outage_impact(const struct GsLinearization *lin,
                               uintptr_t branch,
                               enum GsMetric metric_kind,
                               int32_t *islanding,
                               double *severity,
                               double *dvmag,
                               uintptr_t len);

// Screens every closed branch. Writes the ranked outages (islanding first,
// then severity descending) into the three arrays of capacity `cap` and the
// number of entries into `*count`. If `cap` is too small nothing but
// `*count` is written and `GS_STATUS_BUFFER_TOO_SMALL` is returned.
//
// # Safety
// Handles and pointers must be valid for `cap` elements.
enum GsStatus gs_screen(const struct GsLinearization *lin,
                        enum GsMetric metric_kind,
                        uintptr_t *branches,
                        double *severities,
                        int32_t *islanding,
                        uintptr_t cap,
                        uintptr_t *count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRIDSENS_H */
