#ifndef BLINDREACH_H
#define BLINDREACH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  BR_STATUS_OK = 0,
  BR_STATUS_NULL_POINTER = 1,
  BR_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed JSON, unknown names or parameters failing validation.
   */
  BR_STATUS_INVALID_ARGUMENT = 3,
  /**
   * A caller buffer has the wrong length.
   */
  BR_STATUS_BUFFER_SIZE = 4,
  BR_STATUS_OUT_OF_GRID = 5,
  BR_STATUS_INTERNAL = 6,
} BrStatus;

/**
 * Opaque occupancy estimate handle.
 */
typedef struct BrEstimate BrEstimate;

/**
 * Opaque episode report handle.
 */
typedef struct BrReport BrReport;

/**
 * Opaque scenario handle.
 */
typedef struct BrScenario BrScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or NULL if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *br_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *br_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void br_string_free(char *s);

/**
 * Parses a scenario from its JSON form.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
BrStatus br_scenario_from_json(const char *json, BrScenario **out);

/**
 * Generates a solvable benchmark instance on the desk grid with default
 * parameters. `domain` is "pipe" or "shelf"; `variant` is a label such as
 * "chs" or "cmax+structural".
 *
 * # Safety
 * String arguments must be valid NUL-terminated strings and `out` a valid
 * pointer.
 */
BrStatus br_scenario_generate(const char *domain,
                              const char *variant,
                              uint64_t seed,
                              BrScenario **out);

/**
 * Serializes a scenario to JSON; free the result with `br_string_free`.
 *
 * # Safety
 * `sc` must be a live scenario handle and `out` a valid pointer.
 */
BrStatus br_scenario_to_json(const BrScenario *sc, char **out);

/**
 * # Safety
 * `sc` must be NULL or a handle from this library not yet freed.
 */
void br_scenario_free(BrScenario *sc);

/**
 * Runs one episode. Failures of the episode itself are part of the report;
 * the status reports only invalid input.
 *
 * # Safety
 * `sc` must be a live scenario handle and `out` a valid pointer.
 */
BrStatus br_run_episode(const BrScenario *sc, uint64_t seed, BrReport **out);

/**
 * Whether the episode reached the goal; false for NULL.
 *
 * # Safety
 * `r` must be NULL or a live report handle.
 */
bool br_report_success(const BrReport *r);

/**
 * Plan-execute iterations; 0 for NULL.
 *
 * # Safety
 * `r` must be NULL or a live report handle.
 */
size_t br_report_num_iters(const BrReport *r);

/**
 * Contacts during the episode; 0 for NULL.
 *
 * # Safety
 * `r` must be NULL or a live report handle.
 */
size_t br_report_contacts(const BrReport *r);

/**
 * Serializes a report to JSON; free the result with `br_string_free`.
 *
 * # Safety
 * `r` must be a live report handle and `out` a valid pointer.
 */
BrStatus br_report_to_json(const BrReport *r, char **out);

/**
 * # Safety
 * `r` must be NULL or a handle from this library not yet freed.
 */
void br_report_free(BrReport *r);

/**
 * New planar estimate of `nx` by `ny` cells of side `resolution` metres
 * with its origin at (0, 0); every cell unknown at probability 0.5.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
BrStatus br_estimate_new(size_t nx, size_t ny, double resolution, BrEstimate **out);

/**
 * Number of cells in the estimate; 0 for NULL.
 *
 * # Safety
 * `est` must be NULL or a live estimate handle.
 */
size_t br_estimate_num_cells(const BrEstimate *est);

/**
 * Certifies `n` cells (row-major indices) free.
 *
 * # Safety
 * `est` must be a live estimate handle and `cells` must point to `n`
 * readable indices (or be NULL when `n` is 0).
 */
BrStatus br_estimate_certify_free(BrEstimate *est, const size_t *cells, size_t n);

/**
 * Records a contact at world point (`x`, `y`). Writes the marked cell
 * index to `cell_out` when it is not NULL.
 *
 * # Safety
 * `est` must be a live estimate handle; `cell_out` NULL or valid.
 */
BrStatus br_estimate_mark_contact(BrEstimate *est,
                                  double x,
                                  double y,
                                  double confidence,
                                  size_t spread_radius,
                                  size_t *cell_out);

/**
 * Predicted occupancy for every cell into `out` (length `len`, which must
 * equal the cell count). `structural` selects the structural predictor
 * with the given `decay`; otherwise the estimate is passed through.
 *
 * # Safety
 * `est` must be a live estimate handle and `out` must point to `len`
 * writable doubles.
 */
BrStatus br_estimate_predict(const BrEstimate *est,
                             bool structural,
                             double decay,
                             double *out,
                             size_t len);

/**
 * # Safety
 * `est` must be NULL or a handle from this library not yet freed.
 */
void br_estimate_free(BrEstimate *est);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BLINDREACH_H */
