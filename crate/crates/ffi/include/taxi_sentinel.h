#ifndef TAXI_SENTINEL_H
#define TAXI_SENTINEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call. Codes 1 to 3 mirror the CLI exit statuses.
 */
typedef enum TsStatus {
  TS_STATUS_OK = 0,
  /**
   * Bad input: unreadable or malformed files, unknown nodes, bad parameters.
   */
  TS_STATUS_INVALID_INPUT = 1,
  /**
   * Valid input for which no result exists, such as plans that never meet.
   */
  TS_STATUS_NO_RESULT = 2,
  /**
   * A broken internal invariant.
   */
  TS_STATUS_INTERNAL = 3,
  TS_STATUS_NULL_POINTER = 4,
  TS_STATUS_INVALID_UTF8 = 5,
  /**
   * The library panicked; the handle involved should be freed.
   */
  TS_STATUS_PANIC = 6,
} TsStatus;

/**
 * Airport node-link layout.
 */
typedef struct TsGraph TsGraph;

/**
 * Compiled phraseology rules.
 */
typedef struct TsRuleSet TsRuleSet;

/**
 * Two-aircraft scenario with its graph, plans and sampling settings.
 */
typedef struct TsScenario TsScenario;

/**
 * Monte Carlo estimate of the collision probability at one node.
 */
typedef struct TsOracleEstimate {
  double p_hat;
  double standard_error;
  uint64_t samples;
  uint64_t hits;
} TsOracleEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ts_version(void);

/**
 * Message for the last failed call on this thread, or NULL after a
 * successful one. Valid until the next library call on the same thread.
 */
const char *ts_last_error_message(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and must not be freed twice.
 */
void ts_string_free(char *s);

/**
 * Compiles a rules file. `tables_path` may be NULL for the bundled tables.
 *
 * # Safety
 * Paths must be NUL-terminated; `out` must be writable.
 */
enum TsStatus ts_rules_load(const char *rules_path,
                            const char *tables_path,
                            struct TsRuleSet **out);

/**
 * # Safety
 * `rules` must come from [`ts_rules_load`] or be NULL.
 */
void ts_rules_free(struct TsRuleSet *rules);

/**
 * Runs the rules over one utterance. Writes a JSON array of
 * `{start, end, label, rule, surface}` with character offsets.
 *
 * # Safety
 * `rules` must be live, `utterance` NUL-terminated, `out` writable.
 */
enum TsStatus ts_rules_match_json(const struct TsRuleSet *rules, const char *utterance, char **out);

/**
 * Loads an airport graph from JSON.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum TsStatus ts_graph_load(const char *path, struct TsGraph **out);

/**
 * # Safety
 * `graph` must come from [`ts_graph_load`] or be NULL.
 */
void ts_graph_free(struct TsGraph *graph);

/**
 * Number of nodes, or 0 for NULL.
 *
 * # Safety
 * `graph` must be live or NULL.
 */
size_t ts_graph_node_count(const struct TsGraph *graph);

/**
 * Shortest taxi plan between two nodes, written as
 * `{callsign, nodes, links, start_time}` JSON.
 *
 * # Safety
 * `graph` must be live, strings NUL-terminated, `out` writable.
 */
enum TsStatus ts_graph_plan_json(const struct TsGraph *graph,
                                 const char *callsign,
                                 const char *from,
                                 const char *to,
                                 double start_time,
                                 char **out);

/**
 * Loads a scenario file; its graph path resolves against the file's folder.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum TsStatus ts_scenario_load(const char *path, struct TsScenario **out);

/**
 * # Safety
 * `scenario` must come from [`ts_scenario_load`] or be NULL.
 */
void ts_scenario_free(struct TsScenario *scenario);

/**
 * Analytic risk at every node shared by the first two plans, in the first
 * plan's order, as a JSON array of risk scores. An infinite overlap density
 * serializes as `null`.
 *
 * # Safety
 * `scenario` must be live; `out` writable.
 */
enum TsStatus ts_scenario_risk_map_json(const struct TsScenario *scenario, char **out);

/**
 * Monte Carlo collision estimate at `spot` with the scenario's seed and
 * sample count.
 *
 * # Safety
 * `scenario` must be live, `spot` NUL-terminated, `out` writable.
 */
enum TsStatus ts_scenario_oracle(const struct TsScenario *scenario,
                                 const char *spot,
                                 struct TsOracleEstimate *out);

/**
 * Density at zero of the arrival-time difference of two log-normal route
 * times shifted by non-negative start offsets.
 *
 * # Safety
 * `out` must be writable.
 */
enum TsStatus ts_overlap_density(double mu1,
                                 double sigma1,
                                 double offset1,
                                 double mu2,
                                 double sigma2,
                                 double offset2,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TAXI_SENTINEL_H */
