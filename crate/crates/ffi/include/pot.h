#ifndef POT_H
#define POT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum PotStatus {
  POT_STATUS_OK = 0,
  POT_STATUS_NULL_ARGUMENT = 1,
  POT_STATUS_INVALID_UTF8 = 2,
  POT_STATUS_CONFIG = 3,
  POT_STATUS_RUN = 4,
  POT_STATUS_TRACE = 5,
  POT_STATUS_INVARIANT = 6,
  POT_STATUS_BUFFER_TOO_SMALL = 7,
  POT_STATUS_UNAVAILABLE = 8,
  POT_STATUS_PANIC = 9,
} PotStatus;

// The outcome of running a scenario.
typedef struct PotRun PotRun;

// A parsed scenario.
typedef struct PotScenario PotScenario;

// Static name of a status code.
const char *pot_status_name(enum PotStatus status);

// Copies the calling thread's last error message.
enum PotStatus pot_last_error(char *buf, size_t cap, size_t *len);

// Parses scenario text in the `key = value` format.
enum PotStatus pot_scenario_parse(const char *text, struct PotScenario **out);

// Reads and parses a scenario file.
enum PotStatus pot_scenario_load(const char *path, struct PotScenario **out);

enum PotStatus pot_scenario_set_seed(struct PotScenario *s, uint64_t seed);

void pot_scenario_free(struct PotScenario *s);

// Runs a scenario. With `consensus` set, every batch goes through the
// replicated ledger and the message trace is kept.
enum PotStatus pot_run(const struct PotScenario *s, bool consensus, struct PotRun **out);

void pot_run_free(struct PotRun *r);

// The report CSV: a header and one row.
enum PotStatus pot_run_report_csv(const struct PotRun *r, char *buf, size_t cap, size_t *len);

// Settlement receipts from the mock chain.
enum PotStatus pot_run_receipts_csv(const struct PotRun *r, char *buf, size_t cap, size_t *len);

// The message trace; `POT_STATUS_UNAVAILABLE` when the run skipped consensus.
enum PotStatus pot_run_trace_csv(const struct PotRun *r, char *buf, size_t cap, size_t *len);

// Admitted challenges, upheld challenges and whether tokens were conserved.
enum PotStatus pot_run_disputes(const struct PotRun *r,
                                uint64_t *challenges,
                                uint64_t *slashes,
                                bool *conserved);

// Checks a trace CSV against the quorum invariants and reports the number
// of committed rounds.
enum PotStatus pot_verify_trace(const char *csv, uint64_t *rounds);

// Gas, native tokens and dollars for settling one order with `k`
// confirmations under the default gas model.
enum PotStatus pot_settlement_cost(uint64_t k, uint64_t *gas, double *tokens, double *usd);

#endif  /* POT_H */
