#ifndef NULLCORE_H
#define NULLCORE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NcVariant {
  NC_VARIANT_RESTRICTED = 0,
  NC_VARIANT_SKOLEM = 1,
  NC_VARIANT_OBLIVIOUS = 2,
} NcVariant;

typedef enum NcStrategy {
  NC_STRATEGY_FIFO = 0,
  NC_STRATEGY_DATALOG_FIRST = 1,
  NC_STRATEGY_RANDOM = 2,
} NcStrategy;

// Status codes; the non-zero values match the exit codes of the CLI.
typedef enum NcStatus {
  NC_STATUS_OK = 0,
  NC_STATUS_NOT_ENTAILED = 1,
  NC_STATUS_INPUT_ERROR = 2,
  NC_STATUS_STEP_LIMIT = 3,
  NC_STATUS_NO_STRATIFICATION = 4,
  NC_STATUS_NULL_ARGUMENT = 5,
  NC_STATUS_INVALID_UTF8 = 6,
  NC_STATUS_PANIC = 7,
} NcStatus;

typedef enum NcMode {
  NC_MODE_AUTO = 0,
  NC_MODE_CORE = 1,
  NC_MODE_CHASE = 2,
} NcMode;

// A parsed program plus the database it is evaluated on.
typedef struct NcProgram NcProgram;

// Chase settings. A `max_steps` of 0 selects the default cap.
typedef struct NcOptions {
  enum NcVariant variant;
  enum NcStrategy strategy;
  uint64_t seed;
  uint64_t max_steps;
} NcOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// The message of the last failed call on this thread, or null. The pointer
// stays valid until the next `nc_` call on the same thread.
const char *nc_last_error(void);

// Default options: restricted chase, datalog-first, seed 0, default cap.
struct NcOptions nc_options_default(void);

// Parses program text and stores a new handle in `*out`.
//
// # Safety
// `source` must be a nul-terminated string and `out` a writable pointer.
enum NcStatus nc_program_parse(const char *source, struct NcProgram **out);

// Adds facts in fact-file syntax (nulls allowed) to the program's database.
//
// # Safety
// `program` must come from `nc_program_parse`; `facts` must be a
// nul-terminated string.
enum NcStatus nc_program_add_facts(struct NcProgram *program, const char *facts);

// Releases a program handle. Null is ignored.
//
// # Safety
// `program` must come from `nc_program_parse` and not be used afterwards.
void nc_program_free(struct NcProgram *program);

// Number of rules in the program, or 0 for a null handle.
//
// # Safety
// `program` must be null or come from `nc_program_parse`.
size_t nc_program_rule_count(const struct NcProgram *program);

// Number of queries in the program, or 0 for a null handle.
//
// # Safety
// `program` must be null or come from `nc_program_parse`.
size_t nc_program_query_count(const struct NcProgram *program);

// Runs the chase and writes the facts of the result to `*out`.
//
// # Safety
// `program` must come from `nc_program_parse`; `options` may be null;
// `out` must be writable.
enum NcStatus nc_chase(const struct NcProgram *program,
                       const struct NcOptions *options,
                       char **out);

// Writes the facts of the core of the restricted chase to `*out`.
//
// # Safety
// As for `nc_chase`.
enum NcStatus nc_core(const struct NcProgram *program, const struct NcOptions *options, char **out);

// Computes the core-safe chase along a synthesized stratification and
// writes the final facts to `*out`.
//
// # Safety
// As for `nc_chase`.
enum NcStatus nc_solve(const struct NcProgram *program,
                       const struct NcOptions *options,
                       char **out);

// Writes the analysis report to `*out`, as JSON when `json` is non-zero.
//
// # Safety
// `program` must come from `nc_program_parse`; `out` must be writable.
enum NcStatus nc_analyze(const struct NcProgram *program, int json, char **out);

// Answers the named query. Returns `Ok` when entailed and `NotEntailed`
// otherwise; `*entailed` is set in both cases if non-null.
//
// # Safety
// `program` must come from `nc_program_parse`; `name` must be a
// nul-terminated string; `options` and `entailed` may be null.
enum NcStatus nc_query(const struct NcProgram *program,
                       const char *name,
                       enum NcMode mode,
                       const struct NcOptions *options,
                       int *entailed);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void nc_string_free(char *s);

// Library version as a static string.
const char *nc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NULLCORE_H */
