#ifndef KERBTRIP_H
#define KERBTRIP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KtStatus {
  KT_STATUS_OK = 0,
  KT_STATUS_NULL_ARGUMENT = 1,
  KT_STATUS_INVALID_UTF8 = 2,
  KT_STATUS_INVALID_ARGUMENT = 3,
  KT_STATUS_PARSE = 4,
  KT_STATUS_IO = 5,
  KT_STATUS_CODEC = 6,
  KT_STATUS_SIMULATION = 7,
  KT_STATUS_PANIC = 99,
} KtStatus;

/**
 * The result of one simulator run.
 */
typedef struct KtRun KtRun;

/**
 * A parsed, validated scenario.
 */
typedef struct KtScenario KtScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or NULL. Valid until the next call
 * into this library from the same thread.
 */
const char *kt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *kt_version(void);

/**
 * Derives the password key with the given index (1..=3) into `out`,
 * which must have room for 32 bytes.
 *
 * # Safety
 * `password` and `principal` must be NUL-terminated strings; `out` must be
 * writable for 32 bytes.
 */
enum KtStatus kt_derive_key(const char *password,
                            const char *principal,
                            uint8_t index,
                            uint8_t *out);

/**
 * Decodes one complete wire frame. On success writes its type byte to
 * `out_type` (if not NULL).
 *
 * # Safety
 * `bytes` must be readable for `len` bytes.
 */
enum KtStatus kt_frame_check(const uint8_t *bytes, size_t len, uint8_t *out_type);

/**
 * True when `ts` lies within `window` seconds of `now`, either side.
 */
bool kt_check_freshness(int64_t ts, int64_t now, uint64_t window);

/**
 * Parses scenario TOML text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum KtStatus kt_scenario_parse(const char *text, struct KtScenario **out);

/**
 * Reads and parses a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum KtStatus kt_scenario_load(const char *path, struct KtScenario **out);

/**
 * # Safety
 * `scenario` must come from this library and not have been freed.
 */
void kt_scenario_free(struct KtScenario *scenario);

/**
 * Runs the simulator. The same scenario and seed always give the same run.
 *
 * # Safety
 * `scenario` must be a live handle; `out` must be a valid pointer.
 */
enum KtStatus kt_sim_run(const struct KtScenario *scenario, uint64_t seed, struct KtRun **out);

/**
 * # Safety
 * `run` must come from this library and not have been freed.
 */
void kt_run_free(struct KtRun *run);

/**
 * 1 if a node other than an honest client was granted service, 0 if not,
 * -1 for a NULL handle.
 *
 * # Safety
 * `run` must be a live handle or NULL.
 */
int32_t kt_run_attacker_succeeded(const struct KtRun *run);

/**
 * # Safety
 * `run` must be a live handle or NULL.
 */
size_t kt_run_alert_count(const struct KtRun *run);

/**
 * # Safety
 * `run` must be a live handle or NULL.
 */
size_t kt_run_notice_count(const struct KtRun *run);

/**
 * # Safety
 * `run` must be a live handle or NULL.
 */
size_t kt_run_grant_count(const struct KtRun *run);

/**
 * # Safety
 * `run` must be a live handle or NULL.
 */
int64_t kt_run_final_tick(const struct KtRun *run);

/**
 * One-line verdict summary. Free with [`kt_string_free`].
 *
 * # Safety
 * `run` must be a live handle or NULL.
 */
char *kt_run_summary(const struct KtRun *run);

/**
 * The event trace as JSON lines. With `canonical` set, frame bytes are
 * left out. Free with [`kt_string_free`].
 *
 * # Safety
 * `run` must be a live handle or NULL.
 */
char *kt_run_trace(const struct KtRun *run, bool canonical);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, freed once.
 */
void kt_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KERBTRIP_H */
