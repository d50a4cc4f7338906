/*
 * C ABI for the certainty-guided decoding engine.
 *
 * Conventions:
 *   - Fallible calls return a CGR_STATUS_* code and write their result
 *     through an `out` pointer, which is touched only on CGR_STATUS_OK.
 *   - Handles are opaque. Release each exactly once with its matching
 *     _free function; every _free tolerates null.
 *   - `const char *` returns are borrowed — from the handle they were read
 *     from, or from thread-local storage for the last error message — and
 *     must not be freed. Strings written through a `char **out` are owned
 *     by the caller and must be released with cgr_string_free.
 *   - After any call returns non-OK, the last error message holds a
 *     human-readable reason. It is per-thread and stays valid until the
 *     next failing call on the same thread.
 *   - Internal panics never unwind into the caller; they surface as
 *     CGR_STATUS_PANIC.
 */

#ifndef CGR_H
#define CGR_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* The call succeeded. */
#define CGR_STATUS_OK 0
/* Invalid configuration: malformed backend spec, unknown mode, or decode
 * parameters outside their documented ranges. */
#define CGR_STATUS_CONFIG 1
/* The token backend failed: unreachable server, protocol violation, or
 * context overflow. */
#define CGR_STATUS_BACKEND 2
/* Data produced or consumed by the engine was unusable. */
#define CGR_STATUS_DATA 3
/* A required pointer argument was null. */
#define CGR_STATUS_NULL_ARG 4
/* An internal panic was caught at the boundary. */
#define CGR_STATUS_PANIC 5
/* A string argument was not valid UTF-8. */
#define CGR_STATUS_UTF8 6

/* Plain greedy decoding; any stop token ends thinking. */
#define CGR_MODE_BASELINE 0
/* Every stop token is replaced with a continuation cue until the budget
 * runs out. */
#define CGR_MODE_BUDGET_FORCING 1
/* Certainty probes at a fixed interval; certification exits early. */
#define CGR_MODE_CGR 2
/* Interval probes plus probed stop attempts; uncertified stops are forced
 * to continue. */
#define CGR_MODE_CGR_WITH_FORCING 3

/* An instantiated token backend. */
typedef struct cgr_backend cgr_backend;
/* A completed decode run. */
typedef struct cgr_trace cgr_trace;

/* Engine version as a static string; never freed. */
const char *cgr_version(void);

/* Reason for the most recent failure on this thread. Borrowed; valid until
 * the next failing call on the same thread. Meaningful only right after a
 * call returned non-OK. */
const char *cgr_last_error_message(void);

/* Parse a backend spec ("mock:...", "trace:PATH", "remote:URL,...") and
 * instantiate it with the given seed. On success writes a handle to
 * release with cgr_backend_free. Remote backends connect eagerly, so an
 * unreachable server fails here, not at decode time. */
int32_t cgr_backend_new(const char *spec, uint64_t seed, cgr_backend **out);

/* Release a backend handle. Null is a no-op. */
void cgr_backend_free(cgr_backend *backend);

/* Run one decode. `prompt` is the full rendered prompt text — the ABI does
 * no templating. `probe` selects the backend certainty probes run on; pass
 * null to probe the generation backend. On success writes a trace handle
 * to release with cgr_trace_free. Answer extraction is capped at the
 * engine default of four tokens. */
int32_t cgr_decode(const cgr_backend *backend,
                   const cgr_backend *probe,
                   const char *prompt,
                   uint32_t mode,
                   uint64_t budget,
                   double threshold,
                   uint64_t probe_interval,
                   cgr_trace **out);

/* Thinking tokens spent from the budget; 0 for a null trace. */
uint64_t cgr_trace_thinking_tokens_used(const cgr_trace *trace);

/* Stable stop-reason name: "early_exit_certainty", "budget_exhausted",
 * "natural_stop", or "natural_stop_certified". Borrowed from the trace;
 * null for a null trace. */
const char *cgr_trace_stop_reason(const cgr_trace *trace);

/* Thinking-token count at stop, or -1 when the reason carries none
 * (budget exhaustion, or a null trace). */
int64_t cgr_trace_stop_step(const cgr_trace *trace);

/* Stop tokens replaced with continuation cues; 0 for a null trace. */
uint64_t cgr_trace_forced_wait_count(const cgr_trace *trace);

/* Number of certainty probes that fired; 0 for a null trace. */
uint64_t cgr_trace_probe_count(const cgr_trace *trace);

/* Tokens generated inside probe forks; never counted against the budget.
 * 0 for a null trace. */
uint64_t cgr_trace_probe_overhead_tokens(const cgr_trace *trace);

/* The extracted final answer, or -1 for an abstention (unparseable
 * extraction, or a null trace). */
int32_t cgr_trace_final_answer(const cgr_trace *trace);

/* Certainty of the final answer: the minimum answer-token probability,
 * 0.0 when extraction failed or the trace is null. */
double cgr_trace_final_certainty(const cgr_trace *trace);

/* Serialize the complete trace — tokens, probe events, stop reason,
 * answer — as a JSON document. On success writes an owned string to
 * release with cgr_string_free. */
int32_t cgr_trace_to_json(const cgr_trace *trace, char **out);

/* Release a trace handle. Null is a no-op. */
void cgr_trace_free(cgr_trace *trace);

/* Release a string written through a `char **out` parameter. Null is a
 * no-op. */
void cgr_string_free(char *string);

#ifdef __cplusplus
}
#endif

#endif /* CGR_H */
