#ifndef UADDPG_H
#define UADDPG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UaStatus {
  UA_STATUS_OK = 0,
  UA_STATUS_NULL_POINTER = 1,
  UA_STATUS_INVALID_ARGUMENT = 2,
  UA_STATUS_CONFIG = 3,
  UA_STATUS_CHECKPOINT = 4,
  UA_STATUS_IO = 5,
  UA_STATUS_USAGE = 6,
  UA_STATUS_PANIC = 7,
} UaStatus;

/**
 * Loaded agent, used for greedy inference.
 */
typedef struct UaAgent UaAgent;

/**
 * An environment instance.
 */
typedef struct UaEnv UaEnv;

/**
 * Uncertainty estimates for one inference step.
 */
typedef struct UaUncertainty {
  double eu;
  double au;
  bool warned;
} UaUncertainty;

/**
 * Result of one environment step.
 */
typedef struct UaStepInfo {
  double reward;
  bool done;
  bool truncated;
} UaStepInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *ua_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ua_version(void);

/**
 * Loads an agent checkpoint.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum UaStatus ua_agent_load(const char *path, struct UaAgent **out);

/**
 * # Safety
 * `agent` must be null or a handle from [`ua_agent_load`] not yet freed.
 */
void ua_agent_free(struct UaAgent *agent);

/**
 * Writes the state and action dimensions of a loaded agent.
 *
 * # Safety
 * All pointers must be valid.
 */
enum UaStatus ua_agent_dims(const struct UaAgent *agent, size_t *state_dim, size_t *action_dim);

/**
 * Greedy action for `state`, with its uncertainty report. `report` may be
 * null.
 *
 * # Safety
 * `state` must point to `state_len` doubles and `action` to `action_len`
 * writable doubles.
 */
enum UaStatus ua_agent_act(const struct UaAgent *agent,
                           const double *state,
                           size_t state_len,
                           double *action,
                           size_t action_len,
                           struct UaUncertainty *report);

/**
 * Sets the epistemic-uncertainty warning threshold.
 *
 * # Safety
 * `agent` must be a valid handle.
 */
enum UaStatus ua_agent_set_umax(struct UaAgent *agent, double u_max);

/**
 * Creates an environment by id (`cube`, `oracle-bernoulli`, `oracle-gaussian`).
 *
 * # Safety
 * `id` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum UaStatus ua_env_new(const char *id, uint64_t seed, struct UaEnv **out);

/**
 * # Safety
 * `env` must be null or a handle from [`ua_env_new`] not yet freed.
 */
void ua_env_free(struct UaEnv *env);

/**
 * # Safety
 * All pointers must be valid.
 */
enum UaStatus ua_env_dims(const struct UaEnv *env, size_t *state_dim, size_t *action_dim);

/**
 * Starts an episode, writing the initial state.
 *
 * # Safety
 * `state` must point to `state_len` writable doubles.
 */
enum UaStatus ua_env_reset(struct UaEnv *env, double *state, size_t state_len);

/**
 * Applies `action` (clipped to the action box), writing the next state.
 *
 * # Safety
 * `action` must point to `action_len` doubles, `next_state` to
 * `state_len` writable doubles, and `info` must be valid.
 */
enum UaStatus ua_env_step(struct UaEnv *env,
                          const double *action,
                          size_t action_len,
                          double *next_state,
                          size_t state_len,
                          struct UaStepInfo *info);

/**
 * Trains one seed of the configuration at `config` (a TOML path or preset
 * name) and writes outputs under `out_dir`. Blocks until training ends.
 *
 * # Safety
 * `config` and `out_dir` must be valid NUL-terminated strings.
 */
enum UaStatus ua_train(const char *config, uint64_t seed, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UADDPG_H */
