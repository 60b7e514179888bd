/* C interface for the iterative learning MPC controller.
 *
 * Kept in sync with src/lib.rs by hand; tests/header_sync.rs verifies that
 * every exported symbol is declared here.
 *
 * Conventions:
 *   - Fallible functions return IlmpcStatus; out-parameters are written only
 *     on ILMPC_OK.
 *   - ilmpc_last_error_message() describes the most recent failure on the
 *     calling thread; the pointer stays valid until the next failing call.
 *   - Handles must be released with the matching *_free function.
 */

#ifndef ILMPC_H
#define ILMPC_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum IlmpcStatus {
  ILMPC_OK = 0,
  ILMPC_NULL_POINTER = 1,
  ILMPC_INVALID_ARGUMENT = 2,
  ILMPC_IO_ERROR = 3,
  ILMPC_PARSE_ERROR = 4,
  ILMPC_SOLVER_ERROR = 5,
  ILMPC_SAFETY_VIOLATION = 6,
  ILMPC_INTERNAL_ERROR = 7,
} IlmpcStatus;

typedef struct IlmpcTask IlmpcTask;
typedef struct IlmpcCertificate IlmpcCertificate;
typedef struct IlmpcPolicy IlmpcPolicy;
typedef struct IlmpcController IlmpcController;

const char *ilmpc_last_error_message(void);
const char *ilmpc_version(void);

/* Task ------------------------------------------------------------------- */

IlmpcStatus ilmpc_task_from_config(const char *config_path, IlmpcTask **out);
IlmpcStatus ilmpc_task_benchmark(IlmpcTask **out);
void ilmpc_task_free(IlmpcTask *task);
size_t ilmpc_task_state_dim(const IlmpcTask *task);
size_t ilmpc_task_input_dim(const IlmpcTask *task);
IlmpcStatus ilmpc_task_state_unsafe(const IlmpcTask *task, const double *state,
                                    size_t state_len, int *out);
IlmpcStatus ilmpc_task_step(const IlmpcTask *task, const double *state,
                            size_t state_len, const double *input,
                            size_t input_len, double *next);

/* Certificate and policy -------------------------------------------------- */

IlmpcStatus ilmpc_certificate_load(const char *path, IlmpcCertificate **out);
void ilmpc_certificate_free(IlmpcCertificate *cert);
IlmpcStatus ilmpc_certificate_value(const IlmpcCertificate *cert,
                                    const double *state, size_t state_len,
                                    double *out);
double ilmpc_certificate_level(const IlmpcCertificate *cert);

IlmpcStatus ilmpc_policy_load(const char *path, IlmpcPolicy **out);
void ilmpc_policy_free(IlmpcPolicy *policy);
IlmpcStatus ilmpc_policy_action(const IlmpcPolicy *policy, const double *state,
                                size_t state_len, double *action,
                                size_t action_len);

/* Receding-horizon controller --------------------------------------------- */

IlmpcStatus ilmpc_controller_new(const IlmpcTask *task,
                                 const IlmpcCertificate *cert,
                                 const IlmpcPolicy *policy,
                                 IlmpcController **out);
void ilmpc_controller_free(IlmpcController *controller);
IlmpcStatus ilmpc_controller_reset(IlmpcController *controller);
IlmpcStatus ilmpc_controller_step(IlmpcController *controller,
                                  const double *state, size_t state_len,
                                  double *action, size_t action_len);

/* Utilities ---------------------------------------------------------------- */

IlmpcStatus ilmpc_wheel_velocities(double wheel_radius, double wheelbase,
                                   double v, double omega, int swap_convention,
                                   double *v_right, double *v_left);

#ifdef __cplusplus
}
#endif

#endif /* ILMPC_H */
