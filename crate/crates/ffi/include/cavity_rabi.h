#ifndef CAVITY_RABI_H
#define CAVITY_RABI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
enum CrStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  CR_STATUS_OK = 0,
  CR_STATUS_NULL_POINTER = 1,
  CR_STATUS_VALIDATION = 2,
  CR_STATUS_NON_CONVERGENCE = 3,
  CR_STATUS_NUMERICAL = 4,
  CR_STATUS_PANIC = 5,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum CrStatus CrStatus;
#else
typedef int32_t CrStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Opaque model handle. Create with [`cr_model_new`] or [`cr_model_preset`],
 * release with [`cr_model_free`].
 */
typedef struct CrModel CrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a model at temperature-derived KMS ratio. Rates are in 1/s,
 * frequencies in rad/s, temperature in K. The profile starts constant.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
CrStatus cr_model_new(double omega0,
                      double g,
                      double temperature,
                      double gamma1,
                      double gamma2,
                      double gamma3,
                      struct CrModel **out);

/**
 * Model at the calibrated experiment values with the Gaussian profile.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
CrStatus cr_model_preset(struct CrModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void cr_model_free(struct CrModel *model);

/**
 * Overrides the upward-rate ratio derived from the temperature.
 *
 * # Safety
 * `model` must be a live handle.
 */
CrStatus cr_model_set_eps(struct CrModel *model, double eps);

/**
 * Switches to the Gaussian mode profile. Lengths in metres; a velocity of
 * zero or less means "one diameter per run".
 *
 * # Safety
 * `model` must be a live handle.
 */
CrStatus cr_model_set_gaussian(struct CrModel *model,
                               double waist,
                               double diameter,
                               double velocity);

/**
 * Switches back to a constant coupling.
 *
 * # Safety
 * `model` must be a live handle.
 */
CrStatus cr_model_set_constant(struct CrModel *model);

/**
 * Ground-state probability at time `t` (s) from |e,0⟩.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
CrStatus cr_ground_probability(const struct CrModel *model, double t, double *out);

/**
 * Ground-state probability averaged over a timing uncertainty `delta_t` (s).
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
CrStatus cr_ground_probability_convolved(const struct CrModel *model,
                                         double delta_t,
                                         double t,
                                         double *out);

/**
 * Mean energy (rad/s) at time `t`. Uses a constant coupling.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
CrStatus cr_energy(const struct CrModel *model, double t, double *out);

/**
 * Mean energy averaged over a timing uncertainty `delta_t` (s).
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
CrStatus cr_energy_convolved(const struct CrModel *model, double delta_t, double t, double *out);

/**
 * Smallest eigenvalue of the partial transpose; negative means entangled.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
CrStatus cr_min_ppt_eigenvalue(const struct CrModel *model, double t, double *out);

/**
 * Writes the 3×3 density matrix at time `t` in row-major order over
 * |e,0⟩, |g,1⟩, |g,0⟩ into `re[9]` and `im[9]`.
 *
 * # Safety
 * `model` must be a live handle; `re` and `im` must each hold 9 doubles.
 */
CrStatus cr_density_matrix(const struct CrModel *model, double t, double *re, double *im);

/**
 * `exp(−ħω/kT)` for `omega` in rad/s and `temperature` in K.
 *
 * # Safety
 * `out` must be writable.
 */
CrStatus cr_kms_ratio(double omega, double temperature, double *out);

/**
 * Mean photon number of a thermal mode at `omega` (rad/s), `temperature` (K).
 *
 * # Safety
 * `out` must be writable.
 */
CrStatus cr_thermal_occupation(double omega, double temperature, double *out);

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *cr_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cr_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAVITY_RABI_H */
