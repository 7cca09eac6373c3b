#ifndef CYCLONE_FFI_H
#define CYCLONE_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TcStatus {
  TC_STATUS_OK = 0,
  TC_STATUS_NULL_POINTER = 1,
  TC_STATUS_INVALID_ARGUMENT = 2,
  TC_STATUS_IO = 3,
  TC_STATUS_FORMAT = 4,
  TC_STATUS_DOMAIN = 5,
  TC_STATUS_PANIC = 6,
} TcStatus;

// A loaded checkpoint: network, scaler and window sizes.
typedef struct TcModel TcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Number of features per input row (7).
size_t tc_feature_count(void);

// Loads a checkpoint written by the `cyclone` tool.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer to
// writable storage for one handle.
enum TcStatus tc_model_load(const char *path, struct TcModel **out);

// Releases a handle from [`tc_model_load`]. Null is ignored.
//
// # Safety
// `model` must be null or a live handle not freed before.
void tc_model_free(struct TcModel *model);

// Observed steps the model expects (0 for a null handle).
//
// # Safety
// `model` must be null or a live handle.
size_t tc_model_t1(const struct TcModel *model);

// Forecast steps the model emits (0 for a null handle).
//
// # Safety
// `model` must be null or a live handle.
size_t tc_model_t2(const struct TcModel *model);

// Forecasts MSWS (knots) for the `t2` steps after the last row of
// `features`: `t1` rows of raw, unscaled features in the order lat, lon,
// msws, ecp, distance, direction, sst, row-major.
//
// # Safety
// `features` must point to `features_len` readable doubles and `out` to
// `out_len` writable doubles.
enum TcStatus tc_model_predict(const struct TcModel *model,
                               const double *features,
                               size_t features_len,
                               double *out,
                               size_t out_len);

// Great-circle distance in kilometres.
//
// # Safety
// `out` must be a valid pointer to one double.
enum TcStatus tc_haversine_km(double lat1, double lon1, double lat2, double lon2, double *out);

// Initial bearing in degrees `[0, 360)`; 0 for coincident points.
//
// # Safety
// `out` must be a valid pointer to one double.
enum TcStatus tc_initial_bearing_deg(double lat1,
                                     double lon1,
                                     double lat2,
                                     double lon2,
                                     double *out);

// Intensity grade number (0 = LP .. 7 = SS) for an MSWS in knots.
//
// # Safety
// `out` must be a valid pointer to one byte.
enum TcStatus tc_classify_grade(double msws_kt, uint8_t *out);

// Copy of the calling thread's last error message, or null if none.
// Free it with [`tc_string_free`].
char *tc_last_error_message(void);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string from [`tc_last_error_message`] not freed before.
void tc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CYCLONE_FFI_H */
