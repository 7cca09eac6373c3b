//! C ABI over `cyclone-core`.
//!
//! Every fallible function returns a [`TcStatus`]; on failure a message is
//! kept per thread and can be fetched with [`tc_last_error_message`].
//! Models are opaque [`TcModel`] handles owned by the caller until passed
//! to [`tc_model_free`]. Panics never cross the boundary; they surface as
//! [`TcStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cyclone_core::features::{classify_grade, FeatureVector, FEATURE_COUNT};
use cyclone_core::geo::{haversine_distance, initial_bearing, LatLon};
use cyclone_core::nn::Matrix;
use cyclone_core::{Error, TrainedModel};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Domain = 5,
    Panic = 6,
}

/// A loaded checkpoint: network, scaler and window sizes.
pub struct TcModel {
    model: TrainedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> TcStatus {
    match err {
        Error::Io { .. } | Error::NotFound(_) => TcStatus::Io,
        Error::Format(_) | Error::Checkpoint(_) | Error::Json(_) | Error::Csv(_) | Error::EmptyInput => {
            TcStatus::Format
        }
        Error::Shape(_) | Error::ShortHistory { .. } | Error::Config(_) => TcStatus::InvalidArgument,
        _ => TcStatus::Domain,
    }
}

fn fail(status: TcStatus, msg: impl Into<String>) -> TcStatus {
    set_last_error(msg);
    status
}

fn from_core(err: Error) -> TcStatus {
    fail(status_of(&err), err.to_string())
}

/// Runs `body`, converting a panic into [`TcStatus::Panic`].
fn guard(body: impl FnOnce() -> TcStatus) -> TcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(TcStatus::Panic, format!("panic: {msg}"))
        }
    }
}

/// Number of features per input row (7).
#[no_mangle]
pub extern "C" fn tc_feature_count() -> usize {
    FEATURE_COUNT
}

/// Loads a checkpoint written by the `cyclone` tool.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer to
/// writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn tc_model_load(path: *const c_char, out: *mut *mut TcModel) -> TcStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(TcStatus::NullPointer, "path and out must be non-null");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(TcStatus::InvalidArgument, "path is not valid UTF-8");
        };
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) => return fail(TcStatus::Io, format!("{path}: {e}")),
        };
        match TrainedModel::load(BufReader::new(file)) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(TcModel { model }));
                TcStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Releases a handle from [`tc_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn tc_model_free(model: *mut TcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Observed steps the model expects (0 for a null handle).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tc_model_t1(model: *const TcModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.spec.t1)
}

/// Forecast steps the model emits (0 for a null handle).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tc_model_t2(model: *const TcModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.spec.t2)
}

/// Forecasts MSWS (knots) for the `t2` steps after the last row of
/// `features`: `t1` rows of raw, unscaled features in the order lat, lon,
/// msws, ecp, distance, direction, sst, row-major.
///
/// # Safety
/// `features` must point to `features_len` readable doubles and `out` to
/// `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tc_model_predict(
    model: *const TcModel,
    features: *const f64,
    features_len: usize,
    out: *mut f64,
    out_len: usize,
) -> TcStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(TcStatus::NullPointer, "model is null");
        };
        if features.is_null() || out.is_null() {
            return fail(TcStatus::NullPointer, "features and out must be non-null");
        }
        let spec = m.model.spec;
        if features_len != spec.t1 * FEATURE_COUNT {
            return fail(
                TcStatus::InvalidArgument,
                format!("expected {} feature values, got {features_len}", spec.t1 * FEATURE_COUNT),
            );
        }
        if out_len < spec.t2 {
            return fail(TcStatus::InvalidArgument, format!("out holds {out_len} values, need {}", spec.t2));
        }
        let raw = std::slice::from_raw_parts(features, features_len);
        let scaled: Vec<f64> = raw
            .chunks_exact(FEATURE_COUNT)
            .flat_map(|row| {
                let row: [f64; FEATURE_COUNT] = row.try_into().expect("chunk width");
                m.model.scaler.scale_row(&FeatureVector::from_array(row))
            })
            .collect();
        match m.model.params.predict(&Matrix::from_vec(spec.t1, FEATURE_COUNT, scaled)) {
            Ok(pred) => {
                std::slice::from_raw_parts_mut(out, spec.t2).copy_from_slice(&pred);
                TcStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Great-circle distance in kilometres.
///
/// # Safety
/// `out` must be a valid pointer to one double.
#[no_mangle]
pub unsafe extern "C" fn tc_haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64, out: *mut f64) -> TcStatus {
    guard(|| {
        if out.is_null() {
            return fail(TcStatus::NullPointer, "out is null");
        }
        match haversine_distance(LatLon::new(lat1, lon1), LatLon::new(lat2, lon2)) {
            Ok(d) => {
                *out = d;
                TcStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Initial bearing in degrees `[0, 360)`; 0 for coincident points.
///
/// # Safety
/// `out` must be a valid pointer to one double.
#[no_mangle]
pub unsafe extern "C" fn tc_initial_bearing_deg(
    lat1: f64,
    lon1: f64,
    lat2: f64,
    lon2: f64,
    out: *mut f64,
) -> TcStatus {
    guard(|| {
        if out.is_null() {
            return fail(TcStatus::NullPointer, "out is null");
        }
        match initial_bearing(LatLon::new(lat1, lon1), LatLon::new(lat2, lon2)) {
            Ok(b) => {
                *out = b.degrees;
                TcStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Intensity grade number (0 = LP .. 7 = SS) for an MSWS in knots.
///
/// # Safety
/// `out` must be a valid pointer to one byte.
#[no_mangle]
pub unsafe extern "C" fn tc_classify_grade(msws_kt: f64, out: *mut u8) -> TcStatus {
    guard(|| {
        if out.is_null() {
            return fail(TcStatus::NullPointer, "out is null");
        }
        match classify_grade(msws_kt) {
            Ok(g) => {
                *out = g.number();
                TcStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Copy of the calling thread's last error message, or null if none.
/// Free it with [`tc_string_free`].
#[no_mangle]
pub extern "C" fn tc_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |s| s.clone().into_raw()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from [`tc_last_error_message`] not freed before.
#[no_mangle]
pub unsafe extern "C" fn tc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
