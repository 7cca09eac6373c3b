use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use cyclone_core::features::{build_feature_frame, fit_scaler};
use cyclone_core::nn::NetworkParams;
use cyclone_core::synthetic::{generate, SyntheticConfig};
use cyclone_core::train::TrainConfig;
use cyclone_core::{FeatureFrame, TrainedModel, WindowSpec};
use cyclone_ffi::*;

fn frames() -> Vec<FeatureFrame> {
    let set = generate(&SyntheticConfig {
        storms: 4,
        ..SyntheticConfig::default()
    })
    .unwrap();
    set.tracks
        .iter()
        .map(|t| build_feature_frame(t, &set.sst).unwrap().0)
        .collect()
}

fn model() -> TrainedModel {
    let config = TrainConfig {
        t1: 3,
        t2: 2,
        hidden: 4,
        layers: 2,
        ..TrainConfig::default()
    };
    TrainedModel {
        params: NetworkParams::init(config.architecture(), 9).unwrap(),
        scaler: fit_scaler(&frames()).unwrap(),
        spec: WindowSpec::new(3, 2).unwrap(),
        seed: 9,
    }
}

fn save(dir: &Path, model: &TrainedModel) -> PathBuf {
    let path = dir.join("model.ckpt");
    model.save(std::fs::File::create(&path).unwrap(), None).unwrap();
    path
}

fn last_error() -> String {
    let p = tc_last_error_message();
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { tc_string_free(p) };
    s
}

#[test]
fn load_and_predict_match_the_core_forecast() {
    let dir = tempfile::tempdir().unwrap();
    let model = model();
    let path = CString::new(save(dir.path(), &model).to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { tc_model_load(path.as_ptr(), &mut handle) }, TcStatus::Ok);
    assert_eq!(unsafe { (tc_model_t1(handle), tc_model_t2(handle)) }, (3, 2));

    let frame = &frames()[0];
    let history = frame.prefix(5);
    let raw: Vec<f64> = history.vectors[2..].iter().flat_map(|v| v.to_array()).collect();
    let mut out = [0.0; 2];
    let status = unsafe { tc_model_predict(handle, raw.as_ptr(), raw.len(), out.as_mut_ptr(), out.len()) };
    assert_eq!(status, TcStatus::Ok);
    let expected = model.forecast(&history).unwrap();
    assert_eq!(out[0], expected.steps[0].predicted_kt);
    assert_eq!(out[1], expected.steps[1].predicted_kt);

    let status = unsafe { tc_model_predict(handle, raw.as_ptr(), raw.len() - 1, out.as_mut_ptr(), 2) };
    assert_eq!(status, TcStatus::InvalidArgument);
    assert!(last_error().contains("expected 21 feature values"));
    unsafe { tc_model_free(handle) };
}

#[test]
fn load_errors_are_reported() {
    let mut handle = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    assert_eq!(unsafe { tc_model_load(missing.as_ptr(), &mut handle) }, TcStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().contains("/nonexistent/model.ckpt"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint\n").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { tc_model_load(junk.as_ptr(), &mut handle) }, TcStatus::Format);
    assert_eq!(unsafe { tc_model_load(ptr::null(), &mut handle) }, TcStatus::NullPointer);
}

#[test]
fn null_handles_are_harmless() {
    unsafe {
        tc_model_free(ptr::null_mut());
        tc_string_free(ptr::null_mut());
        assert_eq!(tc_model_t1(ptr::null()), 0);
        let mut out = [0.0];
        let x = [0.0; 7];
        assert_eq!(
            tc_model_predict(ptr::null(), x.as_ptr(), 7, out.as_mut_ptr(), 1),
            TcStatus::NullPointer
        );
    }
}

#[test]
fn geodesy_and_grades() {
    let mut d = 0.0;
    assert_eq!(unsafe { tc_haversine_km(0.0, 0.0, 0.0, 1.0, &mut d) }, TcStatus::Ok);
    assert!((d - 6371.0 * 1f64.to_radians()).abs() < 1e-9);
    let mut b = -1.0;
    assert_eq!(unsafe { tc_initial_bearing_deg(0.0, 0.0, 1.0, 0.0, &mut b) }, TcStatus::Ok);
    assert_eq!(b, 0.0);
    assert_eq!(unsafe { tc_haversine_km(91.0, 0.0, 0.0, 0.0, &mut d) }, TcStatus::Domain);

    let mut g = 0u8;
    for (msws, grade) in [(16.9, 0), (17.0, 1), (64.0, 5), (120.0, 7)] {
        assert_eq!(unsafe { tc_classify_grade(msws, &mut g) }, TcStatus::Ok);
        assert_eq!(g, grade, "{msws}");
    }
    assert_eq!(unsafe { tc_classify_grade(-1.0, &mut g) }, TcStatus::Domain);
    assert_eq!(unsafe { tc_classify_grade(1.0, ptr::null_mut()) }, TcStatus::NullPointer);
    assert_eq!(tc_feature_count(), 7);
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "cyclone_ffi.h"

int main(int argc, char **argv) {
    TcModel *model = NULL;
    if (tc_model_load(argv[1], &model) != TC_STATUS_OK) return 10;
    if (tc_model_t1(model) != 3 || tc_model_t2(model) != 2) return 11;
    double x[21];
    for (int r = 0; r < 3; r++) {
        double row[7] = {15.0 + r, 80.0, 30.0 + 2 * r, 1000.0 - r, 25.0, 320.0, 29.0};
        for (int c = 0; c < 7; c++) x[r * 7 + c] = row[c];
    }
    double out[2];
    if (tc_model_predict(model, x, 21, out, 2) != TC_STATUS_OK) return 12;
    printf("%.17g %.17g\n", out[0], out[1]);
    if (tc_model_predict(model, x, 20, out, 2) != TC_STATUS_INVALID_ARGUMENT) return 13;
    char *msg = tc_last_error_message();
    if (msg == NULL) return 14;
    tc_string_free(msg);
    tc_model_free(model);
    uint8_t grade = 0;
    if (tc_classify_grade(48.0, &grade) != TC_STATUS_OK || grade != 4) return 15;
    return 0;
}
"#;

#[test]
fn c_program_links_against_the_static_library() {
    let target_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = target_dir.join("libcyclone_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("SKIP: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.path().join("main");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let build = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));

    let model = model();
    let ckpt = save(dir.path(), &model);
    let run = Command::new(&exe).arg(&ckpt).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));

    let printed: Vec<f64> = String::from_utf8(run.stdout)
        .unwrap()
        .split_whitespace()
        .map(|s| s.parse().unwrap())
        .collect();
    let raw: Vec<f64> = (0..3)
        .flat_map(|r| {
            let r = r as f64;
            [15.0 + r, 80.0, 30.0 + 2.0 * r, 1000.0 - r, 25.0, 320.0, 29.0]
        })
        .collect();
    let mut out = [0.0; 2];
    let handle_path = CString::new(ckpt.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(tc_model_load(handle_path.as_ptr(), &mut handle), TcStatus::Ok);
        assert_eq!(tc_model_predict(handle, raw.as_ptr(), 21, out.as_mut_ptr(), 2), TcStatus::Ok);
        tc_model_free(handle);
    }
    assert_eq!(printed, out.to_vec());
}
