use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use delay_impulse_ffi::*;

fn fixture(name: &str) -> CString {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name);
    CString::new(std::fs::read_to_string(path).unwrap()).unwrap()
}

fn last_error() -> String {
    let p = dip_last_error_message();
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { dip_string_free(p) };
    s
}

fn load(name: &str) -> *mut DipModel {
    let mut model = ptr::null_mut();
    let status = unsafe { dip_model_from_json(fixture(name).as_ptr(), &mut model) };
    assert_eq!(status, DipStatus::Ok);
    model
}

#[test]
fn solves_d1_in_both_criteria() {
    let model = load("d1.json");
    unsafe {
        let mut report = ptr::null_mut();
        assert_eq!(dip_solve(model, DipMode::RiskNeutral, 0.0, 0.0, &mut report), DipStatus::Ok);
        let mut v = 0.0;
        assert_eq!(dip_report_value(report, &mut v), DipStatus::Ok);
        assert!((v - 0.6).abs() < 1e-12);

        let mut n = 0;
        assert_eq!(dip_report_levels(report, &mut n), DipStatus::Ok);
        assert!(n >= 2);
        let mut top = 0.0;
        assert_eq!(dip_report_level_value(report, n - 1, &mut top), DipStatus::Ok);
        assert_eq!(top, v);
        assert_eq!(dip_report_level_value(report, n, &mut top), DipStatus::OutOfRange);
        assert!(last_error().contains("out of range"));

        let mut json = ptr::null_mut();
        assert_eq!(dip_report_to_json(report, &mut json), DipStatus::Ok);
        let parsed: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(parsed["value"].as_f64(), Some(v));
        dip_string_free(json);

        let mut csv = ptr::null_mut();
        assert_eq!(dip_report_strategy_csv(report, &mut csv), DipStatus::Ok);
        assert!(CStr::from_ptr(csv).to_str().unwrap().starts_with("level,a_id,i,time,state,action,size"));
        dip_string_free(csv);
        dip_report_free(report);

        let mut report = ptr::null_mut();
        assert_eq!(dip_solve(model, DipMode::RiskSensitive, 0.0, 0.0, &mut report), DipStatus::Ok);
        assert_eq!(dip_report_value(report, &mut v), DipStatus::Ok);
        assert!((v - 0.6f64.exp()).abs() < 1e-12);
        dip_report_free(report);

        let mut states = 0;
        assert_eq!(dip_model_states(model, &mut states), DipStatus::Ok);
        assert!(states > 0);
        dip_model_free(model);
    }
}

#[test]
fn infinite_mode_honours_the_horizon_cap() {
    let model = load("d2.json");
    unsafe {
        let mut report = ptr::null_mut();
        assert_eq!(dip_solve(model, DipMode::Infinite, 0.0, 0.0, &mut report), DipStatus::Ok);
        let mut v = 0.0;
        assert_eq!(dip_report_value(report, &mut v), DipStatus::Ok);
        assert!((v - delay_impulse::fixtures::d2_value()).abs() < 1e-4);
        dip_report_free(report);

        let mut report = ptr::null_mut();
        assert_eq!(dip_solve(model, DipMode::Infinite, 0.0, 2.0, &mut report), DipStatus::SolverError);
        assert!(report.is_null());
        assert!(!last_error().is_empty());
        dip_model_free(model);
    }
}

#[test]
fn bad_input_is_reported() {
    unsafe {
        let mut model = ptr::null_mut();
        let bad = CString::new("{\"grid\": 1}").unwrap();
        assert_eq!(dip_model_from_json(bad.as_ptr(), &mut model), DipStatus::ConfigError);
        assert!(model.is_null());
        assert!(last_error().contains("line"));

        assert_eq!(dip_model_from_json(ptr::null(), &mut model), DipStatus::NullPointer);
        let invalid = [0xffu8, 0xfe, 0];
        assert_eq!(dip_model_from_json(invalid.as_ptr().cast(), &mut model), DipStatus::InvalidUtf8);
        assert_eq!(dip_report_value(ptr::null(), &mut 0.0), DipStatus::NullPointer);

        dip_model_free(ptr::null_mut());
        dip_report_free(ptr::null_mut());
        dip_string_free(ptr::null_mut());
    }
}

#[test]
fn swing_price_matches_the_library() {
    let mut price = 0.0;
    let status = unsafe { dip_price_swing_json(fixture("swing.json").as_ptr(), &mut price) };
    assert_eq!(status, DipStatus::Ok);
    let (model, menu) = delay_impulse::fixtures::swing();
    let exact = delay_impulse::lattice_rn::solve_with_depth(&model, &menu, 3).unwrap().value;
    assert_eq!(price, exact);
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/delay_impulse.h")).unwrap();
    for name in [
        "dip_model_from_json",
        "dip_solve",
        "dip_report_value",
        "dip_last_error_message",
        "dip_string_free",
        "DIP_STATUS_CONFIG_ERROR",
        "typedef struct DipModel DipModel",
    ] {
        assert!(header.contains(name), "{name}");
    }
    let v = unsafe { CStr::from_ptr(dip_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
