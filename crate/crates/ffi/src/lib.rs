//! C ABI over the `delay-impulse` solvers.
//!
//! Models and reports are opaque handles owned by the caller and released
//! with the matching `*_free` function. Every call returns a [`DipStatus`];
//! on failure [`dip_last_error_message`] describes the most recent error on
//! the calling thread. Strings handed out by the library must be released
//! with [`dip_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use delay_impulse::config::{ModelConfig, SwingConfig};
use delay_impulse::model::{ImpulseMenu, MarkovLattice};
use delay_impulse::report::{self, Mode, SolveOutput, SolveOverrides};
use delay_impulse::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DipStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ConfigError = 3,
    SolverError = 4,
    OutOfRange = 5,
    Panic = 6,
}

/// Solver selection for [`dip_solve`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DipMode {
    RiskNeutral = 0,
    RiskSensitive = 1,
    Infinite = 2,
}

impl From<DipMode> for Mode {
    fn from(m: DipMode) -> Mode {
        match m {
            DipMode::RiskNeutral => Mode::Rn,
            DipMode::RiskSensitive => Mode::Rs,
            DipMode::Infinite => Mode::Inf,
        }
    }
}

/// A parsed and validated model file.
pub struct DipModel {
    config: ModelConfig,
    model: MarkovLattice,
    menu: ImpulseMenu,
}

/// The outcome of [`dip_solve`].
pub struct DipReport {
    output: SolveOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: DipStatus, msg: impl Into<String>) -> DipStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> DipStatus {
    let status = match e {
        Error::Config(_) | Error::Json(_) => DipStatus::ConfigError,
        _ => DipStatus::SolverError,
    };
    fail(status, e.to_string())
}

fn guard(body: impl FnOnce() -> DipStatus) -> DipStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(DipStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, DipStatus> {
    if s.is_null() {
        return Err(fail(DipStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| fail(DipStatus::InvalidUtf8, format!("argument is not UTF-8: {e}")))
}

fn into_c_string(s: String) -> Result<*mut c_char, DipStatus> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| fail(DipStatus::SolverError, "output contains an interior NUL"))
}

macro_rules! non_null {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            return fail(DipStatus::NullPointer, concat!("null argument: ", stringify!($p)));
        })+
    };
}

/// Parses a model JSON document into a new handle written to `*out`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dip_model_from_json(json: *const c_char, out: *mut *mut DipModel) -> DipStatus {
    guard(|| {
        non_null!(out);
        *out = ptr::null_mut();
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let config = match ModelConfig::from_json(text) {
            Ok(c) => c,
            Err(e) => return from_error(e),
        };
        let (model, menu) = match config.build() {
            Ok(b) => b,
            Err(e) => return from_error(e),
        };
        *out = Box::into_raw(Box::new(DipModel { config, model, menu }));
        DipStatus::Ok
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`dip_model_from_json`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dip_model_free(model: *mut DipModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of Markov states of a model.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dip_model_states(model: *const DipModel, out: *mut usize) -> DipStatus {
    guard(|| {
        non_null!(model, out);
        *out = (*model).model.n_states();
        DipStatus::Ok
    })
}

/// Solves a model. `epsilon` and `t_max` only apply to the infinite mode;
/// pass a non-positive value to keep the model's own setting.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dip_solve(
    model: *const DipModel,
    mode: DipMode,
    epsilon: f64,
    t_max: f64,
    out: *mut *mut DipReport,
) -> DipStatus {
    guard(|| {
        non_null!(model, out);
        *out = ptr::null_mut();
        let m = &*model;
        let overrides = SolveOverrides {
            epsilon: (epsilon > 0.0).then_some(epsilon),
            t_max: (t_max > 0.0).then_some(t_max),
        };
        match report::solve_model(&m.model, &m.menu, mode.into(), &m.config, overrides) {
            Ok(output) => {
                *out = Box::into_raw(Box::new(DipReport { output }));
                DipStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Releases a report. Null is ignored.
///
/// # Safety
/// `report` must come from [`dip_solve`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dip_report_free(report: *mut DipReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Optimal value at the initial condition.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dip_report_value(report: *const DipReport, out: *mut f64) -> DipStatus {
    guard(|| {
        non_null!(report, out);
        *out = (*report).output.summary.value;
        DipStatus::Ok
    })
}

/// Number of entries in the per-level value list.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dip_report_levels(report: *const DipReport, out: *mut usize) -> DipStatus {
    guard(|| {
        non_null!(report, out);
        *out = (*report).output.summary.level_values.len();
        DipStatus::Ok
    })
}

/// Value with at most `level` impulses (iterate `level` in the infinite mode).
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dip_report_level_value(report: *const DipReport, level: usize, out: *mut f64) -> DipStatus {
    guard(|| {
        non_null!(report, out);
        let levels = &(*report).output.summary.level_values;
        match levels.get(level) {
            Some(v) => {
                *out = *v;
                DipStatus::Ok
            }
            None => fail(
                DipStatus::OutOfRange,
                format!("level {level} out of range ({} levels)", levels.len()),
            ),
        }
    })
}

/// The report summary as JSON, written to `*out`.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dip_report_to_json(report: *const DipReport, out: *mut *mut c_char) -> DipStatus {
    guard(|| {
        non_null!(report, out);
        *out = ptr::null_mut();
        let json = match serde_json::to_string_pretty(&(*report).output.summary) {
            Ok(j) => j,
            Err(e) => return from_error(e.into()),
        };
        match into_c_string(json) {
            Ok(s) => {
                *out = s;
                DipStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// The decision rule in `strategy.csv` format, written to `*out`.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dip_report_strategy_csv(report: *const DipReport, out: *mut *mut c_char) -> DipStatus {
    guard(|| {
        non_null!(report, out);
        *out = ptr::null_mut();
        match into_c_string((*report).output.strategy_csv.clone()) {
            Ok(s) => {
                *out = s;
                DipStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Prices a swing contract given as JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string and `price` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dip_price_swing_json(json: *const c_char, price: *mut f64) -> DipStatus {
    guard(|| {
        non_null!(price);
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match SwingConfig::from_json(text).and_then(|c| report::price_swing_config(&c)) {
            Ok(o) => {
                *price = o.summary.price;
                DipStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Copy of the last error message on this thread, or null if there is none.
/// Release it with [`dip_string_free`].
#[no_mangle]
pub extern "C" fn dip_last_error_message() -> *mut c_char {
    LAST_ERROR
        .with(|e| e.borrow().clone())
        .and_then(|m| CString::new(m.replace('\0', " ")).ok())
        .map_or(ptr::null_mut(), CString::into_raw)
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dip_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dip_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
