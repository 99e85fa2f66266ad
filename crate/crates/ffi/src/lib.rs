//! C ABI over `annocar`.
//!
//! Conventions:
//! - Every fallible function returns an [`AnnocarStatus`]; on failure a
//!   message is available from [`annocar_last_error`] on the same thread.
//! - Scenes are opaque [`AnnocarScene`] handles released with
//!   [`annocar_scene_free`].
//! - Strings returned through out-parameters are NUL-terminated UTF-8 owned
//!   by the caller and released with [`annocar_string_free`].
//! - Panics never cross the boundary; they surface as `ANNOCAR_STATUS_PANIC`.
//! - Pointer arguments must be null or valid for their type; strings are
//!   NUL-terminated. Null where a value is required gives
//!   `ANNOCAR_STATUS_INVALID_ARGUMENT`. Handles must not be used after free.

#![allow(clippy::missing_safety_doc, clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use annocar::annotation::{load_scene, parse_scene, save_scene, scene_to_string, Scene};
use annocar::car::{baseline_time, car, correction_time, CarValue, CorrectionTimeTable};
use annocar::config::Config;
use annocar::report::evaluate_scenes;
use annocar::taxonomy::{diff_versions, ErrorCounts, ErrorType, Thresholds};
use annocar::tracking::track_scene;
use annocar::{exit_code, Error};

/// Result codes. The first four mirror the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnocarStatus {
    Ok = 0,
    Io = 1,
    Data = 2,
    Calibration = 3,
    InvalidArgument = 4,
    Panic = 5,
}

/// Index of each error type in [`AnnocarCounts::counts`] and
/// [`AnnocarTimeTable::times`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnocarErrorType {
    Fp = 0,
    Fn = 1,
    T = 2,
    R = 3,
    S = 4,
    Cls = 5,
    Tr = 6,
    Rs = 7,
    Ts = 8,
    Trs = 9,
}

pub const ANNOCAR_ERROR_TYPE_COUNT: usize = 10;

/// Opaque scene handle.
pub struct AnnocarScene(Scene);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnocarThresholds {
    pub translation_m: f64,
    pub rotation_rad: f64,
    pub scale_deficit: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnnocarCounts {
    pub n_gt: u64,
    pub n_matched: u64,
    pub counts: [u64; ANNOCAR_ERROR_TYPE_COUNT],
}

/// Per-type correction times and the creation time, in seconds.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnocarTimeTable {
    pub times: [f64; ANNOCAR_ERROR_TYPE_COUNT],
    pub t_create: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(AnnocarStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            exit_code::IO => AnnocarStatus::Io,
            exit_code::CALIBRATION => AnnocarStatus::Calibration,
            _ => AnnocarStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(AnnocarStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AnnocarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            AnnocarStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            AnnocarStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| invalid(format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| invalid(format!("{name} is null")))
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| invalid("output contains a NUL byte"))
}

fn config_arg(toml: *const c_char) -> Result<Config, Failure> {
    if toml.is_null() {
        return Ok(Config::default());
    }
    let text = unsafe { str_arg(toml, "config") }?;
    Config::parse(text).map_err(|e| Failure::from(Error::from(e)))
}

fn to_c_counts(c: &ErrorCounts) -> AnnocarCounts {
    let mut out = AnnocarCounts {
        n_gt: c.n_gt,
        n_matched: c.n_matched,
        counts: [0; ANNOCAR_ERROR_TYPE_COUNT],
    };
    for e in ErrorType::ALL {
        out.counts[e.index()] = c.get(e);
    }
    out
}

fn from_c_counts(c: &AnnocarCounts) -> ErrorCounts {
    let mut out = ErrorCounts::default();
    out.n_gt = c.n_gt;
    out.n_matched = c.n_matched;
    for e in ErrorType::ALL {
        out.set(e, c.counts[e.index()]);
    }
    out
}

fn from_c_table(t: &AnnocarTimeTable) -> Result<CorrectionTimeTable, Failure> {
    CorrectionTimeTable::new(ErrorType::ALL.into_iter().map(|e| (e, t.times[e.index()])), t.t_create)
        .map_err(|e| Failure(AnnocarStatus::Data, e.to_string()))
}

/// Message for the most recent failure on this thread; empty after a
/// success. Valid until the next call into this library on this thread.
#[no_mangle]
pub extern "C" fn annocar_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn annocar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn annocar_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load and validate a scene file.
#[no_mangle]
pub unsafe extern "C" fn annocar_scene_load(path: *const c_char, out: *mut *mut AnnocarScene) -> AnnocarStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let scene = load_scene(str_arg(path, "path")?).map_err(|e| Failure::from(Error::from(e)))?;
        *out = Box::into_raw(Box::new(AnnocarScene(scene)));
        Ok(())
    })
}

/// Parse and validate a scene from JSON text.
#[no_mangle]
pub unsafe extern "C" fn annocar_scene_from_json(json: *const c_char, out: *mut *mut AnnocarScene) -> AnnocarStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let scene = parse_scene(str_arg(json, "json")?, "<memory>").map_err(|e| Failure::from(Error::from(e)))?;
        *out = Box::into_raw(Box::new(AnnocarScene(scene)));
        Ok(())
    })
}

/// Canonical JSON text of a scene; free with [`annocar_string_free`].
#[no_mangle]
pub unsafe extern "C" fn annocar_scene_to_json(scene: *const AnnocarScene, out: *mut *mut c_char) -> AnnocarStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let scene = ref_arg(scene, "scene")?;
        *out = owned_string(scene_to_string(&scene.0))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn annocar_scene_save(scene: *const AnnocarScene, path: *const c_char) -> AnnocarStatus {
    guard(|| {
        let scene = ref_arg(scene, "scene")?;
        save_scene(&scene.0, str_arg(path, "path")?).map_err(|e| Failure::from(Error::from(e)))
    })
}

#[no_mangle]
pub unsafe extern "C" fn annocar_scene_free(scene: *mut AnnocarScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Number of frames, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn annocar_scene_frame_count(scene: *const AnnocarScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.frames.len())
}

/// Number of boxes over all frames, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn annocar_scene_box_count(scene: *const AnnocarScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.box_count())
}

#[no_mangle]
pub extern "C" fn annocar_default_thresholds() -> AnnocarThresholds {
    let t = Thresholds::default();
    AnnocarThresholds {
        translation_m: t.translation_m,
        rotation_rad: t.rotation_rad,
        scale_deficit: t.scale_deficit,
    }
}

#[no_mangle]
pub extern "C" fn annocar_default_time_table() -> AnnocarTimeTable {
    let t = CorrectionTimeTable::default();
    let mut times = [0.0; ANNOCAR_ERROR_TYPE_COUNT];
    for e in ErrorType::ALL {
        times[e.index()] = t.time(e);
    }
    AnnocarTimeTable {
        times,
        t_create: t.t_create,
    }
}

/// Correction time `C` in seconds.
#[no_mangle]
pub unsafe extern "C" fn annocar_correction_time(
    counts: *const AnnocarCounts,
    table: *const AnnocarTimeTable,
    out_seconds: *mut f64,
) -> AnnocarStatus {
    guard(|| {
        let table = from_c_table(ref_arg(table, "table")?)?;
        let counts = from_c_counts(ref_arg(counts, "counts")?);
        *out_arg(out_seconds, "out_seconds")? = correction_time(&counts, &table);
        Ok(())
    })
}

/// Baseline time `B` in seconds.
#[no_mangle]
pub unsafe extern "C" fn annocar_baseline_time(
    n_gt: u64,
    table: *const AnnocarTimeTable,
    out_seconds: *mut f64,
) -> AnnocarStatus {
    guard(|| {
        let table = from_c_table(ref_arg(table, "table")?)?;
        *out_arg(out_seconds, "out_seconds")? = baseline_time(n_gt, &table);
        Ok(())
    })
}

/// `1 - C/B`. `out_defined` is set to 0 (and `out_car` to NaN) when `B = 0`
/// and `C > 0`.
#[no_mangle]
pub unsafe extern "C" fn annocar_car(
    correction_s: f64,
    baseline_s: f64,
    out_car: *mut f64,
    out_defined: *mut bool,
) -> AnnocarStatus {
    guard(|| {
        if !(correction_s >= 0.0 && baseline_s >= 0.0) {
            return Err(invalid("times must be non-negative"));
        }
        let out_car = out_arg(out_car, "out_car")?;
        let out_defined = out_arg(out_defined, "out_defined")?;
        match car(correction_s, baseline_s) {
            CarValue::Defined(v) => {
                *out_car = v;
                *out_defined = true;
            }
            CarValue::Undefined => {
                *out_car = f64::NAN;
                *out_defined = false;
            }
        }
        Ok(())
    })
}

/// Error counts of a model scene against its corrected version, summed over
/// frames.
#[no_mangle]
pub unsafe extern "C" fn annocar_diff(
    model: *const AnnocarScene,
    corrected: *const AnnocarScene,
    thresholds: *const AnnocarThresholds,
    gate_m: f64,
    out: *mut AnnocarCounts,
) -> AnnocarStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let t = ref_arg(thresholds, "thresholds")?;
        let th = Thresholds::new(t.translation_m, t.rotation_rad, t.scale_deficit)
            .map_err(|e| Failure(AnnocarStatus::Data, e.to_string()))?;
        if !(gate_m > 0.0) {
            return Err(invalid("gate_m must be positive"));
        }
        let frames = diff_versions(&ref_arg(model, "model")?.0, &ref_arg(corrected, "corrected")?.0, &th, gate_m)
            .map_err(|e| Failure::from(Error::from(e)))?;
        *out = to_c_counts(&frames.iter().copied().sum());
        Ok(())
    })
}

/// Run the tracker. `config_toml` may be null for defaults; only its
/// `tracker.*` keys matter.
#[no_mangle]
pub unsafe extern "C" fn annocar_track(
    scene: *const AnnocarScene,
    config_toml: *const c_char,
    out: *mut *mut AnnocarScene,
) -> AnnocarStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = config_arg(config_toml)?;
        let tracked = track_scene(&ref_arg(scene, "scene")?.0, &cfg.tracker).map_err(|e| Failure::from(Error::from(e)))?;
        *out = Box::into_raw(Box::new(AnnocarScene(tracked)));
        Ok(())
    })
}

/// Evaluate JSON arrays of ground-truth and prediction scenes. Writes a
/// JSON object `{"car": [...], "ap": [...], "warnings": [...]}`.
#[no_mangle]
pub unsafe extern "C" fn annocar_evaluate_json(
    gt_scenes_json: *const c_char,
    pred_scenes_json: *const c_char,
    config_toml: *const c_char,
    out_json: *mut *mut c_char,
) -> AnnocarStatus {
    guard(|| {
        let out = out_arg(out_json, "out_json")?;
        *out = ptr::null_mut();
        let cfg = config_arg(config_toml)?;
        let scenes = |p: *const c_char, name: &str| -> Result<Vec<Scene>, Failure> {
            let text = str_arg(p, name)?;
            let values: Vec<serde_json::Value> =
                serde_json::from_str(text).map_err(|e| Failure(AnnocarStatus::Data, format!("{name}: {e}")))?;
            values
                .iter()
                .enumerate()
                .map(|(i, v)| parse_scene(&v.to_string(), &format!("{name}[{i}]")).map_err(|e| Failure::from(Error::from(e))))
                .collect()
        };
        let gt = scenes(gt_scenes_json, "gt_scenes_json")?;
        let pred = scenes(pred_scenes_json, "pred_scenes_json")?;
        let ev = evaluate_scenes(&gt, &pred, &cfg).map_err(|e| Failure::from(Error::from(e)))?;
        *out = owned_string(serde_json::to_string(&ev).expect("evaluation serializes"))?;
        Ok(())
    })
}
