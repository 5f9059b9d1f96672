//! C ABI over `phlab`.
//!
//! Models and reports are opaque heap handles released with their `_free`
//! function. Every call returns a [`PhlabStatus`]; on failure the message is
//! kept per thread and read with [`phlab_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use phlab::error::Error;
use phlab::experiment::{render_report, run_experiment, EquivalenceReport, ExperimentConfig, ReportFormat};
use phlab::foliation::{su_defect, TraceOptions};
use phlab::model::{MapModel, TrigField, TrigMode};
use phlab::orbits::exponent_spectrum;
use phlab::torus::{classify_automorphism, IntMatrix, ToralAutomorphism, Vec3};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    NotPartiallyHyperbolic = 3,
    NotCertified = 4,
    ConfigInvalid = 5,
    Numerical = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhlabFamily {
    Linear = 0,
    Perturbed = 1,
    Conjugated = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhlabFormat {
    Json = 0,
    Csv = 1,
}

/// `amplitude * sin(2 pi k.x + phase)`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct PhlabMode {
    pub k: [i64; 3],
    pub amplitude: [f64; 3],
    pub phase: f64,
}

/// Opaque model handle.
pub struct PhlabModel {
    inner: MapModel,
}

/// Opaque report handle.
pub struct PhlabReport {
    inner: EquivalenceReport,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PhlabStatus {
    match e {
        Error::InvalidInput(_) | Error::Overflow(_) | Error::CountExceedsLimit { .. } => PhlabStatus::InvalidInput,
        Error::NotPartiallyHyperbolic(_) => PhlabStatus::NotPartiallyHyperbolic,
        Error::NotCertified { .. } => PhlabStatus::NotCertified,
        Error::ConfigInvalid(_) | Error::Json(_) => PhlabStatus::ConfigInvalid,
        Error::Io(_) | Error::Csv(_) => PhlabStatus::Io,
        _ => PhlabStatus::Numerical,
    }
}

/// Runs `f`, mapping errors and panics to a status and the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (PhlabStatus, String)>) -> PhlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PhlabStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside phlab".into());
            PhlabStatus::Panic
        }
    }
}

fn lib(e: Error) -> (PhlabStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (PhlabStatus, String) {
    (PhlabStatus::NullPointer, format!("{what} is null"))
}

unsafe fn matrix_from(p: *const i64) -> Result<[[i64; 3]; 3], (PhlabStatus, String)> {
    if p.is_null() {
        return Err(null("matrix"));
    }
    let v = std::slice::from_raw_parts(p, 9);
    Ok([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
}

unsafe fn point_from(p: *const f64) -> Result<Vec3, (PhlabStatus, String)> {
    if p.is_null() {
        return Err(null("point"));
    }
    let v = std::slice::from_raw_parts(p, 3);
    Ok(Vec3::new(v[0], v[1], v[2]))
}

unsafe fn model_ref<'a>(m: *const PhlabModel) -> Result<&'a MapModel, (PhlabStatus, String)> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

/// Copies `s` with a trailing NUL into `buf` when it fits. `required` receives the
/// size including the NUL.
unsafe fn copy_out(s: &[u8], buf: *mut c_char, len: usize, required: *mut usize) -> Result<(), (PhlabStatus, String)> {
    if !required.is_null() {
        *required = s.len() + 1;
    }
    if buf.is_null() || len < s.len() + 1 {
        return Err((PhlabStatus::BufferTooSmall, format!("{} bytes needed", s.len() + 1)));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn phlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failed call on this thread (empty after a success).
///
/// # Safety
/// `buf` must hold `len` bytes or be null; `required` may be null.
#[no_mangle]
pub unsafe extern "C" fn phlab_last_error(buf: *mut c_char, len: usize, required: *mut usize) -> PhlabStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    match copy_out(msg.as_bytes(), buf, len, required) {
        Ok(()) => PhlabStatus::Ok,
        Err((s, _)) => s,
    }
}

/// Writes the `Classification` code of a row-major matrix: 0 PH_ANOSOV,
/// 1 ANOSOV_NON_PH, 2 NOT_ANOSOV, 3 NOT_UNIMODULAR.
///
/// # Safety
/// `matrix` must point to 9 integers and `out` to one.
#[no_mangle]
pub unsafe extern "C" fn phlab_classify(matrix: *const i64, out: *mut i32) -> PhlabStatus {
    guard(|| {
        let rows = matrix_from(matrix)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = classify_automorphism(&IntMatrix(rows)) as i32;
        Ok(())
    })
}

/// Builds a model. `modes` may be null when `n_modes` is 0.
///
/// # Safety
/// `matrix` must point to 9 integers, `modes` to `n_modes` entries and `out` to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn phlab_model_new(
    matrix: *const i64,
    family: PhlabFamily,
    modes: *const PhlabMode,
    n_modes: usize,
    epsilon: f64,
    out: *mut *mut PhlabModel,
) -> PhlabStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let base = ToralAutomorphism::from_rows(matrix_from(matrix)?).map_err(lib)?;
        if n_modes > 0 && modes.is_null() {
            return Err(null("modes"));
        }
        let field = TrigField::new(match n_modes {
            0 => Vec::new(),
            n => std::slice::from_raw_parts(modes, n)
                .iter()
                .map(|m| TrigMode { k: m.k, amplitude: m.amplitude, phase: m.phase })
                .collect(),
        });
        if !epsilon.is_finite() {
            return Err((PhlabStatus::InvalidInput, "epsilon must be finite".into()));
        }
        let model = match family {
            PhlabFamily::Linear => MapModel::linear(base),
            PhlabFamily::Perturbed => MapModel::perturbed(base, field, epsilon),
            PhlabFamily::Conjugated => MapModel::conjugated(base, field, epsilon),
        };
        if !model.is_certified() {
            return Err(lib(Error::NotCertified { margin: model.invertibility_margin() }));
        }
        *out = Box::into_raw(Box::new(PhlabModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`phlab_model_new`] and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn phlab_model_free(model: *mut PhlabModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Ascending eigenvalues of the base automorphism.
///
/// # Safety
/// `out` must hold 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn phlab_model_eigenvalues(model: *const PhlabModel, out: *mut f64) -> PhlabStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(m.base().eigenvalues().as_ptr(), out, 3);
        Ok(())
    })
}

/// Map on the universal cover.
///
/// # Safety
/// `x` and `out` must hold 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn phlab_model_eval(model: *const PhlabModel, x: *const f64, out: *mut f64) -> PhlabStatus {
    guard(|| {
        let m = model_ref(model)?;
        let y = m.eval_lift(&point_from(x)?);
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(y.as_ptr(), out, 3);
        Ok(())
    })
}

/// Spread of periodic center multipliers over minimal periods `1..=n_max`.
///
/// # Safety
/// `dispersion` and `orbit_count` must be valid; `orbit_count` may be null.
#[no_mangle]
pub unsafe extern "C" fn phlab_spectrum(
    model: *const PhlabModel,
    n_max: usize,
    dispersion: *mut f64,
    orbit_count: *mut usize,
) -> PhlabStatus {
    guard(|| {
        let m = model_ref(model)?;
        let d = dispersion.as_mut().ok_or_else(|| null("dispersion"))?;
        if n_max == 0 {
            return Err((PhlabStatus::InvalidInput, "n_max must be positive".into()));
        }
        let rep = exponent_spectrum(m, n_max, 1_000_000).map_err(lib)?;
        if rep.partial {
            return Err((PhlabStatus::Numerical, format!("{} orbits failed to continue", rep.skipped.len())));
        }
        *d = rep.dispersion;
        if let Some(c) = orbit_count.as_mut() {
            *c = rep.values.len();
        }
        Ok(())
    })
}

/// su-closure defect at `x` with leg lengths `l_s`, `l_u` and the default trace step.
///
/// # Safety
/// `x` must hold 3 doubles and `out` one.
#[no_mangle]
pub unsafe extern "C" fn phlab_su_defect(
    model: *const PhlabModel,
    x: *const f64,
    l_s: f64,
    l_u: f64,
    out: *mut f64,
) -> PhlabStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = point_from(x)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = su_defect(m, &x, l_s, l_u, &TraceOptions::default()).map_err(lib)?.defect;
        Ok(())
    })
}

/// Parses a JSON experiment config and runs it.
///
/// # Safety
/// `config_json` must be a NUL-terminated UTF-8 string and `out` a handle slot.
#[no_mangle]
pub unsafe extern "C" fn phlab_report_run(config_json: *const c_char, out: *mut *mut PhlabReport) -> PhlabStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        if config_json.is_null() {
            return Err(null("config_json"));
        }
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|e| (PhlabStatus::ConfigInvalid, format!("config is not UTF-8: {e}")))?;
        let cfg: ExperimentConfig = text.parse().map_err(lib)?;
        let report = run_experiment(&cfg).map_err(lib)?;
        *out = Box::into_raw(Box::new(PhlabReport { inner: report }));
        Ok(())
    })
}

/// Serializes a report. Call with a null buffer to learn the size in `required`.
///
/// # Safety
/// `buf` must hold `len` bytes or be null; `required` may be null.
#[no_mangle]
pub unsafe extern "C" fn phlab_report_render(
    report: *const PhlabReport,
    format: PhlabFormat,
    buf: *mut c_char,
    len: usize,
    required: *mut usize,
) -> PhlabStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        let f = match format {
            PhlabFormat::Json => ReportFormat::Json,
            PhlabFormat::Csv => ReportFormat::Csv,
        };
        let bytes = render_report(&r.inner, f).map_err(lib)?;
        copy_out(&bytes, buf, len, required)
    })
}

/// Coherence of the report; NaN when no cell carries a verdict.
///
/// # Safety
/// `out` must point to one double.
#[no_mangle]
pub unsafe extern "C" fn phlab_report_coherence(report: *const PhlabReport, out: *mut f64) -> PhlabStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = r.inner.coherence.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Number of sweep cells in the report.
///
/// # Safety
/// `out` must point to one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn phlab_report_cells(report: *const PhlabReport, out: *mut usize) -> PhlabStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = r.inner.cells.len();
        Ok(())
    })
}

/// # Safety
/// `report` must come from [`phlab_report_run`] and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn phlab_report_free(report: *mut PhlabReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
