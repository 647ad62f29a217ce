//! C ABI over the soliton laboratory.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released by the matching `*_free`. Every fallible call
//! returns an [`NlsStatus`]; the message of the most recent failure on the
//! calling thread is available through [`nls_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nls_fgr::error::Error;
use nls_fgr::fgr::FgrData;
use nls_fgr::harness::{run_command, ExperimentConfig, PointAnalysis, Setup};
use nls_fgr::reduced_ode::scalar_closed_form;
use nls_fgr::C64;

/// Status codes shared by every entry point; 2–4 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlsStatus {
    Ok = 0,
    InvalidArgument = 1,
    AssumptionFailed = 2,
    NonConvergence = 3,
    Usage = 4,
    Io = 5,
    Panic = 6,
}

/// Parsed experiment configuration.
pub struct NlsConfig {
    inner: ExperimentConfig,
}

/// Grid, potential and linear spectrum built from a configuration.
pub struct NlsLab {
    cfg: ExperimentConfig,
    setup: Setup,
}

/// FGR tensors at one branch point.
pub struct NlsFgr {
    data: FgrData,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> NlsStatus {
    match e {
        Error::Assumption(_) => NlsStatus::AssumptionFailed,
        Error::NonConvergence { .. } => NlsStatus::NonConvergence,
        Error::Usage(_) | Error::InvalidInput(_) | Error::GridMismatch => NlsStatus::Usage,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => NlsStatus::Io,
    }
}

fn guard<F: FnOnce() -> Result<(), Error>>(f: F) -> NlsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NlsStatus::Ok,
        Ok(Err(e)) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            NlsStatus::Panic
        }
    }
}

fn invalid(msg: &str) -> NlsStatus {
    set_error(msg.to_string());
    NlsStatus::InvalidArgument
}

unsafe fn read_str<'a>(s: *const c_char) -> Option<&'a str> {
    if s.is_null() {
        return None;
    }
    CStr::from_ptr(s).to_str().ok()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length, or 0 when none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn nls_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
        None => 0,
    })
}

/// Parses a TOML configuration held in memory.
///
/// # Safety
/// `text` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nls_config_from_toml(text: *const c_char, out: *mut *mut NlsConfig) -> NlsStatus {
    if out.is_null() {
        return invalid("null output pointer");
    }
    *out = ptr::null_mut();
    let Some(text) = read_str(text) else {
        return invalid("configuration text is null or not UTF-8");
    };
    guard(|| {
        let inner = ExperimentConfig::from_toml_str(text)?;
        *out = Box::into_raw(Box::new(NlsConfig { inner }));
        Ok(())
    })
}

/// Reads and parses a TOML configuration file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nls_config_load(path: *const c_char, out: *mut *mut NlsConfig) -> NlsStatus {
    if out.is_null() {
        return invalid("null output pointer");
    }
    *out = ptr::null_mut();
    let Some(path) = read_str(path) else {
        return invalid("path is null or not UTF-8");
    };
    guard(|| {
        let inner = ExperimentConfig::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(NlsConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle from `nls_config_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nls_config_free(cfg: *mut NlsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs one CLI command ("spectrum", "branch", ...) with its artifacts.
///
/// # Safety
/// `cfg` must be a live configuration handle and `command` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nls_run_command(cfg: *const NlsConfig, command: *const c_char) -> NlsStatus {
    let Some(cfg) = cfg.as_ref() else {
        return invalid("null configuration handle");
    };
    let Some(cmd) = read_str(command) else {
        return invalid("command is null or not UTF-8");
    };
    guard(|| run_command(cmd, &cfg.inner).map(|_| ()))
}

/// Builds the grid, potential and linear spectrum of a configuration.
///
/// # Safety
/// `cfg` must be a live configuration handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nls_lab_new(cfg: *const NlsConfig, out: *mut *mut NlsLab) -> NlsStatus {
    if out.is_null() {
        return invalid("null output pointer");
    }
    *out = ptr::null_mut();
    let Some(cfg) = cfg.as_ref() else {
        return invalid("null configuration handle");
    };
    guard(|| {
        let setup = Setup::new(&cfg.inner)?;
        *out = Box::into_raw(Box::new(NlsLab {
            cfg: cfg.inner.clone(),
            setup,
        }));
        Ok(())
    })
}

/// # Safety
/// `lab` must be null or a handle from `nls_lab_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nls_lab_free(lab: *mut NlsLab) {
    if !lab.is_null() {
        drop(Box::from_raw(lab));
    }
}

/// Writes up to `cap` bound-state energies and stores the total count in `count`.
///
/// # Safety
/// `lab` must be live, `energies` null or valid for `cap` doubles, `count` valid.
#[no_mangle]
pub unsafe extern "C" fn nls_lab_energies(lab: *const NlsLab, energies: *mut f64, cap: usize, count: *mut usize) -> NlsStatus {
    let Some(lab) = lab.as_ref() else {
        return invalid("null lab handle");
    };
    if count.is_null() {
        return invalid("null count pointer");
    }
    let e = &lab.setup.spec.energies;
    *count = e.len();
    if !energies.is_null() {
        ptr::copy_nonoverlapping(e.as_ptr(), energies, e.len().min(cap));
    }
    NlsStatus::Ok
}

/// 1 when the trapped-level hypotheses hold, 0 otherwise.
///
/// # Safety
/// `lab` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nls_lab_assumptions_hold(lab: *const NlsLab) -> i32 {
    lab.as_ref().map(|l| l.setup.assumptions.passed() as i32).unwrap_or(0)
}

/// Computes the FGR tensors at the branch point λ.
///
/// # Safety
/// `lab` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nls_fgr_compute(lab: *const NlsLab, lambda: f64, out: *mut *mut NlsFgr) -> NlsStatus {
    if out.is_null() {
        return invalid("null output pointer");
    }
    *out = ptr::null_mut();
    let Some(lab) = lab.as_ref() else {
        return invalid("null lab handle");
    };
    guard(|| {
        lab.setup.require_assumptions()?;
        let a = PointAnalysis::new(&lab.setup, lambda, lab.cfg.nonlinearity.sigma)?;
        let (data, _) = a.fgr(&lab.setup, &lab.cfg)?;
        *out = Box::into_raw(Box::new(NlsFgr { data }));
        Ok(())
    })
}

/// # Safety
/// `fgr` must be null or a handle from `nls_fgr_compute` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nls_fgr_free(fgr: *mut NlsFgr) {
    if !fgr.is_null() {
        drop(Box::from_raw(fgr));
    }
}

/// Number of neutral modes described by the tensors.
///
/// # Safety
/// `fgr` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nls_fgr_modes(fgr: *const NlsFgr) -> usize {
    fgr.as_ref().map(|f| f.data.energies.len()).unwrap_or(0)
}

/// δ at the branch point of the tensors.
///
/// # Safety
/// `fgr` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nls_fgr_delta(fgr: *const NlsFgr) -> f64 {
    fgr.as_ref().map(|f| f.data.delta).unwrap_or(f64::NAN)
}

/// Evaluates z*Γz (`leading` = 0) or z*Γ₀z (`leading` ≠ 0) at z = re + i·im.
///
/// # Safety
/// `fgr` must be live, `re` and `im` valid for `n` doubles, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn nls_fgr_form(
    fgr: *const NlsFgr,
    re: *const f64,
    im: *const f64,
    n: usize,
    leading: i32,
    out: *mut f64,
) -> NlsStatus {
    let Some(fgr) = fgr.as_ref() else {
        return invalid("null FGR handle");
    };
    if re.is_null() || im.is_null() || out.is_null() {
        return invalid("null array argument");
    }
    if n != fgr.data.energies.len() {
        return invalid("z length differs from the number of neutral modes");
    }
    let re = std::slice::from_raw_parts(re, n);
    let im = std::slice::from_raw_parts(im, n);
    let z: Vec<C64> = re.iter().zip(im).map(|(a, b)| C64::new(*a, *b)).collect();
    *out = if leading != 0 {
        fgr.data.gamma0_form(&z)
    } else {
        fgr.data.gamma_form(&z)
    };
    NlsStatus::Ok
}

/// |z(t)|² = (|z₀|⁻² + 2γ̂t)⁻¹.
#[no_mangle]
pub extern "C" fn nls_scalar_decay(z0_sq: f64, gamma_hat: f64, t: f64) -> f64 {
    scalar_closed_form(z0_sq, gamma_hat, t)
}
