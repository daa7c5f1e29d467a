//! C interface to `gridsens`.
//!
//! Objects are opaque handles created by `gs_*_load`/`gs_solve`/`gs_linearize`
//! and released with the matching `*_free`. Every fallible call returns a
//! [`GsStatus`]; on failure `gs_last_error_message` describes the error for
//! the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gridsens::case::{parse_case, read_case, GridCase};
use gridsens::powerflow::{linearize, solve_ac_powerflow, LinearizationMode, LinearizedSystem, PowerFlowOptions, PowerFlowSolution};
use gridsens::screening::{screen, ScreenOptions};
use gridsens::sensitivity::{analyze_outage, Metric, TerminalSide};
use gridsens::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsStatus {
    Ok = 0,
    NullPointer = 1,
    Io = 2,
    Parse = 3,
    InvalidArgument = 4,
    NotConverged = 5,
    Singular = 6,
    Islanding = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsMode {
    Full = 0,
    Network = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsMetric {
    VmagInf = 0,
    Vmag2 = 1,
    ImagInf = 2,
    PlineInf = 3,
}

/// A parsed case.
pub struct GsCase(GridCase);

/// A converged AC power flow.
pub struct GsSolution(PowerFlowSolution);

/// A factorized linear model at a solution. Keeps its solution alive.
pub struct GsLinearization {
    sol: PowerFlowSolution,
    lin: LinearizedSystem,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> GsStatus {
    match e {
        Error::Io { .. } => GsStatus::Io,
        Error::Syntax { .. } | Error::InvalidCase(_) => GsStatus::Parse,
        Error::NoSuchBranch(_) | Error::BranchOpen(_) | Error::NoSuchBus(_) | Error::InvalidArgument(_) => {
            GsStatus::InvalidArgument
        }
        Error::Diverged { .. } | Error::MaxIterations { .. } => GsStatus::NotConverged,
        Error::Singular(_) | Error::ZeroMagnitude(_) => GsStatus::Singular,
        Error::Islanding(_) => GsStatus::Islanding,
    }
}

fn fail(status: GsStatus, msg: impl Into<String>) -> GsStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), GsStatus>) -> GsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GsStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(GsStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: gridsens::Result<T>) -> Result<T, GsStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, GsStatus> {
    p.as_ref().ok_or_else(|| fail(GsStatus::NullPointer, "null pointer argument"))
}

unsafe fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, GsStatus> {
    p.as_mut().ok_or_else(|| fail(GsStatus::NullPointer, "null output pointer"))
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, GsStatus> {
    if p.is_null() {
        return Err(fail(GsStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(GsStatus::InvalidArgument, "string is not UTF-8"))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, needed: usize) -> Result<&'a mut [f64], GsStatus> {
    if len < needed {
        return Err(fail(GsStatus::BufferTooSmall, format!("buffer holds {len}, need {needed}")));
    }
    if p.is_null() {
        return Err(fail(GsStatus::NullPointer, "null buffer"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn gs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Reads a MATPOWER case file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_case_load(path: *const c_char, out: *mut *mut GsCase) -> GsStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = ptr::null_mut();
        let case = lift(read_case(c_str(path)?))?;
        *out = Box::into_raw(Box::new(GsCase(case)));
        Ok(())
    })
}

/// Parses MATPOWER case text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_case_parse(text: *const c_char, out: *mut *mut GsCase) -> GsStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = ptr::null_mut();
        let case = lift(parse_case(c_str(text)?))?;
        *out = Box::into_raw(Box::new(GsCase(case)));
        Ok(())
    })
}

/// # Safety
/// `case` must come from `gs_case_load`/`gs_case_parse` or be null.
#[no_mangle]
pub unsafe extern "C" fn gs_case_free(case: *mut GsCase) {
    if !case.is_null() {
        drop(Box::from_raw(case));
    }
}

/// # Safety
/// `case` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn gs_case_bus_count(case: *const GsCase) -> usize {
    case.as_ref().map_or(0, |c| c.0.n())
}

/// # Safety
/// `case` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn gs_case_branch_count(case: *const GsCase) -> usize {
    case.as_ref().map_or(0, |c| c.0.branches.len())
}

/// Solves the AC power flow from flat start. `tol <= 0` or `max_iter == 0`
/// select the defaults.
///
/// # Safety
/// `case` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_solve(case: *const GsCase, tol: f64, max_iter: usize, out: *mut *mut GsSolution) -> GsStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = ptr::null_mut();
        let case = deref(case)?;
        let mut opts = PowerFlowOptions::default();
        if tol > 0.0 {
            opts.tol = tol;
        }
        if max_iter > 0 {
            opts.max_iter = max_iter;
        }
        let sol = lift(solve_ac_powerflow(&case.0, &opts))?;
        *out = Box::into_raw(Box::new(GsSolution(sol)));
        Ok(())
    })
}

/// # Safety
/// `sol` must come from `gs_solve` or be null.
#[no_mangle]
pub unsafe extern "C" fn gs_solution_free(sol: *mut GsSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// # Safety
/// `sol` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn gs_solution_iterations(sol: *const GsSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.0.iterations)
}

/// Writes bus voltages as interleaved `(re, im)` pairs; `len` must be at least
/// twice the bus count.
///
/// # Safety
/// `sol` must be a valid handle and `buf` point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gs_solution_voltages(sol: *const GsSolution, buf: *mut f64, len: usize) -> GsStatus {
    guard(|| {
        let sol = deref(sol)?;
        let v = sol.0.voltage.as_slice();
        out_slice(buf, len, v.len())?[..v.len()].copy_from_slice(v);
        Ok(())
    })
}

/// Builds and factorizes the linear model at a solution.
///
/// # Safety
/// `sol` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_linearize(sol: *const GsSolution, mode: GsMode, out: *mut *mut GsLinearization) -> GsStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = ptr::null_mut();
        let sol = deref(sol)?;
        let mode = match mode {
            GsMode::Full => LinearizationMode::Full,
            GsMode::Network => LinearizationMode::Network,
        };
        let lin = lift(linearize(&sol.0, mode))?;
        *out = Box::into_raw(Box::new(GsLinearization { sol: sol.0.clone(), lin }));
        Ok(())
    })
}

/// # Safety
/// `lin` must come from `gs_linearize` or be null.
#[no_mangle]
pub unsafe extern "C" fn gs_linearization_free(lin: *mut GsLinearization) {
    if !lin.is_null() {
        drop(Box::from_raw(lin));
    }
}

fn metric(m: GsMetric) -> Metric {
    match m {
        GsMetric::VmagInf => Metric::VmagInf,
        GsMetric::Vmag2 => Metric::Vmag2,
        GsMetric::ImagInf => Metric::ImagInf,
        GsMetric::PlineInf => Metric::PlineInf,
    }
}

/// Predicted impact of removing `branch` (zero-based). On success
/// `*islanding` is set; when it is 0, `*severity` holds the metric value and
/// `dvmag` (if non-null, `len` ≥ bus count) receives per-bus `Δ|V|`. Islanding
/// outages report an infinite severity.
///
/// # Safety
/// Handles and output pointers must be valid; `dvmag` may be null.
#[no_mangle]
pub unsafe extern "C" fn gs_outage_impact(
    lin: *const GsLinearization,
    branch: usize,
    metric_kind: GsMetric,
    islanding: *mut i32,
    severity: *mut f64,
    dvmag: *mut f64,
    len: usize,
) -> GsStatus {
    guard(|| {
        let l = deref(lin)?;
        let islanding = out_ptr(islanding)?;
        let severity = out_ptr(severity)?;
        let impact = lift(analyze_outage(&l.sol, &l.lin, branch, metric(metric_kind), TerminalSide::From))?;
        *islanding = impact.islanding as i32;
        *severity = impact.severity;
        if let (false, Some(d)) = (dvmag.is_null(), impact.delta_vmag.as_ref()) {
            out_slice(dvmag, len, d.len())?[..d.len()].copy_from_slice(d);
        }
        Ok(())
    })
}

/// Screens every closed branch. Writes the ranked outages (islanding first,
/// then severity descending) into the three arrays of capacity `cap` and the
/// number of entries into `*count`. If `cap` is too small nothing but
/// `*count` is written and `GS_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// Handles and pointers must be valid for `cap` elements.
#[no_mangle]
pub unsafe extern "C" fn gs_screen(
    lin: *const GsLinearization,
    metric_kind: GsMetric,
    branches: *mut usize,
    severities: *mut f64,
    islanding: *mut i32,
    cap: usize,
    count: *mut usize,
) -> GsStatus {
    guard(|| {
        let l = deref(lin)?;
        let count = out_ptr(count)?;
        let opts = ScreenOptions { metric: metric(metric_kind), ..ScreenOptions::default() };
        let report = screen(&l.sol, &l.lin, &opts);
        *count = report.entries.len();
        if cap < report.entries.len() {
            return Err(fail(GsStatus::BufferTooSmall, format!("capacity {cap}, need {}", report.entries.len())));
        }
        if branches.is_null() || severities.is_null() || islanding.is_null() {
            return Err(fail(GsStatus::NullPointer, "null output array"));
        }
        for (k, e) in report.entries.iter().enumerate() {
            *branches.add(k) = e.branch;
            *severities.add(k) = e.severity;
            *islanding.add(k) = e.islanding as i32;
        }
        Ok(())
    })
}
