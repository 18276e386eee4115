//! C interface to `bqsolve`.
//!
//! Every entry point returns a [`BqStatus`]. On failure the message is kept
//! per thread and can be read with [`bq_last_error_message`]. Objects are
//! handed out as opaque pointers and must be released with the matching
//! `*_free` function. Panics never cross the boundary; they surface as
//! `BQ_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use bqsolve::config::{load_kernel, load_problem};
use bqsolve::error::Error;
use bqsolve::grid::{SpectralField, SpectralGrid};
use bqsolve::io::{read_snapshot, Snapshot};
use bqsolve::linear::solve_linear;
use bqsolve::nonlinear::{solve_nonlinear, Termination};
use bqsolve::nonlocal::{check_admissibility, NonlocalKernel};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Symbols or kernels failed the admissibility checks.
    Inadmissible = 3,
    NonContraction = 4,
    NonFinite = 5,
    Io = 6,
    Config = 7,
    OutOfRange = 8,
    Internal = 99,
}

/// How a solve ended.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BqTermination {
    /// Linear solve; no windows.
    Linear = 0,
    HorizonReached = 1,
    BlowUpDetected = 2,
    MaxWindows = 3,
}

/// Opaque spectral grid.
pub struct BqGrid {
    grid: Arc<SpectralGrid>,
}

/// Opaque solution: fields at the requested output times.
pub struct BqSolution {
    times: Vec<f64>,
    u: Vec<SpectralField>,
    ut: Vec<SpectralField>,
    termination: BqTermination,
    crossing_time: f64,
}

/// Opaque decoded snapshot.
pub struct BqSnapshot {
    snapshot: Snapshot,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> BqStatus {
    match e {
        Error::InadmissibleSymbols { .. } | Error::InadmissibleKernels { .. } => BqStatus::Inadmissible,
        Error::NonContraction(_) => BqStatus::NonContraction,
        Error::NonFinite(_) | Error::HyperbolicGrowth { .. } => BqStatus::NonFinite,
        Error::Io(_) | Error::Snapshot(_) => BqStatus::Io,
        Error::Config(_) | Error::Unknown { .. } => BqStatus::Config,
        _ => BqStatus::InvalidArgument,
    }
}

/// Runs `f`, recording errors and catching panics.
fn guard(f: impl FnOnce() -> Result<(), (BqStatus, String)>) -> BqStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BqStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            BqStatus::Internal
        }
    }
}

fn lib(e: Error) -> (BqStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (BqStatus, String) {
    (BqStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (BqStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (BqStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn bq_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a grid on `[-half_width, half_width)^n` with `points[d]` points per axis.
///
/// # Safety
/// `points` must reference `n` readable values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bq_grid_create(
    n: usize,
    points: *const usize,
    half_width: f64,
    out: *mut *mut BqGrid,
) -> BqStatus {
    guard(|| {
        if points.is_null() {
            return Err(null("points"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if !(1..=3).contains(&n) {
            return Err((BqStatus::InvalidArgument, format!("dimension {n} outside 1..=3")));
        }
        let pts = std::slice::from_raw_parts(points, n);
        let grid = SpectralGrid::new(n, pts, half_width).map_err(lib)?;
        *out = Box::into_raw(Box::new(BqGrid { grid }));
        Ok(())
    })
}

/// Number of lattice sites.
///
/// # Safety
/// `grid` must come from [`bq_grid_create`] or be null.
#[no_mangle]
pub unsafe extern "C" fn bq_grid_len(grid: *const BqGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.grid.len())
}

/// # Safety
/// `grid` must come from [`bq_grid_create`] or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn bq_grid_free(grid: *mut BqGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Loads a problem file and solves the linear problem at its output times.
///
/// # Safety
/// `problem_path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bq_solve_linear_file(problem_path: *const c_char, out: *mut *mut BqSolution) -> BqStatus {
    guard(|| {
        let path = path_arg(problem_path, "problem_path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = load_problem(&path).map_err(lib)?;
        let sol = solve_linear(&cfg.linear, &cfg.linear_controls).map_err(lib)?;
        *out = Box::into_raw(Box::new(BqSolution {
            times: sol.times,
            u: sol.u,
            ut: sol.ut,
            termination: BqTermination::Linear,
            crossing_time: f64::NAN,
        }));
        Ok(())
    })
}

/// Loads a problem file and solves the nonlinear problem up to `horizon`.
/// A detected blow-up is not an error: query [`bq_solution_termination`].
///
/// # Safety
/// `problem_path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bq_solve_file(
    problem_path: *const c_char,
    horizon: f64,
    out: *mut *mut BqSolution,
) -> BqStatus {
    guard(|| {
        let path = path_arg(problem_path, "problem_path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = load_problem(&path).map_err(lib)?;
        let run = solve_nonlinear(&cfg.nonlinear(), horizon, &cfg.nonlinear_controls).map_err(lib)?;
        let mut times = Vec::new();
        let mut u = Vec::new();
        let mut ut = Vec::new();
        for s in &run.outputs {
            times.push(s.t);
            u.push(run.field(&s.u).map_err(lib)?);
            ut.push(run.field(&s.ut).map_err(lib)?);
        }
        let (termination, crossing_time) = match &run.termination {
            Termination::HorizonReached => (BqTermination::HorizonReached, f64::NAN),
            Termination::BlowUpDetected { crossing_time, .. } => {
                (BqTermination::BlowUpDetected, crossing_time.unwrap_or(run.t_end))
            }
            Termination::MaxWindows => (BqTermination::MaxWindows, f64::NAN),
        };
        *out = Box::into_raw(Box::new(BqSolution {
            times,
            u,
            ut,
            termination,
            crossing_time,
        }));
        Ok(())
    })
}

/// Number of stored output times.
///
/// # Safety
/// `sol` must come from a solve function or be null.
#[no_mangle]
pub unsafe extern "C" fn bq_solution_count(sol: *const BqSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.times.len())
}

/// Number of lattice sites per stored field.
///
/// # Safety
/// `sol` must come from a solve function or be null.
#[no_mangle]
pub unsafe extern "C" fn bq_solution_len(sol: *const BqSolution) -> usize {
    sol.as_ref().and_then(|s| s.u.first()).map_or(0, |f| f.values().len())
}

/// # Safety
/// `sol` must come from a solve function; `t` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bq_solution_time(sol: *const BqSolution, index: usize, t: *mut f64) -> BqStatus {
    guard(|| {
        let s = sol.as_ref().ok_or_else(|| null("solution"))?;
        if t.is_null() {
            return Err(null("t"));
        }
        *t = *s
            .times
            .get(index)
            .ok_or_else(|| (BqStatus::OutOfRange, format!("index {index} of {}", s.times.len())))?;
        Ok(())
    })
}

/// Termination reason; for blow-up, `crossing_time` receives the first
/// time the monitor exceeded its ceiling (NaN otherwise). `crossing_time`
/// may be null.
///
/// # Safety
/// `sol` must come from a solve function.
#[no_mangle]
pub unsafe extern "C" fn bq_solution_termination(
    sol: *const BqSolution,
    termination: *mut BqTermination,
    crossing_time: *mut f64,
) -> BqStatus {
    guard(|| {
        let s = sol.as_ref().ok_or_else(|| null("solution"))?;
        if termination.is_null() {
            return Err(null("termination"));
        }
        *termination = s.termination;
        if !crossing_time.is_null() {
            *crossing_time = s.crossing_time;
        }
        Ok(())
    })
}

unsafe fn copy_field(
    sol: *const BqSolution,
    index: usize,
    derivative: bool,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> BqStatus {
    guard(|| {
        let s = sol.as_ref().ok_or_else(|| null("solution"))?;
        if re.is_null() || im.is_null() {
            return Err(null("output buffer"));
        }
        let fields = if derivative { &s.ut } else { &s.u };
        let f = fields
            .get(index)
            .ok_or_else(|| (BqStatus::OutOfRange, format!("index {index} of {}", fields.len())))?;
        let values = f.values();
        if len != values.len() {
            return Err((
                BqStatus::InvalidArgument,
                format!("buffer length {len}, field has {}", values.len()),
            ));
        }
        let re = std::slice::from_raw_parts_mut(re, len);
        let im = std::slice::from_raw_parts_mut(im, len);
        for (i, v) in values.iter().enumerate() {
            re[i] = v.re;
            im[i] = v.im;
        }
        Ok(())
    })
}

/// Copies physical `u` at output `index` into `re`/`im` (each `len` long).
///
/// # Safety
/// `re` and `im` must each hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bq_solution_copy_u(
    sol: *const BqSolution,
    index: usize,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> BqStatus {
    copy_field(sol, index, false, re, im, len)
}

/// Copies physical `u_t` at output `index`.
///
/// # Safety
/// `re` and `im` must each hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bq_solution_copy_ut(
    sol: *const BqSolution,
    index: usize,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> BqStatus {
    copy_field(sol, index, true, re, im, len)
}

/// # Safety
/// `sol` must come from a solve function or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn bq_solution_free(sol: *mut BqSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Invertibility margin of a kernel pair. Either path may be null for the
/// zero kernel, but not both.
///
/// # Safety
/// Non-null paths must be nul-terminated; `margin` and `admissible` writable.
#[no_mangle]
pub unsafe extern "C" fn bq_check_kernels_file(
    alpha_path: *const c_char,
    beta_path: *const c_char,
    margin: *mut f64,
    admissible: *mut c_int,
) -> BqStatus {
    guard(|| {
        if margin.is_null() || admissible.is_null() {
            return Err(null("output"));
        }
        let load = |p: *const c_char, what: &str| -> Result<Option<NonlocalKernel>, (BqStatus, String)> {
            if p.is_null() {
                Ok(None)
            } else {
                Ok(Some(load_kernel(&path_arg(p, what)?).map_err(lib)?))
            }
        };
        let a = load(alpha_path, "alpha_path")?;
        let b = load(beta_path, "beta_path")?;
        let horizon = a
            .as_ref()
            .or(b.as_ref())
            .map(NonlocalKernel::horizon)
            .ok_or_else(|| null("both kernel paths"))?;
        let zero = || NonlocalKernel::zero(horizon).map_err(lib);
        let a = match a {
            Some(k) => k,
            None => zero()?,
        };
        let b = match b {
            Some(k) => k,
            None => zero()?,
        };
        let adm = check_admissibility(&a, &b).map_err(lib)?;
        *margin = adm.margin;
        *admissible = c_int::from(adm.admissible);
        Ok(())
    })
}

/// Reads a BQF1 snapshot file.
///
/// # Safety
/// `path` must be nul-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bq_snapshot_read(path: *const c_char, out: *mut *mut BqSnapshot) -> BqStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let snapshot = read_snapshot(&path).map_err(lib)?;
        *out = Box::into_raw(Box::new(BqSnapshot { snapshot }));
        Ok(())
    })
}

/// Writes up to `cap` per-axis point counts into `points` and returns the
/// dimension (0 for a null handle).
///
/// # Safety
/// `points` must hold `cap` writable values or be null.
#[no_mangle]
pub unsafe extern "C" fn bq_snapshot_dims(snap: *const BqSnapshot, points: *mut u32, cap: usize) -> usize {
    let Some(s) = snap.as_ref() else { return 0 };
    if !points.is_null() {
        for (i, &p) in s.snapshot.points.iter().take(cap).enumerate() {
            *points.add(i) = p;
        }
    }
    s.snapshot.points.len()
}

/// # Safety
/// `snap` must come from [`bq_snapshot_read`] or be null.
#[no_mangle]
pub unsafe extern "C" fn bq_snapshot_len(snap: *const BqSnapshot) -> usize {
    snap.as_ref().map_or(0, |s| s.snapshot.values.len())
}

/// # Safety
/// `re` and `im` must each hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bq_snapshot_copy(snap: *const BqSnapshot, re: *mut f64, im: *mut f64, len: usize) -> BqStatus {
    guard(|| {
        let s = snap.as_ref().ok_or_else(|| null("snapshot"))?;
        if re.is_null() || im.is_null() {
            return Err(null("output buffer"));
        }
        let values = &s.snapshot.values;
        if len != values.len() {
            return Err((
                BqStatus::InvalidArgument,
                format!("buffer length {len}, snapshot has {}", values.len()),
            ));
        }
        for (i, v) in values.iter().enumerate() {
            *re.add(i) = v.re;
            *im.add(i) = v.im;
        }
        Ok(())
    })
}

/// # Safety
/// `snap` must come from [`bq_snapshot_read`] or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn bq_snapshot_free(snap: *mut BqSnapshot) {
    if !snap.is_null() {
        drop(Box::from_raw(snap));
    }
}
