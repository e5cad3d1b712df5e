//! C ABI over the simulator: scenarios, episodes and occupancy estimates
//! behind opaque handles.
//!
//! Every fallible function returns a [`BrStatus`]. On failure a message is
//! stored per thread and can be read with [`br_last_error`]. Handles and
//! strings returned by this library must be released with the matching
//! `*_free` function; passing NULL to a free function is a no-op. Panics
//! never cross the boundary; they surface as `BR_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use blindreach::bench::{ScenarioOverrides, Variant};
use blindreach::executive::{run_episode, EpisodeReport, Scenario};
use blindreach::occupancy::{predict, OccupancyEstimate, PredictorConfig, PredictorKind};
use blindreach::workspace::{CellSet, Domain, GridSpec};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed JSON, unknown names or parameters failing validation.
    InvalidArgument = 3,
    /// A caller buffer has the wrong length.
    BufferSize = 4,
    OutOfGrid = 5,
    Internal = 6,
}

/// Opaque scenario handle.
pub struct BrScenario(Scenario);

/// Opaque episode report handle.
pub struct BrReport(EpisodeReport);

/// Opaque occupancy estimate handle.
pub struct BrEstimate(OccupancyEstimate);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: BrStatus, msg: impl Into<String>) -> BrStatus {
    set_error(msg);
    status
}

fn status_of(e: &blindreach::Error) -> BrStatus {
    match e {
        blindreach::Error::OutOfGrid(_) => BrStatus::OutOfGrid,
        _ => BrStatus::InvalidArgument,
    }
}

/// Runs `f`, converting panics into `Internal`.
fn guard(f: impl FnOnce() -> BrStatus) -> BrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(BrStatus::Internal, format!("internal error: {msg}"))
        }
    }
}

/// # Safety
/// `s` must be NULL or a valid NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, BrStatus> {
    if s.is_null() {
        return Err(fail(BrStatus::NullPointer, "string argument is NULL"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(BrStatus::InvalidUtf8, "string argument is not UTF-8"))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! core_tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return fail(status_of(&e), e.to_string()),
        }
    };
}

macro_rules! check_out {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(BrStatus::NullPointer, concat!(stringify!($p), " is NULL"));
        })+
    };
}

/// Message for the last failure on this thread, or NULL if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn br_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn br_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn br_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a scenario from its JSON form.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn br_scenario_from_json(json: *const c_char, out: *mut *mut BrScenario) -> BrStatus {
    guard(|| {
        check_out!(out);
        let text = tri!(read_str(json));
        let sc: Scenario = match serde_json::from_str(text) {
            Ok(sc) => sc,
            Err(e) => return fail(BrStatus::InvalidArgument, format!("scenario JSON: {e}")),
        };
        core_tri!(sc.validate());
        *out = Box::into_raw(Box::new(BrScenario(sc)));
        BrStatus::Ok
    })
}

/// Generates a solvable benchmark instance on the desk grid with default
/// parameters. `domain` is "pipe" or "shelf"; `variant` is a label such as
/// "chs" or "cmax+structural".
///
/// # Safety
/// String arguments must be valid NUL-terminated strings and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn br_scenario_generate(
    domain: *const c_char,
    variant: *const c_char,
    seed: u64,
    out: *mut *mut BrScenario,
) -> BrStatus {
    guard(|| {
        check_out!(out);
        let domain: Domain = core_tri!(tri!(read_str(domain)).parse());
        let variant = core_tri!(Variant::parse(tri!(read_str(variant))));
        let sc = core_tri!(ScenarioOverrides::default().scenario(domain, variant, seed));
        *out = Box::into_raw(Box::new(BrScenario(sc)));
        BrStatus::Ok
    })
}

/// Serializes a scenario to JSON; free the result with `br_string_free`.
///
/// # Safety
/// `sc` must be a live scenario handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn br_scenario_to_json(sc: *const BrScenario, out: *mut *mut c_char) -> BrStatus {
    guard(|| {
        check_out!(sc, out);
        to_json_out(&(*sc).0, out)
    })
}

/// # Safety
/// `sc` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn br_scenario_free(sc: *mut BrScenario) {
    if !sc.is_null() {
        drop(Box::from_raw(sc));
    }
}

/// Runs one episode. Failures of the episode itself are part of the report;
/// the status reports only invalid input.
///
/// # Safety
/// `sc` must be a live scenario handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn br_run_episode(sc: *const BrScenario, seed: u64, out: *mut *mut BrReport) -> BrStatus {
    guard(|| {
        check_out!(sc, out);
        let report = core_tri!(run_episode(&(*sc).0, seed));
        *out = Box::into_raw(Box::new(BrReport(report)));
        BrStatus::Ok
    })
}

/// Whether the episode reached the goal; false for NULL.
///
/// # Safety
/// `r` must be NULL or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn br_report_success(r: *const BrReport) -> bool {
    !r.is_null() && (*r).0.success
}

/// Plan-execute iterations; 0 for NULL.
///
/// # Safety
/// `r` must be NULL or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn br_report_num_iters(r: *const BrReport) -> usize {
    if r.is_null() {
        0
    } else {
        (*r).0.num_iters
    }
}

/// Contacts during the episode; 0 for NULL.
///
/// # Safety
/// `r` must be NULL or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn br_report_contacts(r: *const BrReport) -> usize {
    if r.is_null() {
        0
    } else {
        (*r).0.contacts
    }
}

/// Serializes a report to JSON; free the result with `br_string_free`.
///
/// # Safety
/// `r` must be a live report handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn br_report_to_json(r: *const BrReport, out: *mut *mut c_char) -> BrStatus {
    guard(|| {
        check_out!(r, out);
        to_json_out(&(*r).0, out)
    })
}

/// # Safety
/// `r` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn br_report_free(r: *mut BrReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

unsafe fn to_json_out<T: serde::Serialize>(value: &T, out: *mut *mut c_char) -> BrStatus {
    match serde_json::to_string(value) {
        Ok(s) => {
            *out = CString::new(s).expect("JSON has no NUL bytes").into_raw();
            BrStatus::Ok
        }
        Err(e) => fail(BrStatus::Internal, e.to_string()),
    }
}

/// New planar estimate of `nx` by `ny` cells of side `resolution` metres
/// with its origin at (0, 0); every cell unknown at probability 0.5.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn br_estimate_new(nx: usize, ny: usize, resolution: f64, out: *mut *mut BrEstimate) -> BrStatus {
    guard(|| {
        check_out!(out);
        let spec = core_tri!(GridSpec::planar(nx, ny, resolution));
        *out = Box::into_raw(Box::new(BrEstimate(OccupancyEstimate::new(spec))));
        BrStatus::Ok
    })
}

/// Number of cells in the estimate; 0 for NULL.
///
/// # Safety
/// `est` must be NULL or a live estimate handle.
#[no_mangle]
pub unsafe extern "C" fn br_estimate_num_cells(est: *const BrEstimate) -> usize {
    if est.is_null() {
        0
    } else {
        (*est).0.spec.num_cells()
    }
}

/// Certifies `n` cells (row-major indices) free.
///
/// # Safety
/// `est` must be a live estimate handle and `cells` must point to `n`
/// readable indices (or be NULL when `n` is 0).
#[no_mangle]
pub unsafe extern "C" fn br_estimate_certify_free(est: *mut BrEstimate, cells: *const usize, n: usize) -> BrStatus {
    guard(|| {
        check_out!(est);
        if n == 0 {
            return BrStatus::Ok;
        }
        check_out!(cells);
        let slice = std::slice::from_raw_parts(cells, n);
        let total = (*est).0.spec.num_cells();
        if let Some(bad) = slice.iter().find(|&&c| c >= total) {
            return fail(BrStatus::OutOfGrid, format!("cell {bad} outside a grid of {total} cells"));
        }
        (*est).0.certify_free(&slice.iter().copied().collect::<CellSet>());
        BrStatus::Ok
    })
}

/// Records a contact at world point (`x`, `y`). Writes the marked cell
/// index to `cell_out` when it is not NULL.
///
/// # Safety
/// `est` must be a live estimate handle; `cell_out` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn br_estimate_mark_contact(
    est: *mut BrEstimate,
    x: f64,
    y: f64,
    confidence: f64,
    spread_radius: usize,
    cell_out: *mut usize,
) -> BrStatus {
    guard(|| {
        check_out!(est);
        let cell = core_tri!((*est).0.mark_contact(&[x, y], confidence, spread_radius));
        if !cell_out.is_null() {
            *cell_out = cell;
        }
        BrStatus::Ok
    })
}

/// Predicted occupancy for every cell into `out` (length `len`, which must
/// equal the cell count). `structural` selects the structural predictor
/// with the given `decay`; otherwise the estimate is passed through.
///
/// # Safety
/// `est` must be a live estimate handle and `out` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn br_estimate_predict(
    est: *const BrEstimate,
    structural: bool,
    decay: f64,
    out: *mut f64,
    len: usize,
) -> BrStatus {
    guard(|| {
        check_out!(est, out);
        let e = &(*est).0;
        if len != e.spec.num_cells() {
            return fail(BrStatus::BufferSize, format!("buffer holds {len} values, grid has {}", e.spec.num_cells()));
        }
        let cfg = PredictorConfig {
            kind: if structural { PredictorKind::Structural } else { PredictorKind::None },
            decay,
            ..PredictorConfig::default()
        };
        core_tri!(cfg.validate(e.spec.ndim()));
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&predict(e, &cfg));
        BrStatus::Ok
    })
}

/// # Safety
/// `est` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn br_estimate_free(est: *mut BrEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}
