//! C ABI over the `safe2x2` evidence process and the classical baselines.
//!
//! Every fallible call returns a status code and writes its result through an
//! out-pointer. The message of the most recent failure on the calling thread
//! is available from [`safe2x2_last_error`]. The matching header lives in
//! `include/safe2x2.h`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use safe2x2::baselines::{fisher_exact_one_sided, ContingencyTable};
use safe2x2::evalue::log_e_from_counts;
use safe2x2::{AlternativePoint, BlockDesign, Error, EvidenceProcess, Group, ModelSpec};

pub const SAFE2X2_OK: c_int = 0;
pub const SAFE2X2_NULL_POINTER: c_int = 1;
pub const SAFE2X2_INVALID: c_int = 2;
pub const SAFE2X2_DEGENERATE: c_int = 3;
pub const SAFE2X2_DOMAIN: c_int = 4;
pub const SAFE2X2_CONFIG: c_int = 5;
pub const SAFE2X2_UNSUPPORTED: c_int = 6;
pub const SAFE2X2_INTERNAL: c_int = 7;
pub const SAFE2X2_PANIC: c_int = 8;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> c_int {
    match err {
        Error::Invalid(_) => SAFE2X2_INVALID,
        Error::DegenerateEvidence => SAFE2X2_DEGENERATE,
        Error::Domain { .. } => SAFE2X2_DOMAIN,
        Error::Config(_) => SAFE2X2_CONFIG,
        Error::UnsupportedDesign(_) => SAFE2X2_UNSUPPORTED,
        Error::Internal(_) => SAFE2X2_INTERNAL,
    }
}

enum Failure {
    Null,
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SAFE2X2_OK,
        Ok(Err(Failure::Null)) => {
            set_error("null pointer argument".into());
            SAFE2X2_NULL_POINTER
        }
        Ok(Err(Failure::Core(e))) => {
            let code = status_of(&e);
            set_error(e.to_string());
            code
        }
        Err(_) => {
            set_error("panic inside safe2x2".into());
            SAFE2X2_PANIC
        }
    }
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null)
}

/// Opaque handle to an evidence process.
pub struct Safe2x2Process {
    inner: EvidenceProcess,
}

fn boxed(design: BlockDesign, spec: ModelSpec, handle: *mut *mut Safe2x2Process) -> Result<(), Failure> {
    let slot = unsafe { out(handle)? };
    let inner = EvidenceProcess::new(design, spec)?;
    *slot = Box::into_raw(Box::new(Safe2x2Process { inner }));
    Ok(())
}

/// Creates a process with the default symmetric beta model.
///
/// # Safety
/// `handle` must be valid for writes. Release the result with
/// [`safe2x2_process_free`].
#[no_mangle]
pub unsafe extern "C" fn safe2x2_process_new(n_a: usize, n_b: usize, handle: *mut *mut Safe2x2Process) -> c_int {
    guard(|| boxed(BlockDesign::new(n_a, n_b)?, ModelSpec::default(), handle))
}

/// Creates a process from a JSON model description such as
/// `{"kind":"restricted","divergence":"difference","delta":0.05}`.
///
/// # Safety
/// `model_json` must be a NUL-terminated string and `handle` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn safe2x2_process_new_json(
    n_a: usize,
    n_b: usize,
    model_json: *const c_char,
    handle: *mut *mut Safe2x2Process,
) -> c_int {
    guard(|| {
        if model_json.is_null() {
            return Err(Failure::Null);
        }
        let text = CStr::from_ptr(model_json)
            .to_str()
            .map_err(|e| Error::Invalid(format!("model is not UTF-8: {e}")))?;
        let spec: ModelSpec =
            serde_json::from_str(text).map_err(|e| Error::Invalid(format!("model: {e}")))?;
        boxed(BlockDesign::new(n_a, n_b)?, spec, handle)
    })
}

/// # Safety
/// `handle` must come from a constructor in this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn safe2x2_process_free(handle: *mut Safe2x2Process) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Feeds one outcome. `group` is 0 for a and 1 for b; `y` must be 0 or 1.
/// `blocks_completed` (may be null) receives the number of blocks this call closed.
///
/// # Safety
/// `handle` must be a live process handle.
#[no_mangle]
pub unsafe extern "C" fn safe2x2_process_observe(
    handle: *mut Safe2x2Process,
    group: c_int,
    y: c_int,
    blocks_completed: *mut usize,
) -> c_int {
    guard(|| {
        let p = out(handle)?;
        let group = match group {
            0 => Group::A,
            1 => Group::B,
            g => return Err(Error::Invalid(format!("group must be 0 or 1, got {g}")).into()),
        };
        let y = match y {
            0 => false,
            1 => true,
            v => return Err(Error::Invalid(format!("y must be 0 or 1, got {v}")).into()),
        };
        let closed = p.inner.observe(group, y)?;
        if let Some(slot) = blocks_completed.as_mut() {
            *slot = closed;
        }
        Ok(())
    })
}

/// Current log e-value; NaN for a null handle.
///
/// # Safety
/// `handle` must be a live process handle or null.
#[no_mangle]
pub unsafe extern "C" fn safe2x2_process_log_e(handle: *const Safe2x2Process) -> f64 {
    handle.as_ref().map_or(f64::NAN, |p| p.inner.log_e())
}

/// # Safety
/// `handle` must be a live process handle or null.
#[no_mangle]
pub unsafe extern "C" fn safe2x2_process_blocks(handle: *const Safe2x2Process) -> u64 {
    handle.as_ref().map_or(0, |p| p.inner.blocks_completed())
}

/// Writes 1 to `reject` when the e-value has reached `1 / alpha`, else 0.
///
/// # Safety
/// `handle` must be a live process handle and `reject` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn safe2x2_process_decide(
    handle: *const Safe2x2Process,
    alpha: f64,
    reject: *mut c_int,
) -> c_int {
    guard(|| {
        let p = handle.as_ref().ok_or(Failure::Null)?;
        let slot = out(reject)?;
        *slot = p.inner.decide(alpha)?.reject as c_int;
        Ok(())
    })
}

/// Log e-value of one block summarized by its success counts, under the
/// point alternative `(theta_a, theta_b)`.
///
/// # Safety
/// `log_e` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn safe2x2_block_log_e(
    k_a: u64,
    n_a: u64,
    k_b: u64,
    n_b: u64,
    theta_a: f64,
    theta_b: f64,
    log_e: *mut f64,
) -> c_int {
    guard(|| {
        let slot = out(log_e)?;
        if k_a > n_a || k_b > n_b {
            return Err(Error::Invalid("success count exceeds group size".into()).into());
        }
        let design = BlockDesign::new(n_a as usize, n_b as usize)?;
        let alt = AlternativePoint::new(theta_a, theta_b)?;
        *slot = log_e_from_counts(k_a, n_a, k_b, n_b, &alt, alt.null_point(&design))?;
        Ok(())
    })
}

/// One-sided Fisher exact p-value for an excess of successes in group b.
///
/// # Safety
/// `p_value` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn safe2x2_fisher_one_sided(
    n_a1: u64,
    n_a0: u64,
    n_b1: u64,
    n_b0: u64,
    p_value: *mut f64,
) -> c_int {
    guard(|| {
        let slot = out(p_value)?;
        *slot = fisher_exact_one_sided(&ContingencyTable { n_a1, n_a0, n_b1, n_b0 });
        Ok(())
    })
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn safe2x2_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn safe2x2_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
