//! C ABI surface for the effective-rank laboratory.
//!
//! Conventions: every function returns an `SrlStatus` (or takes an out
//! parameter for it), opaque handles are created and released through
//! matching `_new`/`_free` pairs, and the most recent error message is kept
//! in thread-local storage, readable via `srl_last_error`.
//!
//! No panic may cross the boundary; every entry point is wrapped in
//! `catch_unwind`.

use sranklab::experiment::{run_single_seed, ExperimentConfig, TraceFile};
use sranklab::linalg::{srank_of_sigma, svd, Matrix};
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status code returned by every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrlStatus {
    /// Success.
    SrlOk = 0,
    /// A required pointer argument was null.
    SrlNullArgument = 1,
    /// An argument was out of range or malformed.
    SrlInvalidArgument = 2,
    /// A string argument was not valid UTF-8.
    SrlInvalidUtf8 = 3,
    /// The computation failed; see `srl_last_error`.
    SrlComputeError = 4,
    /// A panic was caught at the boundary; see `srl_last_error`.
    SrlInternalError = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: impl Into<String>) {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = message.into());
}

fn guarded(f: impl FnOnce() -> SrlStatus) -> SrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic at FFI boundary".to_string());
            set_error(msg);
            SrlStatus::SrlInternalError
        }
    }
}

/// Copy the last error message for this thread into `buf` (NUL terminated,
/// truncated to `cap` bytes). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null (length query).
#[no_mangle]
pub unsafe extern "C" fn srl_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Effective rank of a non-increasing singular value spectrum.
///
/// # Safety
/// `sigma` must point to `len` doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn srl_srank(
    sigma: *const f64,
    len: usize,
    delta: f64,
    out: *mut usize,
) -> SrlStatus {
    if sigma.is_null() || out.is_null() {
        set_error("null argument");
        return SrlStatus::SrlNullArgument;
    }
    let values = std::slice::from_raw_parts(sigma, len);
    guarded(|| match srank_of_sigma(values, delta) {
        Ok(rank) => {
            *out = rank;
            SrlStatus::SrlOk
        }
        Err(err) => {
            set_error(err.to_string());
            SrlStatus::SrlComputeError
        }
    })
}

/// Singular values of a row-major `rows` x `cols` matrix, written to `out`
/// (capacity `min(rows, cols)`) in non-increasing order.
///
/// # Safety
/// `data` must point to `rows * cols` doubles and `out` to
/// `min(rows, cols)` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn srl_singular_values(
    data: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> SrlStatus {
    if data.is_null() || out.is_null() {
        set_error("null argument");
        return SrlStatus::SrlNullArgument;
    }
    if rows == 0 || cols == 0 {
        set_error("matrix dimensions must be positive");
        return SrlStatus::SrlInvalidArgument;
    }
    let values = std::slice::from_raw_parts(data, rows * cols);
    guarded(|| {
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = values[r * cols + c];
            }
        }
        match svd(&m) {
            Ok(spec) => {
                std::ptr::copy_nonoverlapping(spec.sigma.as_ptr(), out, spec.sigma.len());
                SrlStatus::SrlOk
            }
            Err(err) => {
                set_error(err.to_string());
                SrlStatus::SrlComputeError
            }
        }
    })
}

/// Parsed experiment configuration. Opaque; release with `srl_config_free`.
pub struct SrlConfig {
    inner: ExperimentConfig,
}

/// One completed experiment run. Opaque; release with `srl_trace_free`.
pub struct SrlTrace {
    inner: TraceFile,
}

/// Parse a flat `key = value` configuration text into an opaque handle.
/// On success `*out` owns the handle.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn srl_config_parse(
    text: *const c_char,
    out: *mut *mut SrlConfig,
) -> SrlStatus {
    if text.is_null() || out.is_null() {
        set_error("null argument");
        return SrlStatus::SrlNullArgument;
    }
    let Ok(text) = CStr::from_ptr(text).to_str() else {
        set_error("configuration text is not valid UTF-8");
        return SrlStatus::SrlInvalidUtf8;
    };
    guarded(|| match ExperimentConfig::parse(text, &[]) {
        Ok(cfg) => {
            *out = Box::into_raw(Box::new(SrlConfig { inner: cfg }));
            SrlStatus::SrlOk
        }
        Err(err) => {
            set_error(err.to_string());
            SrlStatus::SrlInvalidArgument
        }
    })
}

/// Release a configuration handle. Null is a no-op.
///
/// # Safety
/// `cfg` must come from `srl_config_parse` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn srl_config_free(cfg: *mut SrlConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Copy the 16-character configuration digest into `buf` (NUL terminated).
///
/// # Safety
/// `cfg` must be a live handle; `buf` must hold at least `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn srl_config_digest(
    cfg: *const SrlConfig,
    buf: *mut c_char,
    cap: usize,
) -> SrlStatus {
    if cfg.is_null() || buf.is_null() {
        set_error("null argument");
        return SrlStatus::SrlNullArgument;
    }
    if cap == 0 {
        set_error("digest buffer capacity must be positive");
        return SrlStatus::SrlInvalidArgument;
    }
    guarded(|| {
        let digest = (*cfg).inner.digest();
        let bytes = digest.as_bytes();
        let n = bytes.len().min(cap - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
        *buf.add(n) = 0;
        SrlStatus::SrlOk
    })
}

/// Run one seed of the experiment. On success `*out` owns the trace handle.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn srl_run_seed(
    cfg: *const SrlConfig,
    seed: u64,
    out: *mut *mut SrlTrace,
) -> SrlStatus {
    if cfg.is_null() || out.is_null() {
        set_error("null argument");
        return SrlStatus::SrlNullArgument;
    }
    guarded(|| match run_single_seed(&(*cfg).inner, seed) {
        Ok(trace) => {
            *out = Box::into_raw(Box::new(SrlTrace { inner: trace }));
            SrlStatus::SrlOk
        }
        Err(err) => {
            set_error(err.to_string());
            SrlStatus::SrlComputeError
        }
    })
}

/// Release a trace handle. Null is a no-op.
///
/// # Safety
/// `trace` must come from `srl_run_seed` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn srl_trace_free(trace: *mut SrlTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Number of data rows in the trace.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn srl_trace_rows(trace: *const SrlTrace) -> usize {
    if trace.is_null() {
        return 0;
    }
    (*trace).inner.rows.len()
}

/// Number of columns in the trace.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn srl_trace_columns(trace: *const SrlTrace) -> usize {
    if trace.is_null() {
        return 0;
    }
    (*trace).inner.columns.len()
}

/// Whether the run was flagged as diverged (non-finite metrics).
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn srl_trace_diverged(trace: *const SrlTrace) -> bool {
    if trace.is_null() {
        return false;
    }
    (*trace).inner.diverged
}

/// Copy the name of column `index` into `buf` (NUL terminated). Returns the
/// full name length, or 0 if the index is out of range.
///
/// # Safety
/// `trace` must be a live handle; `buf` must hold `cap` bytes or be null.
#[no_mangle]
pub unsafe extern "C" fn srl_trace_column_name(
    trace: *const SrlTrace,
    index: usize,
    buf: *mut c_char,
    cap: usize,
) -> usize {
    if trace.is_null() {
        return 0;
    }
    let columns = &(*trace).inner.columns;
    let Some(name) = columns.get(index) else {
        return 0;
    };
    let bytes = name.as_bytes();
    if !buf.is_null() && cap > 0 {
        let n = bytes.len().min(cap - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
        *buf.add(n) = 0;
    }
    bytes.len()
}

/// Read one cell of the trace into `out`.
///
/// # Safety
/// `trace` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn srl_trace_value(
    trace: *const SrlTrace,
    row: usize,
    column: usize,
    out: *mut f64,
) -> SrlStatus {
    if trace.is_null() || out.is_null() {
        set_error("null argument");
        return SrlStatus::SrlNullArgument;
    }
    let inner = &(*trace).inner;
    match inner.rows.get(row).and_then(|r| r.get(column)) {
        Some(value) => {
            *out = *value;
            SrlStatus::SrlOk
        }
        None => {
            set_error(format!(
                "cell ({row}, {column}) out of range for {}x{} trace",
                inner.rows.len(),
                inner.columns.len()
            ));
            SrlStatus::SrlInvalidArgument
        }
    }
}
