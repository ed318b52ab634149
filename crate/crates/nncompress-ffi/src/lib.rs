//! C ABI over the nncompress toolkit.
//!
//! Conventions: every fallible call returns an [`NncStatus`]; results come
//! back through out-pointers. `NncModel` is an opaque handle owned by the
//! library; free it with `nnc_model_free`. Strings returned by the library
//! are NUL-terminated and freed with `nnc_string_free`. On any non-Ok
//! status, `nnc_last_error_message` describes the failure for the calling
//! thread.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use libc::{c_char, c_double, size_t};

use nncompress::model::Model;
use nncompress::projection;
use nncompress::storage;
use nncompress::verify::verify_checkpoint;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NncStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    BadCheckpoint = 4,
    Infeasible = 5,
    Internal = 6,
}

pub struct NncModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let cstring = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(cstring));
}

fn status_from(err: &nncompress::Error) -> NncStatus {
    use nncompress::Error as E;
    set_error(err.to_string());
    match err {
        E::Io(_) => NncStatus::Io,
        E::Json(_) | E::Checkpoint(_) => NncStatus::BadCheckpoint,
        E::Infeasible(_) | E::Constraint(_) => NncStatus::Infeasible,
        E::Shape(_) | E::Config(_) | E::Data(_) | E::NonFinite(_) => NncStatus::InvalidArgument,
        _ => NncStatus::Internal,
    }
}

/// Last error message for this thread, or NULL when the previous call
/// succeeded. The pointer stays valid until the next failing call.
#[no_mangle]
pub extern "C" fn nnc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|s| s.as_ptr())
            .unwrap_or(ptr::null())
    })
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn nnc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Free a string returned by this library.
///
/// # Safety
/// `s` must have been returned by an `nnc_*` function and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nnc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn path_from(ptr_: *const c_char) -> Result<&'static Path, NncStatus> {
    if ptr_.is_null() {
        set_error("path is NULL");
        return Err(NncStatus::NullPointer);
    }
    match CStr::from_ptr(ptr_).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(NncStatus::InvalidArgument)
        }
    }
}

/// Load a model checkpoint (JSON) into a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nnc_model_load(path: *const c_char, out: *mut *mut NncModel) -> NncStatus {
    if out.is_null() {
        set_error("out pointer is NULL");
        return NncStatus::NullPointer;
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match Model::load(path) {
        Ok(model) => {
            *out = Box::into_raw(Box::new(NncModel(model)));
            NncStatus::Ok
        }
        Err(e) => status_from(&e),
    }
}

/// Write the model to a checkpoint file.
///
/// # Safety
/// `model` must be a live handle from `nnc_model_load`; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nnc_model_save(model: *const NncModel, path: *const c_char) -> NncStatus {
    let Some(model) = model.as_ref() else {
        set_error("model handle is NULL");
        return NncStatus::NullPointer;
    };
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match model.0.save(path) {
        Ok(()) => NncStatus::Ok,
        Err(e) => status_from(&e),
    }
}

/// Free a model handle. NULL is a no-op.
///
/// # Safety
/// `model` must come from `nnc_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn nnc_model_free(model: *mut NncModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` live handle, `out` valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nnc_model_layer_count(model: *const NncModel, out: *mut size_t) -> NncStatus {
    let (Some(model), false) = (model.as_ref(), out.is_null()) else {
        set_error("NULL argument");
        return NncStatus::NullPointer;
    };
    *out = model.0.layers.len();
    NncStatus::Ok
}

/// Total and nonzero weight counts (biases excluded).
///
/// # Safety
/// `model` live handle; out pointers valid or NULL (skipped).
#[no_mangle]
pub unsafe extern "C" fn nnc_model_weight_counts(
    model: *const NncModel,
    total: *mut size_t,
    nonzero: *mut size_t,
) -> NncStatus {
    let Some(model) = model.as_ref() else {
        set_error("model handle is NULL");
        return NncStatus::NullPointer;
    };
    if !total.is_null() {
        *total = model.0.weight_param_count();
    }
    if !nonzero.is_null() {
        *nonzero = model.0.nonzero_weight_count();
    }
    NncStatus::Ok
}

/// Pruning rate (original / nonzero). Infinite for an all-zero model.
///
/// # Safety
/// `model` live handle, `out` valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nnc_model_prune_rate(
    model: *const NncModel,
    conv_only: bool,
    out: *mut c_double,
) -> NncStatus {
    let (Some(model), false) = (model.as_ref(), out.is_null()) else {
        set_error("NULL argument");
        return NncStatus::NullPointer;
    };
    let rate = if conv_only { model.0.conv_pruning_rate() } else { model.0.pruning_rate() };
    *out = rate.ratio();
    NncStatus::Ok
}

/// Feasibility check against the checkpoint's own metadata (masks and
/// recorded quantization levels). `Ok` and `*feasible = false` means the
/// check ran and found violations.
///
/// # Safety
/// `model` live handle, `feasible` valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nnc_model_verify(model: *const NncModel, feasible: *mut bool) -> NncStatus {
    let (Some(model), false) = (model.as_ref(), feasible.is_null()) else {
        set_error("NULL argument");
        return NncStatus::NullPointer;
    };
    let report = verify_checkpoint(&model.0, None);
    *feasible = report.feasible;
    if !report.feasible {
        set_error(report.messages.join("; "));
    }
    NncStatus::Ok
}

/// Storage report as a JSON string (free with `nnc_string_free`).
///
/// # Safety
/// `model` live handle, `out` valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nnc_storage_report_json(
    model: *const NncModel,
    quant_bits: u32,
    conv_only: bool,
    structured: bool,
    out: *mut *mut c_char,
) -> NncStatus {
    let (Some(model), false) = (model.as_ref(), out.is_null()) else {
        set_error("NULL argument");
        return NncStatus::NullPointer;
    };
    if quant_bits == 0 || quant_bits > 32 {
        set_error("quant_bits must be in 1..=32");
        return NncStatus::InvalidArgument;
    }
    let report = storage::storage_report(&model.0, quant_bits, conv_only, structured);
    match serde_json::to_string(&report) {
        Ok(json) => match CString::new(json) {
            Ok(c) => {
                *out = c.into_raw();
                NncStatus::Ok
            }
            Err(_) => {
                set_error("report contained interior NUL");
                NncStatus::Internal
            }
        },
        Err(e) => {
            set_error(e.to_string());
            NncStatus::Internal
        }
    }
}

/// Keep the `keep` largest-magnitude entries of `values`, zero the rest,
/// writing to `out` (may alias `values`).
///
/// # Safety
/// `values` and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nnc_project_top_k(
    values: *const c_double,
    len: size_t,
    keep: size_t,
    out: *mut c_double,
) -> NncStatus {
    if values.is_null() || out.is_null() {
        set_error("NULL buffer");
        return NncStatus::NullPointer;
    }
    if keep > len || len == 0 {
        set_error("keep must be <= len and len >= 1");
        return NncStatus::InvalidArgument;
    }
    let input = std::slice::from_raw_parts(values, len);
    let tensor = match nncompress::tensor::WeightTensor::new_fc(len, 1, input.to_vec()) {
        Ok(t) => t,
        Err(e) => return status_from(&e),
    };
    match projection::project_nonstructured(&tensor, keep) {
        Ok(proj) => {
            std::slice::from_raw_parts_mut(out, len).copy_from_slice(proj.tensor.values());
            NncStatus::Ok
        }
        Err(e) => status_from(&e),
    }
}

/// Map every entry to its nearest level (ties toward the smaller level).
///
/// # Safety
/// `values`/`out` point to `len` doubles; `levels` to `levels_len` doubles,
/// strictly increasing.
#[no_mangle]
pub unsafe extern "C" fn nnc_project_nearest_levels(
    values: *const c_double,
    len: size_t,
    levels: *const c_double,
    levels_len: size_t,
    out: *mut c_double,
) -> NncStatus {
    if values.is_null() || levels.is_null() || out.is_null() {
        set_error("NULL buffer");
        return NncStatus::NullPointer;
    }
    if levels_len == 0 || len == 0 {
        set_error("levels and values must be non-empty");
        return NncStatus::InvalidArgument;
    }
    let levels = std::slice::from_raw_parts(levels, levels_len);
    if let Err(e) = projection::validate_levels(levels) {
        return status_from(&e);
    }
    let input = std::slice::from_raw_parts(values, len);
    let output = std::slice::from_raw_parts_mut(out, len);
    for (o, v) in output.iter_mut().zip(input) {
        *o = projection::nearest_level(levels, *v);
    }
    NncStatus::Ok
}
