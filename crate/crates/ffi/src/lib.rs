//! C ABI over `fedecl`: load checkpoints, run forward passes and
//! personalized predictions, and run a full experiment from a config file.
//!
//! Every fallible function returns a [`FedeclStatus`]; on failure the
//! message is kept per thread and can be copied out with
//! [`fedecl_last_error_message`]. Handles are opaque and must be released
//! with the matching `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use fedecl::checkpoint::decode_state;
use fedecl::config::ExperimentConfig;
use fedecl::ecl::PersonalizedState;
use fedecl::nncore::{deserialize, Matrix, ModelParams};
use fedecl::pipeline::{cmd_eval, cmd_train};
use fedecl::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedeclStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Decode = 4,
    Shape = 5,
    Numeric = 6,
    Config = 7,
    Panic = 8,
}

/// A single network loaded from a model checkpoint.
pub struct FedeclModel {
    inner: ModelParams,
}

/// A client's personalized state: retrained global model plus experts.
pub struct FedeclState {
    inner: PersonalizedState,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> FedeclStatus {
    match e {
        Error::Shape(_) => FedeclStatus::Shape,
        Error::Numeric(_) => FedeclStatus::Numeric,
        Error::Domain(_) => FedeclStatus::Numeric,
        Error::InvalidArgument(_) => FedeclStatus::InvalidArgument,
        Error::Decode(_) => FedeclStatus::Decode,
        Error::Parse { .. } => FedeclStatus::Decode,
        Error::Config { .. } => FedeclStatus::Config,
        Error::Io { .. } => FedeclStatus::Io,
    }
}

fn fail(status: FedeclStatus, msg: impl Into<String>) -> FedeclStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, converting errors and panics into a status code.
fn guard<F>(f: F) -> FedeclStatus
where
    F: FnOnce() -> Result<(), FedeclStatus>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FedeclStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            fail(FedeclStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

fn lift<T>(r: fedecl::Result<T>) -> Result<T, FedeclStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, FedeclStatus> {
    if p.is_null() {
        return Err(fail(FedeclStatus::NullPointer, format!("{what} is null")));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FedeclStatus::InvalidArgument, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn bytes_arg<'a>(data: *const u8, len: usize) -> Result<&'a [u8], FedeclStatus> {
    if data.is_null() {
        return Err(fail(FedeclStatus::NullPointer, "data is null"));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

fn read_file(path: &PathBuf) -> Result<Vec<u8>, FedeclStatus> {
    std::fs::read(path).map_err(|e| fail(FedeclStatus::Io, format!("{}: {e}", path.display())))
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes (excluding the NUL). `buf` may be null when `len`
/// is 0, to query the length.
///
/// # Safety
/// `buf` must point to `len` writable bytes unless `len` is 0.
#[no_mangle]
pub unsafe extern "C" fn fedecl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fedecl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Decodes a model checkpoint held in memory.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedecl_model_from_bytes(
    data: *const u8,
    len: usize,
    out: *mut *mut FedeclModel,
) -> FedeclStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(FedeclStatus::NullPointer, "out is null"));
        }
        let model = lift(deserialize(bytes_arg(data, len)?))?;
        *out = Box::into_raw(Box::new(FedeclModel { inner: model }));
        Ok(())
    })
}

/// Loads a model checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedecl_model_load(path: *const c_char, out: *mut *mut FedeclModel) -> FedeclStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(FedeclStatus::NullPointer, "out is null"));
        }
        let bytes = read_file(&path_arg(path, "path")?)?;
        let model = lift(deserialize(&bytes))?;
        *out = Box::into_raw(Box::new(FedeclModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library that was not freed.
#[no_mangle]
pub unsafe extern "C" fn fedecl_model_free(model: *mut FedeclModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input width of the model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedecl_model_input_dim(model: *const FedeclModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.arch().input_dim)
}

/// Number of output classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedecl_model_num_classes(model: *const FedeclModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_classes())
}

/// Forward pass over `rows` row-major inputs of width `cols`, writing
/// `rows × num_classes` logits to `out_logits`.
///
/// # Safety
/// `inputs` must point to `rows * cols` doubles and `out_logits` to
/// `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fedecl_model_forward(
    model: *const FedeclModel,
    inputs: *const f64,
    rows: usize,
    cols: usize,
    out_logits: *mut f64,
    out_len: usize,
) -> FedeclStatus {
    guard(|| {
        let model = model
            .as_ref()
            .ok_or_else(|| fail(FedeclStatus::NullPointer, "model is null"))?;
        if inputs.is_null() || out_logits.is_null() {
            return Err(fail(FedeclStatus::NullPointer, "inputs or out_logits is null"));
        }
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| fail(FedeclStatus::InvalidArgument, "rows * cols overflows"))?;
        let need = rows * model.inner.num_classes();
        if out_len < need {
            return Err(fail(
                FedeclStatus::Shape,
                format!("out_len {out_len} is smaller than rows * num_classes = {need}"),
            ));
        }
        let x = lift(Matrix::from_vec(
            rows,
            cols,
            std::slice::from_raw_parts(inputs, n).to_vec(),
        ))?;
        let logits = lift(model.inner.forward(&x))?;
        std::slice::from_raw_parts_mut(out_logits, need).copy_from_slice(logits.as_slice());
        Ok(())
    })
}

/// Decodes a personalized-state checkpoint held in memory.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedecl_state_from_bytes(
    data: *const u8,
    len: usize,
    out: *mut *mut FedeclState,
) -> FedeclStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(FedeclStatus::NullPointer, "out is null"));
        }
        let state = lift(decode_state(bytes_arg(data, len)?))?;
        *out = Box::into_raw(Box::new(FedeclState { inner: state }));
        Ok(())
    })
}

/// Loads a personalized-state checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedecl_state_load(path: *const c_char, out: *mut *mut FedeclState) -> FedeclStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(FedeclStatus::NullPointer, "out is null"));
        }
        let bytes = read_file(&path_arg(path, "path")?)?;
        let state = lift(decode_state(&bytes))?;
        *out = Box::into_raw(Box::new(FedeclState { inner: state }));
        Ok(())
    })
}

/// # Safety
/// `state` must be null or a handle from this library that was not freed.
#[no_mangle]
pub unsafe extern "C" fn fedecl_state_free(state: *mut FedeclState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `state` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedecl_state_num_classes(state: *const FedeclState) -> usize {
    state.as_ref().map_or(0, |s| s.inner.num_classes())
}

/// Mixing weight stored in the state, or NaN for a null handle.
///
/// # Safety
/// `state` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedecl_state_lambda(state: *const FedeclState) -> f64 {
    state.as_ref().map_or(f64::NAN, |s| s.inner.lambda)
}

/// Aggregated prediction for one input of width `len`. Pass NaN as
/// `lambda` to use the stored mixing weight. Writes the predicted class to
/// `out_class` and, when `out_logits` is not null, `num_classes` aggregated
/// logits to `out_logits` (which must hold `out_len >= num_classes`).
///
/// # Safety
/// `x` must point to `len` doubles; `out_class` must be valid;
/// `out_logits` must be null or point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fedecl_state_predict(
    state: *const FedeclState,
    x: *const f64,
    len: usize,
    lambda: f64,
    out_class: *mut usize,
    out_logits: *mut f64,
    out_len: usize,
) -> FedeclStatus {
    guard(|| {
        let state = state
            .as_ref()
            .ok_or_else(|| fail(FedeclStatus::NullPointer, "state is null"))?;
        if x.is_null() || out_class.is_null() {
            return Err(fail(FedeclStatus::NullPointer, "x or out_class is null"));
        }
        let c = state.inner.num_classes();
        if !out_logits.is_null() && out_len < c {
            return Err(fail(
                FedeclStatus::Shape,
                format!("out_len {out_len} is smaller than {c} classes"),
            ));
        }
        let input = std::slice::from_raw_parts(x, len);
        let (class, agg) = if lambda.is_nan() {
            lift(state.inner.predict(input))?
        } else {
            lift(lift(state.inner.with_lambda(lambda))?.predict(input))?
        };
        *out_class = class;
        if !out_logits.is_null() {
            std::slice::from_raw_parts_mut(out_logits, c).copy_from_slice(&agg.logits);
        }
        Ok(())
    })
}

/// Trains and evaluates the experiment described by the TOML file at
/// `config_path` (null for the built-in defaults), writing checkpoints and
/// metrics into `out_dir`.
///
/// # Safety
/// `config_path` must be null or a NUL-terminated string; `out_dir` must be
/// a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedecl_run_experiment(config_path: *const c_char, out_dir: *const c_char) -> FedeclStatus {
    guard(|| {
        let out = path_arg(out_dir, "out_dir")?;
        let config = if config_path.is_null() {
            None
        } else {
            Some(path_arg(config_path, "config_path")?)
        };
        let mut cfg = lift(ExperimentConfig::load(config.as_deref(), &[]))?;
        cfg.output.dir = out.clone();
        lift(cmd_train(&cfg, &out))?;
        lift(cmd_eval(&cfg, &out))?;
        Ok(())
    })
}
