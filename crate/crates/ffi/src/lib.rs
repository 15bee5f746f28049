//! C ABI over the `fedmr` crate.
//!
//! Objects cross the boundary as opaque handles ([`FmrExperiment`],
//! [`FmrRunResult`], [`FmrModel`]) created and destroyed by this library.
//! Every fallible function returns an [`FmrStatus`]; on failure the message
//! is available from [`fmr_last_error_message`] on the same thread.
//! Strings returned through out-parameters are owned by the caller and must
//! be released with [`fmr_string_free`].
//!
//! The header `include/fedmr.h` is generated by the build script.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fedmr::config::{parse_override, ResolvedConfig};
use fedmr::nn::LayeredModel;
use fedmr::orchestrator::{ExperimentOutcome, Stage};
use fedmr::{checkpoint, report, runner, Error, Tensor};

/// Result codes. `FMR_STATUS_OK` is zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    Io = 4,
    InvalidData = 5,
    Shape = 6,
    OutOfRange = 7,
    Runtime = 8,
    Panic = 9,
}

/// A config plus accumulated `key=value` overrides.
pub struct FmrExperiment {
    text: String,
    sets: Vec<String>,
    resolved: ResolvedConfig,
}

/// Records and models of a finished run.
pub struct FmrRunResult {
    outcome: ExperimentOutcome,
}

/// A trained model.
pub struct FmrModel {
    model: LayeredModel,
}

/// One round of a run. `accuracy` and `loss` are NaN on rounds that were
/// not evaluated; `evaluated` tells which.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FmrRoundMetrics {
    pub round: u64,
    /// 0 = pretrain (aggregation), 1 = recombine.
    pub stage: u32,
    pub evaluated: bool,
    pub accuracy: f64,
    pub loss: f64,
    pub mean_local_loss: f64,
    pub transfers: u64,
    pub num_clients: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(FmrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config { .. } | Error::ConfigParse(_) => FmrStatus::InvalidConfig,
            Error::Io(_) => FmrStatus::Io,
            Error::BadMagic { .. }
            | Error::Truncated(_)
            | Error::CountMismatch { .. }
            | Error::Checkpoint(_)
            | Error::Json(_) => FmrStatus::InvalidData,
            Error::LayerShape { .. }
            | Error::Shape(_)
            | Error::ArchitectureMismatch { .. }
            | Error::LabelOutOfRange { .. } => FmrStatus::Shape,
            _ => FmrStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: FmrStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `body`, converting errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> FmrStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            FmrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            FmrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(FmrStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FmrStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(FmrStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(FmrStatus::NullPointer, format!("`{name}` is null")))
}

fn resolve(text: &str, sets: &[String]) -> Result<ResolvedConfig, Failure> {
    let overrides = sets.iter().map(|s| parse_override(s)).collect::<fedmr::Result<Vec<_>>>()?;
    Ok(ResolvedConfig::from_toml_str(text, &overrides)?)
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| fail(FmrStatus::Runtime, "string contains an interior NUL"))
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn fmr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fmr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a TOML config.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fmr_experiment_from_toml(toml: *const c_char, out_exp: *mut *mut FmrExperiment) -> FmrStatus {
    guard(|| {
        let slot = out(out_exp, "out_exp")?;
        *slot = ptr::null_mut();
        let text = str_arg(toml, "toml")?.to_string();
        let resolved = resolve(&text, &[])?;
        *slot = Box::into_raw(Box::new(FmrExperiment {
            text,
            sets: Vec::new(),
            resolved,
        }));
        Ok(())
    })
}

/// Applies a `key=value` override, e.g. `"rounds=5"` or `"local.epochs=1"`.
/// The experiment is left unchanged if the result does not validate.
///
/// # Safety
/// `exp` must be a live handle; `key_value` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fmr_experiment_set(exp: *mut FmrExperiment, key_value: *const c_char) -> FmrStatus {
    guard(|| {
        let exp = out(exp, "exp")?;
        let kv = str_arg(key_value, "key_value")?.to_string();
        let mut sets = exp.sets.clone();
        sets.push(kv);
        exp.resolved = resolve(&exp.text, &sets)?;
        exp.sets = sets;
        Ok(())
    })
}

/// Writes the canonical resolved config as TOML.
///
/// # Safety
/// `exp` must be a live handle; `out_toml` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fmr_experiment_resolved_toml(exp: *const FmrExperiment, out_toml: *mut *mut c_char) -> FmrStatus {
    guard(|| {
        let slot = out(out_toml, "out_toml")?;
        *slot = ptr::null_mut();
        *slot = into_c_string(handle(exp, "exp")?.resolved.to_toml_string())?;
        Ok(())
    })
}

/// Runs the experiment in memory. No files are written.
///
/// # Safety
/// `exp` must be a live handle; `out_result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fmr_experiment_run(exp: *const FmrExperiment, out_result: *mut *mut FmrRunResult) -> FmrStatus {
    guard(|| {
        let slot = out(out_result, "out_result")?;
        *slot = ptr::null_mut();
        let exp = handle(exp, "exp")?;
        let (_, outcome) = runner::execute(&exp.resolved, |_| Ok(()))?;
        *slot = Box::into_raw(Box::new(FmrRunResult { outcome }));
        Ok(())
    })
}

/// # Safety
/// `exp` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn fmr_experiment_free(exp: *mut FmrExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// # Safety
/// `result` must be a live handle; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fmr_run_result_round_count(result: *const FmrRunResult, out_count: *mut usize) -> FmrStatus {
    guard(|| {
        *out(out_count, "out_count")? = handle(result, "result")?.outcome.records.len();
        Ok(())
    })
}

/// Metrics of round `index` (zero-based; round numbers start at 1).
///
/// # Safety
/// `result` must be a live handle; `out_metrics` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fmr_run_result_round(
    result: *const FmrRunResult,
    index: usize,
    out_metrics: *mut FmrRoundMetrics,
) -> FmrStatus {
    guard(|| {
        let slot = out(out_metrics, "out_metrics")?;
        let records = &handle(result, "result")?.outcome.records;
        let r = records.get(index).ok_or_else(|| {
            fail(FmrStatus::OutOfRange, format!("round index {index} of {}", records.len()))
        })?;
        *slot = FmrRoundMetrics {
            round: r.round as u64,
            stage: match r.stage {
                Stage::Pretrain => 0,
                Stage::Recombine => 1,
            },
            evaluated: r.accuracy.is_some(),
            accuracy: r.accuracy.unwrap_or(f64::NAN),
            loss: r.loss.unwrap_or(f64::NAN),
            mean_local_loss: r.local_losses.iter().sum::<f64>() / r.local_losses.len().max(1) as f64,
            transfers: r.transfers as u64,
            num_clients: r.clients.len() as u64,
        };
        Ok(())
    })
}

/// Copies out the final global model as a new handle.
///
/// # Safety
/// `result` must be a live handle; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fmr_run_result_final_model(result: *const FmrRunResult, out_model: *mut *mut FmrModel) -> FmrStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        *slot = ptr::null_mut();
        let model = handle(result, "result")?.outcome.global_model.clone();
        *slot = Box::into_raw(Box::new(FmrModel { model }));
        Ok(())
    })
}

/// The learning curve as `metrics.csv` text.
///
/// # Safety
/// `result` must be a live handle; `out_csv` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fmr_run_result_metrics_csv(result: *const FmrRunResult, out_csv: *mut *mut c_char) -> FmrStatus {
    guard(|| {
        let slot = out(out_csv, "out_csv")?;
        *slot = ptr::null_mut();
        *slot = into_c_string(report::metrics_csv(&handle(result, "result")?.outcome.records))?;
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn fmr_run_result_free(result: *mut FmrRunResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Loads a `model.ckpt` file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fmr_model_load(path: *const c_char, out_model: *mut *mut FmrModel) -> FmrStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        *slot = ptr::null_mut();
        let model = checkpoint::load(str_arg(path, "path")?)?;
        *slot = Box::into_raw(Box::new(FmrModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fmr_model_save(model: *const FmrModel, path: *const c_char) -> FmrStatus {
    guard(|| {
        let model = handle(model, "model")?;
        checkpoint::save(&model.model, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Number of output classes.
///
/// # Safety
/// `model` must be a live handle; `out_classes` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fmr_model_num_classes(model: *const FmrModel, out_classes: *mut usize) -> FmrStatus {
    guard(|| {
        *out(out_classes, "out_classes")? = handle(model, "model")?.model.num_classes();
        Ok(())
    })
}

/// Number of `double`s in one input sample.
///
/// # Safety
/// `model` must be a live handle; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fmr_model_input_len(model: *const FmrModel, out_len: *mut usize) -> FmrStatus {
    guard(|| {
        *out(out_len, "out_len")? = handle(model, "model")?.model.input_shape().iter().product();
        Ok(())
    })
}

/// Class probabilities for `num_samples` row-major samples.
/// `input` holds `num_samples * input_len` values and `out_probs` receives
/// `num_samples * num_classes`; `out_capacity` is its length in doubles.
///
/// # Safety
/// `input` and `out_probs` must point to at least the stated number of
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn fmr_model_predict(
    model: *const FmrModel,
    input: *const f64,
    num_samples: usize,
    out_probs: *mut f64,
    out_capacity: usize,
) -> FmrStatus {
    guard(|| {
        let model = &handle(model, "model")?.model;
        if input.is_null() {
            return Err(fail(FmrStatus::NullPointer, "`input` is null"));
        }
        if out_probs.is_null() {
            return Err(fail(FmrStatus::NullPointer, "`out_probs` is null"));
        }
        if num_samples == 0 {
            return Err(fail(FmrStatus::Shape, "`num_samples` must be positive"));
        }
        let classes = model.num_classes();
        let needed = num_samples * classes;
        if out_capacity < needed {
            return Err(fail(
                FmrStatus::Shape,
                format!("`out_probs` holds {out_capacity} doubles, {needed} needed"),
            ));
        }
        let width: usize = model.input_shape().iter().product();
        let values = std::slice::from_raw_parts(input, num_samples * width).to_vec();
        let mut shape = vec![num_samples];
        shape.extend_from_slice(model.input_shape());
        let probs = model.probabilities(&Tensor::new(shape, values)?)?;
        std::slice::from_raw_parts_mut(out_probs, needed).copy_from_slice(probs.data());
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn fmr_model_free(model: *mut FmrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
