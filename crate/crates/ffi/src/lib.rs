//! C ABI for the qntk library: opaque model handles, status codes, and
//! flat-buffer tensor passing. See include/qntk.h for the generated header.
//!
//! Conventions:
//! - Every fallible call returns a `QntkStatus`; `QNTK_STATUS_OK` is 0.
//! - On failure, `qntk_last_error_message` returns a thread-local string
//!   valid until the next failing call on the same thread.
//! - Image buffers are row-major f32 batches of `batch * input_len` values.
//! - Handles from `qntk_model_load` are freed with `qntk_model_free`.

use libc::c_char;
use qntk::error::Error;
use qntk::io::checkpoint;
use qntk::model::Model;
use qntk::tensor::Tensor;
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

/// Opaque model handle.
pub struct QntkModel(Model);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QntkStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    IoError = 4,
    FormatError = 5,
    DomainError = 6,
    InternalError = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> QntkStatus {
    match err {
        Error::Shape(_) | Error::Trace(_) => QntkStatus::ShapeMismatch,
        Error::Domain(_) | Error::Selection { .. } => QntkStatus::DomainError,
        Error::Format { .. } => QntkStatus::FormatError,
        Error::Io(_) => QntkStatus::IoError,
        Error::Config(_) | Error::Roster(_) => QntkStatus::InvalidArgument,
        Error::Training { .. } => QntkStatus::InternalError,
    }
}

fn fail(err: Error) -> QntkStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

/// Run a fallible body, translating errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), QntkStatus>) -> QntkStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => QntkStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic");
            QntkStatus::InternalError
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qntk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. Valid until the next
/// failing call; never NULL.
#[no_mangle]
pub extern "C" fn qntk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn model_ref<'a>(model: *const QntkModel) -> Option<&'a Model> {
    (!model.is_null()).then(|| &(*model).0)
}

/// Load a checkpoint from `path` into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qntk_model_load(
    path: *const c_char,
    out: *mut *mut QntkModel,
) -> QntkStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            set_error("null path or out pointer");
            return Err(QntkStatus::NullArgument);
        }
        let path = PathBuf::from(
            CStr::from_ptr(path)
                .to_str()
                .map_err(|_| {
                    set_error("path is not UTF-8");
                    QntkStatus::InvalidArgument
                })?
                .to_string(),
        );
        let model = checkpoint::load(&path).map_err(fail)?;
        *out = Box::into_raw(Box::new(QntkModel(model)));
        Ok(())
    })
}

/// Save a model handle to `path` (atomic write).
///
/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qntk_model_save(
    model: *const QntkModel,
    path: *const c_char,
) -> QntkStatus {
    guard(|| {
        let Some(m) = model_ref(model) else {
            set_error("null model");
            return Err(QntkStatus::NullArgument);
        };
        if path.is_null() {
            set_error("null path");
            return Err(QntkStatus::NullArgument);
        }
        let path = PathBuf::from(
            CStr::from_ptr(path)
                .to_str()
                .map_err(|_| {
                    set_error("path is not UTF-8");
                    QntkStatus::InvalidArgument
                })?
                .to_string(),
        );
        checkpoint::save(m, &path).map_err(fail)?;
        Ok(())
    })
}

/// Free a handle returned by `qntk_model_load`. NULL is a no-op.
///
/// # Safety
/// `model` must originate from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn qntk_model_free(model: *mut QntkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Flat input length (product of the model's input shape); 0 on NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qntk_model_input_len(model: *const QntkModel) -> usize {
    model_ref(model).map_or(0, |m| m.input_shape().iter().product())
}

/// Number of output classes; 0 on NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qntk_model_num_classes(model: *const QntkModel) -> usize {
    model_ref(model).map_or(0, |m| m.num_classes())
}

/// Trainable parameter count; 0 on NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qntk_model_param_count(model: *const QntkModel) -> usize {
    model_ref(model).map_or(0, |m| m.param_count())
}

/// Weight bitwidth (0 = full precision); 255 on NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qntk_model_weight_bits(model: *const QntkModel) -> u8 {
    model_ref(model).map_or(255, |m| m.quant().weight_bits.as_bits())
}

unsafe fn batch_tensor(
    model: &Model,
    inputs: *const f32,
    batch: usize,
    input_len: usize,
) -> Result<Tensor, QntkStatus> {
    let expect: usize = model.input_shape().iter().product();
    if input_len != expect {
        set_error(&format!("input_len {input_len} != model input {expect}"));
        return Err(QntkStatus::ShapeMismatch);
    }
    if batch == 0 {
        set_error("empty batch");
        return Err(QntkStatus::DomainError);
    }
    let data = std::slice::from_raw_parts(inputs, batch * input_len).to_vec();
    let mut shape = vec![batch];
    shape.extend_from_slice(model.input_shape());
    Tensor::new(data, shape).map_err(|e| fail(e))
}

/// Predicted class per sample into `out_labels` (length `batch`).
///
/// # Safety
/// `inputs` must hold `batch * input_len` f32 values; `out_labels` must
/// hold `batch` u32 slots.
#[no_mangle]
pub unsafe extern "C" fn qntk_model_predict(
    model: *const QntkModel,
    inputs: *const f32,
    batch: usize,
    input_len: usize,
    out_labels: *mut u32,
) -> QntkStatus {
    guard(|| {
        let Some(m) = model_ref(model) else {
            set_error("null model");
            return Err(QntkStatus::NullArgument);
        };
        if inputs.is_null() || out_labels.is_null() {
            set_error("null buffer");
            return Err(QntkStatus::NullArgument);
        }
        let x = batch_tensor(m, inputs, batch, input_len)?;
        let preds = m.predict(&x).map_err(fail)?;
        let out = std::slice::from_raw_parts_mut(out_labels, batch);
        for (o, p) in out.iter_mut().zip(preds.iter()) {
            *o = *p as u32;
        }
        Ok(())
    })
}

/// Class probabilities into `out_probs` (length `batch * num_classes`).
///
/// # Safety
/// Buffer lengths as documented above.
#[no_mangle]
pub unsafe extern "C" fn qntk_model_forward(
    model: *const QntkModel,
    inputs: *const f32,
    batch: usize,
    input_len: usize,
    out_probs: *mut f32,
) -> QntkStatus {
    guard(|| {
        let Some(m) = model_ref(model) else {
            set_error("null model");
            return Err(QntkStatus::NullArgument);
        };
        if inputs.is_null() || out_probs.is_null() {
            set_error("null buffer");
            return Err(QntkStatus::NullArgument);
        }
        let x = batch_tensor(m, inputs, batch, input_len)?;
        let (probs, _, _) = m.forward(&x).map_err(fail)?;
        let out = std::slice::from_raw_parts_mut(out_probs, batch * m.num_classes());
        out.copy_from_slice(probs.data());
        Ok(())
    })
}

/// Fraction of samples predicted correctly, into `*out_accuracy`.
///
/// # Safety
/// `labels` must hold `batch` u32 values below the class count.
#[no_mangle]
pub unsafe extern "C" fn qntk_model_accuracy(
    model: *const QntkModel,
    inputs: *const f32,
    labels: *const u32,
    batch: usize,
    input_len: usize,
    out_accuracy: *mut f64,
) -> QntkStatus {
    guard(|| {
        let Some(m) = model_ref(model) else {
            set_error("null model");
            return Err(QntkStatus::NullArgument);
        };
        if inputs.is_null() || labels.is_null() || out_accuracy.is_null() {
            set_error("null buffer");
            return Err(QntkStatus::NullArgument);
        }
        let x = batch_tensor(m, inputs, batch, input_len)?;
        let preds = m.predict(&x).map_err(fail)?;
        let truth = std::slice::from_raw_parts(labels, batch);
        let correct = preds
            .iter()
            .zip(truth.iter())
            .filter(|(p, l)| **p as u32 == **l)
            .count();
        *out_accuracy = correct as f64 / batch as f64;
        Ok(())
    })
}

/// n-bit lattice quantization of a scalar in [0,1] into `*out`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qntk_quantize_value(value: f32, bits: u8, out: *mut f32) -> QntkStatus {
    guard(|| {
        if out.is_null() {
            set_error("null out pointer");
            return Err(QntkStatus::NullArgument);
        }
        *out = qntk::quant::quantize_k(value, bits).map_err(fail)?;
        Ok(())
    })
}

unsafe fn labels_vec(labels: *const u32, batch: usize) -> Vec<usize> {
    std::slice::from_raw_parts(labels, batch)
        .iter()
        .map(|&l| l as usize)
        .collect()
}

/// FGSM adversarial batch into `out_adv` (same length as `inputs`).
///
/// # Safety
/// Buffer lengths as documented above.
#[no_mangle]
pub unsafe extern "C" fn qntk_attack_fgsm(
    model: *const QntkModel,
    inputs: *const f32,
    labels: *const u32,
    batch: usize,
    input_len: usize,
    eps: f32,
    out_adv: *mut f32,
) -> QntkStatus {
    guard(|| {
        let Some(m) = model_ref(model) else {
            set_error("null model");
            return Err(QntkStatus::NullArgument);
        };
        if inputs.is_null() || labels.is_null() || out_adv.is_null() {
            set_error("null buffer");
            return Err(QntkStatus::NullArgument);
        }
        if !(eps >= 0.0) {
            set_error("eps must be >= 0");
            return Err(QntkStatus::InvalidArgument);
        }
        let x = batch_tensor(m, inputs, batch, input_len)?;
        let truth = labels_vec(labels, batch);
        let adv = qntk::attacks::fgsm(m, &x, &truth, &qntk::attacks::FgsmParams { eps })
            .map_err(fail)?;
        std::slice::from_raw_parts_mut(out_adv, batch * input_len)
            .copy_from_slice(adv.adversarial.data());
        Ok(())
    })
}

/// Carlini-Wagner L2 adversarial batch into `out_adv`; per-sample success
/// flags (0/1) into `out_success` when non-NULL.
///
/// # Safety
/// Buffer lengths as documented above.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn qntk_attack_cw(
    model: *const QntkModel,
    inputs: *const f32,
    labels: *const u32,
    batch: usize,
    input_len: usize,
    kappa: f32,
    iterations: usize,
    binary_search_steps: usize,
    c_init: f32,
    out_adv: *mut f32,
    out_success: *mut u8,
) -> QntkStatus {
    guard(|| {
        let Some(m) = model_ref(model) else {
            set_error("null model");
            return Err(QntkStatus::NullArgument);
        };
        if inputs.is_null() || labels.is_null() || out_adv.is_null() {
            set_error("null buffer");
            return Err(QntkStatus::NullArgument);
        }
        let params = qntk::attacks::CwParams { kappa, iterations, binary_search_steps, c_init };
        qntk::attacks::AttackConfig::Cw(params).validate().map_err(fail)?;
        let x = batch_tensor(m, inputs, batch, input_len)?;
        let truth = labels_vec(labels, batch);
        let adv = qntk::attacks::cw_l2(m, &x, &truth, &params).map_err(fail)?;
        std::slice::from_raw_parts_mut(out_adv, batch * input_len)
            .copy_from_slice(adv.adversarial.data());
        if !out_success.is_null() {
            let flags = std::slice::from_raw_parts_mut(out_success, batch);
            for (f, s) in flags.iter_mut().zip(adv.source_success.iter()) {
                *f = *s as u8;
            }
        }
        Ok(())
    })
}
