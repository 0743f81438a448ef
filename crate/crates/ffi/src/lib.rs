//! C interface to the aerotext classifier.
//!
//! Every function returns an [`AtxStatus`]. On failure a description is
//! available from [`atx_last_error_message`] on the same thread until the
//! next call. Models are opaque [`AtxModel`] handles released with
//! [`atx_model_free`]. Class codes: 0 Commercial, 1 Military, 2 Private.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use aerotext::corpus::OperatorClass;
use aerotext::evaluation::{classification_report, confusion_matrix};
use aerotext::training::{load_checkpoint, CheckpointError, ModelCheckpoint};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    CorruptCheckpoint = 4,
    VersionUnsupported = 5,
    InvalidArgument = 6,
    Model = 7,
    Panic = 8,
}

/// Opaque loaded checkpoint.
pub struct AtxModel {
    checkpoint: ModelCheckpoint,
}

/// Metrics for three classes, indexed by class code. `confusion` is
/// row-major with rows = actual, columns = predicted.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AtxReport {
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub f1: [f64; 3],
    pub support: [u64; 3],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub total: u64,
    pub confusion: [u64; 9],
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

type FfiResult = Result<(), (AtxStatus, String)>;

fn guard(f: impl FnOnce() -> FfiResult) -> AtxStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AtxStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            AtxStatus::Panic
        }
    }
}

fn null(what: &str) -> (AtxStatus, String) {
    (AtxStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (AtxStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (AtxStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn checkpoint_error(e: CheckpointError) -> (AtxStatus, String) {
    let status = match e {
        CheckpointError::VersionUnsupported(_) => AtxStatus::VersionUnsupported,
        CheckpointError::CorruptCheckpoint(_) => AtxStatus::CorruptCheckpoint,
        CheckpointError::Io(_) => AtxStatus::Io,
    };
    (status, e.to_string())
}

fn store(out: *mut *mut AtxModel, checkpoint: ModelCheckpoint) {
    let handle = Box::new(AtxModel { checkpoint });
    unsafe { *out = Box::into_raw(handle) };
}

/// Loads a checkpoint file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn atx_model_load(path: *const c_char, out: *mut *mut AtxModel) -> AtxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let file = File::open(path).map_err(|e| (AtxStatus::Io, format!("{path}: {e}")))?;
        let ckpt = load_checkpoint(BufReader::new(file)).map_err(checkpoint_error)?;
        store(out, ckpt);
        Ok(())
    })
}

/// Loads a checkpoint from memory.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn atx_model_load_bytes(data: *const u8, len: usize, out: *mut *mut AtxModel) -> AtxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if data.is_null() {
            return Err(null("data"));
        }
        let bytes = std::slice::from_raw_parts(data, len);
        let ckpt = ModelCheckpoint::from_bytes(bytes).map_err(checkpoint_error)?;
        store(out, ckpt);
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from a load function and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn atx_model_free(model: *mut AtxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Classifies one raw narrative. Writes three probabilities to `probs_out`
/// and the predicted class code to `class_out`.
///
/// # Safety
/// `model` must be a live handle, `text` NUL-terminated, `probs_out` room for
/// three doubles, `class_out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn atx_model_predict(
    model: *const AtxModel,
    text: *const c_char,
    probs_out: *mut f64,
    class_out: *mut i32,
) -> AtxStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let text = str_arg(text, "text")?;
        if probs_out.is_null() {
            return Err(null("probs_out"));
        }
        if class_out.is_null() {
            return Err(null("class_out"));
        }
        let ck = &model.checkpoint;
        let seq = ck.preprocessor.encode(text);
        let (class, probs) = ck.model.predict(&seq).map_err(|e| (AtxStatus::Model, e.to_string()))?;
        ptr::copy_nonoverlapping(probs.as_ptr(), probs_out, 3);
        *class_out = class.code() as i32;
        Ok(())
    })
}

/// Sequence length the model expects, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn atx_model_max_len(model: *const AtxModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.preprocessor.max_len)
}

/// Static name for a class code, or null if the code is unknown.
#[no_mangle]
pub extern "C" fn atx_class_name(code: i32) -> *const c_char {
    let name: &'static [u8] = match usize::try_from(code).ok().and_then(OperatorClass::from_code) {
        Some(OperatorClass::Commercial) => b"Commercial\0",
        Some(OperatorClass::Military) => b"Military\0",
        Some(OperatorClass::Private) => b"Private\0",
        None => return ptr::null(),
    };
    name.as_ptr().cast()
}

/// Builds the confusion matrix and report from `n` class codes.
///
/// # Safety
/// `predictions` and `labels` must each point to `n` readable values and
/// `out` to a writable report.
#[no_mangle]
pub unsafe extern "C" fn atx_classification_report(
    predictions: *const i32,
    labels: *const i32,
    n: usize,
    out: *mut AtxReport,
) -> AtxStatus {
    guard(|| {
        if predictions.is_null() || labels.is_null() {
            return Err(null("predictions or labels"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if n == 0 {
            return Err((AtxStatus::InvalidArgument, "no samples".into()));
        }
        let classes = |p: *const i32, what: &str| {
            std::slice::from_raw_parts(p, n)
                .iter()
                .map(|&c| {
                    usize::try_from(c)
                        .ok()
                        .and_then(OperatorClass::from_code)
                        .ok_or_else(|| (AtxStatus::InvalidArgument, format!("{what} contains class code {c}")))
                })
                .collect::<Result<Vec<_>, _>>()
        };
        let p = classes(predictions, "predictions")?;
        let l = classes(labels, "labels")?;
        let invalid = |e: aerotext::evaluation::EvaluationError| (AtxStatus::InvalidArgument, e.to_string());
        let cm = confusion_matrix(&p, &l).map_err(invalid)?;
        let r = classification_report(&cm).map_err(invalid)?;
        let mut report = AtxReport {
            macro_precision: r.macro_avg.precision,
            macro_recall: r.macro_avg.recall,
            macro_f1: r.macro_avg.f1,
            weighted_precision: r.weighted.precision,
            weighted_recall: r.weighted.recall,
            weighted_f1: r.weighted.f1,
            accuracy: r.accuracy,
            total: r.total,
            ..AtxReport::default()
        };
        for m in &r.per_class {
            let i = m.class.code();
            report.precision[i] = m.precision;
            report.recall[i] = m.recall;
            report.f1[i] = m.f1;
            report.support[i] = m.support;
        }
        for (i, row) in cm.counts().iter().enumerate() {
            report.confusion[i * 3..i * 3 + 3].copy_from_slice(row);
        }
        *out = report;
        Ok(())
    })
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn atx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn atx_version() -> *const c_char {
    const V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    V.as_ptr().cast()
}
