//! C ABI over the kgfuse detector.
//!
//! Every function returns a [`KgfStatus`]; on failure a description is
//! available from [`kgf_last_error`] on the same thread until the next call.
//! Handles are opaque and must be released with [`kgf_detector_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kgfuse::corpus::Label;
use kgfuse::knowledge::{load_kg, parse_kg, KnowledgeGraph};
use kgfuse::model::{load_model, model_from_json, predicted_label, Model};
use kgfuse::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgfStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    Io = 3,
    /// Malformed model, graph or corpus content.
    Parse = 4,
    /// Well-formed input that violates a model or graph invariant.
    Validation = 5,
    Config = 6,
    Numeric = 7,
    Generation = 8,
    /// An internal panic was caught at the boundary.
    Panic = 9,
}

/// Predicted class, benign on ties.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgfLabel {
    Benign = 0,
    Harmful = 1,
}

/// A loaded model together with the knowledge graph used for entity linking.
pub struct KgfDetector {
    model: Model,
    kg: KnowledgeGraph,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> KgfStatus {
    match err {
        Error::Io { .. } => KgfStatus::Io,
        Error::Parse { .. } | Error::Json { .. } => KgfStatus::Parse,
        Error::Dimension(_) | Error::Validation(_) => KgfStatus::Validation,
        Error::Config(_) => KgfStatus::Config,
        Error::Numeric(_) => KgfStatus::Numeric,
        Error::Generation(_) => KgfStatus::Generation,
    }
}

struct Failure(KgfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KgfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KgfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            KgfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(KgfStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(KgfStatus::InvalidUtf8, format!("{name}: {e}")))
}

fn null(name: &str) -> Failure {
    Failure(KgfStatus::NullArgument, format!("{name} is null"))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn kgf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or null after a
/// successful call. Valid until the next kgf_* call on the same thread.
#[no_mangle]
pub extern "C" fn kgf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a model file and a knowledge-graph file.
///
/// # Safety
/// Both paths must be null or nul-terminated strings; `out` must be null or
/// point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn kgf_detector_load(
    model_path: *const c_char,
    kg_path: *const c_char,
    out: *mut *mut KgfDetector,
) -> KgfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model_path = str_arg(model_path, "model_path")?;
        let kg_path = str_arg(kg_path, "kg_path")?;
        let kg = load_kg(kg_path)?;
        let model = load_model(model_path)?;
        *out = Box::into_raw(Box::new(KgfDetector { model, kg }));
        Ok(())
    })
}

/// Builds a detector from in-memory model and knowledge-graph JSON.
///
/// # Safety
/// As for [`kgf_detector_load`].
#[no_mangle]
pub unsafe extern "C" fn kgf_detector_from_json(
    model_json: *const c_char,
    kg_json: *const c_char,
    out: *mut *mut KgfDetector,
) -> KgfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model_json = str_arg(model_json, "model_json")?;
        let kg_json = str_arg(kg_json, "kg_json")?;
        let kg = parse_kg(kg_json, Path::new("<kg_json>"))?;
        let model = model_from_json(model_json, Path::new("<model_json>"))?;
        *out = Box::into_raw(Box::new(KgfDetector { model, kg }));
        Ok(())
    })
}

/// Releases a detector. Null is accepted and ignored.
///
/// # Safety
/// `detector` must be null or a handle returned by this library that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn kgf_detector_free(detector: *mut KgfDetector) {
    if !detector.is_null() {
        drop(Box::from_raw(detector));
    }
}

/// Scores one text. Either output pointer may be null when not needed.
///
/// # Safety
/// `detector` must be a live handle; `text` a nul-terminated string; outputs
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn kgf_detector_predict(
    detector: *const KgfDetector,
    text: *const c_char,
    out_p_harmful: *mut f64,
    out_label: *mut KgfLabel,
) -> KgfStatus {
    guard(|| {
        let det = detector.as_ref().ok_or_else(|| null("detector"))?;
        let text = str_arg(text, "text")?;
        let probs = det.model.predict_text(text, &det.kg)?;
        if let Some(p) = out_p_harmful.as_mut() {
            *p = probs[Label::Harmful.index()];
        }
        if let Some(l) = out_label.as_mut() {
            *l = match predicted_label(&probs) {
                Label::Benign => KgfLabel::Benign,
                Label::Harmful => KgfLabel::Harmful,
            };
        }
        Ok(())
    })
}

/// Embedding width of the loaded model.
///
/// # Safety
/// `detector` must be a live handle; `out_dim` writable.
#[no_mangle]
pub unsafe extern "C" fn kgf_detector_dim(detector: *const KgfDetector, out_dim: *mut usize) -> KgfStatus {
    guard(|| {
        let det = detector.as_ref().ok_or_else(|| null("detector"))?;
        *out_dim.as_mut().ok_or_else(|| null("out_dim"))? = det.model.hyper.dim;
        Ok(())
    })
}

/// Runs the built-in finite-difference gradient check and reports the
/// largest relative error. A large error is reported through the output,
/// not the status.
///
/// # Safety
/// `out_max_error` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kgf_gradcheck(seed: u64, out_max_error: *mut f64) -> KgfStatus {
    guard(|| {
        let out = out_max_error.as_mut().ok_or_else(|| null("out_max_error"))?;
        *out = kgfuse::gradcheck::self_check(seed)?.max_error;
        Ok(())
    })
}
