//! C ABI over the MEMEN reader: load a checkpoint, predict answer spans for
//! JSON-encoded examples, and inspect error messages. All functions are
//! panic-free at the boundary; failures come back as status codes with a
//! thread-local message retrievable via [`memen_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use memen::data::TaggedExample;
use memen::trainer::load_checkpoint;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemenStatus {
    MemenOk = 0,
    /// A required pointer argument was null.
    MemenErrNullArgument = 1,
    /// A string argument was not valid UTF-8 or not valid JSON.
    MemenErrParse = 2,
    /// The checkpoint could not be read.
    MemenErrIo = 3,
    /// Any other failure inside the library.
    MemenErrRuntime = 4,
}

/// Opaque handle to a loaded model.
pub struct MemenModel(memen::model::MemenModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn fail(status: MemenStatus, msg: &str) -> MemenStatus {
    set_error(msg);
    status
}

fn guard<F: FnOnce() -> MemenStatus>(f: F) -> MemenStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(MemenStatus::MemenErrRuntime, "internal panic"),
    }
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, MemenStatus> {
    if p.is_null() {
        return Err(fail(MemenStatus::MemenErrNullArgument, "null string argument"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(MemenStatus::MemenErrParse, "string is not UTF-8"))
}

/// Message describing the most recent error on this thread. The pointer is
/// owned by the library and valid until the next failing call on the same
/// thread; do not free it.
#[no_mangle]
pub extern "C" fn memen_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a model checkpoint from `path` into `*out`. On success the caller
/// owns the handle and must release it with `memen_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn memen_model_load(
    path: *const c_char,
    out: *mut *mut MemenModel,
) -> MemenStatus {
    guard(|| {
        if out.is_null() {
            return fail(MemenStatus::MemenErrNullArgument, "null output pointer");
        }
        let path = match c_str(path) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match load_checkpoint(path) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(MemenModel(m)));
                MemenStatus::MemenOk
            }
            Err(e @ memen::Error::Io { .. }) => fail(MemenStatus::MemenErrIo, &e.to_string()),
            Err(e) => fail(MemenStatus::MemenErrRuntime, &e.to_string()),
        }
    })
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must be a handle from `memen_model_load`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn memen_model_free(model: *mut MemenModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predict the answer span for one example. `example_json` is a dataset
/// record: `{"id", "passage", "question", "answer_start", "answer_end",
/// "answer_text"}` with passage/question as `[word, pos, ner]` token triples.
/// On success `*out_json` receives a NUL-terminated JSON object `{"id",
/// "answer_text", "start", "end", "confidence"}`; free it with
/// `memen_string_free`.
///
/// # Safety
/// `model` must be a live handle; `example_json` a NUL-terminated string;
/// `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn memen_predict_json(
    model: *const MemenModel,
    example_json: *const c_char,
    out_json: *mut *mut c_char,
) -> MemenStatus {
    guard(|| {
        if model.is_null() || out_json.is_null() {
            return fail(MemenStatus::MemenErrNullArgument, "null model or output pointer");
        }
        let raw = match c_str(example_json) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let ex: TaggedExample = match serde_json::from_str(raw) {
            Ok(ex) => ex,
            Err(e) => return fail(MemenStatus::MemenErrParse, &format!("bad example JSON: {e}")),
        };
        let m = &(*model).0;
        let span = match m.predict(&ex) {
            Ok(s) => s,
            Err(e) => return fail(MemenStatus::MemenErrRuntime, &e.to_string()),
        };
        let record = serde_json::json!({
            "id": ex.id,
            "answer_text": memen::model::span_text(&ex, &span),
            "start": span.start,
            "end": span.end,
            "confidence": span.confidence,
        });
        let s = CString::new(record.to_string()).expect("JSON has no NUL bytes");
        *out_json = s.into_raw();
        MemenStatus::MemenOk
    })
}

/// Free a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn memen_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use memen::data::{generate_synthetic, Dataset};
    use memen::encoder::Vocabularies;
    use memen::model::ModelConfig;
    use memen::trainer::save_checkpoint;
    use std::ffi::CString;
    use std::ptr;

    fn tiny_checkpoint(dir: &std::path::Path) -> (std::path::PathBuf, Dataset) {
        let ds = generate_synthetic(1, 3, 12, (5, 7)).unwrap();
        let config = ModelConfig {
            hidden: 3,
            word_dim: 4,
            char_dim: 2,
            char_filters: 3,
            char_width: 3,
            tag_dim: 2,
            hops: 1,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        let vocabs = Vocabularies::from_dataset(&ds);
        let model = memen::model::MemenModel::new(config, vocabs, 9).unwrap();
        let path = dir.join("model.ckpt");
        save_checkpoint(&model, &path).unwrap();
        (path, ds)
    }

    #[test]
    fn load_predict_free_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (path, ds) = tiny_checkpoint(dir.path());
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        let mut handle: *mut MemenModel = ptr::null_mut();
        let st = unsafe { memen_model_load(cpath.as_ptr(), &mut handle) };
        assert_eq!(st, MemenStatus::MemenOk);
        assert!(!handle.is_null());

        let ex_json = serde_json::to_string(&ds.examples[0]).unwrap();
        let cjson = CString::new(ex_json).unwrap();
        let mut out: *mut c_char = ptr::null_mut();
        let st = unsafe { memen_predict_json(handle, cjson.as_ptr(), &mut out) };
        assert_eq!(st, MemenStatus::MemenOk);
        let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap();
        let v: serde_json::Value = serde_json::from_str(text).unwrap();
        assert_eq!(v["id"], ds.examples[0].id);
        let (s, e) = (v["start"].as_u64().unwrap(), v["end"].as_u64().unwrap());
        assert!(s >= 1 && s <= e && e <= ds.examples[0].passage.len() as u64);
        assert!(v["confidence"].as_f64().unwrap() > 0.0);
        unsafe {
            memen_string_free(out);
            memen_model_free(handle);
        }
    }

    #[test]
    fn missing_checkpoint_reports_io_error() {
        let mut handle: *mut MemenModel = ptr::null_mut();
        let cpath = CString::new("/nonexistent/model.ckpt").unwrap();
        let st = unsafe { memen_model_load(cpath.as_ptr(), &mut handle) };
        assert_eq!(st, MemenStatus::MemenErrIo);
        assert!(handle.is_null());
        let msg = unsafe { CStr::from_ptr(memen_last_error_message()) }.to_str().unwrap();
        assert!(msg.contains("model.ckpt"));
    }

    #[test]
    fn null_and_garbage_arguments_are_rejected() {
        let mut handle: *mut MemenModel = ptr::null_mut();
        assert_eq!(
            unsafe { memen_model_load(ptr::null(), &mut handle) },
            MemenStatus::MemenErrNullArgument
        );
        let cpath = CString::new("x").unwrap();
        assert_eq!(
            unsafe { memen_model_load(cpath.as_ptr(), ptr::null_mut()) },
            MemenStatus::MemenErrNullArgument
        );

        let dir = tempfile::tempdir().unwrap();
        let (path, _) = tiny_checkpoint(dir.path());
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        let st = unsafe { memen_model_load(cpath.as_ptr(), &mut handle) };
        assert_eq!(st, MemenStatus::MemenOk);
        let bad = CString::new("not json").unwrap();
        let mut out: *mut c_char = ptr::null_mut();
        assert_eq!(
            unsafe { memen_predict_json(handle, bad.as_ptr(), &mut out) },
            MemenStatus::MemenErrParse
        );
        assert_eq!(
            unsafe { memen_predict_json(ptr::null(), bad.as_ptr(), &mut out) },
            MemenStatus::MemenErrNullArgument
        );
        unsafe { memen_model_free(handle) };
        // freeing null is a no-op
        unsafe {
            memen_model_free(ptr::null_mut());
            memen_string_free(ptr::null_mut());
        }
    }

    #[test]
    fn generated_header_exists_with_exported_symbols() {
        let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/memen.h");
        let text = std::fs::read_to_string(header).unwrap();
        for sym in
            ["memen_model_load", "memen_model_free", "memen_predict_json", "memen_string_free",
             "memen_last_error_message", "MemenStatus"]
        {
            assert!(text.contains(sym), "header missing {sym}");
        }
    }
}
