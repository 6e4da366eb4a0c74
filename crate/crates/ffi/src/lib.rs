//! C ABI over the core toolkit: opaque handles, status codes, and a
//! cbindgen-generated header (`include/forge.h`) so other languages can
//! drive scoring and ontology lookups.
//!
//! Conventions: every function returns a [`ForgeStatus`]; results go to out
//! pointers. Strings cross the boundary as NUL-terminated UTF-8. Strings
//! allocated here must be released with [`forge_string_free`], handles with
//! their `_free` function. All functions are panic-safe.

use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use forge_core::eval::tasks;
use forge_core::linearize::{parse_and_validate, ParseMode, ParseOutcome, TargetObject};
use forge_core::wikidata::Ontology;

/// Status code for every FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForgeStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Input text is not well-formed JSON.
    DecodeError = 3,
    /// Well-formed JSON that violates the target schema.
    SchemaError = 4,
    /// File could not be read or parsed.
    IoError = 5,
    /// Lookup key absent (unknown qid, metric not defined for the input).
    NotFound = 6,
    /// Unexpected internal failure.
    InternalError = 7,
}

/// Evaluation subtask selector for [`forge_score_pair`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForgeTask {
    MentionDetection = 0,
    EntityLinking = 1,
    EntityTyping = 2,
    OpenRelationExtraction = 3,
    DescriptionGeneration = 4,
    AliasGeneration = 5,
}

/// Opaque ontology handle.
pub struct ForgeOntology {
    inner: Ontology,
}

fn guarded(f: impl FnOnce() -> ForgeStatus) -> ForgeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => ForgeStatus::InternalError,
    }
}

/// Borrow a C string argument as &str.
///
/// # Safety
/// `ptr` must be NULL or a valid NUL-terminated string.
unsafe fn arg_str<'a>(ptr: *const c_char) -> Result<&'a str, ForgeStatus> {
    if ptr.is_null() {
        return Err(ForgeStatus::NullArgument);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| ForgeStatus::InvalidUtf8)
}

fn write_out<T>(out: *mut T, value: T) -> Result<(), ForgeStatus> {
    if out.is_null() {
        return Err(ForgeStatus::NullArgument);
    }
    unsafe { out.write(value) };
    Ok(())
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn forge_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Release a string allocated by this library.
///
/// # Safety
/// `s` must be NULL or a pointer previously returned by a forge function
/// that allocates a string, and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn forge_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// ROUGE-L F1 between two texts after metric tokenization.
///
/// # Safety
/// `candidate` and `reference` must be valid NUL-terminated strings;
/// `out_f1` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn forge_rouge_l_f1(
    candidate: *const c_char,
    reference: *const c_char,
    out_f1: *mut f64,
) -> ForgeStatus {
    guarded(|| {
        let (cand, reference) = match (unsafe { arg_str(candidate) }, unsafe { arg_str(reference) }) {
            (Ok(c), Ok(r)) => (c, r),
            (Err(e), _) | (_, Err(e)) => return e,
        };
        let f1 = forge_core::eval::rouge::rouge_l_f1_str(cand, reference);
        match write_out(out_f1, f1) {
            Ok(()) => ForgeStatus::Ok,
            Err(e) => e,
        }
    })
}

fn copy_message(buf: *mut c_char, cap: usize, message: &str) {
    if buf.is_null() || cap == 0 {
        return;
    }
    let bytes = message.as_bytes();
    let n = bytes.len().min(cap - 1);
    unsafe {
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
        *buf.add(n) = 0;
    }
}

/// Validate model output text against the target schema.
///
/// Returns `Ok`, `DecodeError` or `SchemaError`; when a buffer is given the
/// error message (with position or path) is copied into it.
///
/// # Safety
/// `text` must be a valid NUL-terminated string; `error_buf` must be NULL
/// or point to at least `error_cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn forge_validate_output(
    text: *const c_char,
    strict: bool,
    error_buf: *mut c_char,
    error_cap: usize,
) -> ForgeStatus {
    guarded(|| {
        let text = match unsafe { arg_str(text) } {
            Ok(t) => t,
            Err(e) => return e,
        };
        let mode = if strict { ParseMode::Strict } else { ParseMode::Lenient };
        match parse_and_validate(text, mode) {
            ParseOutcome::Ok(_) => ForgeStatus::Ok,
            ParseOutcome::DecodeError { position, message } => {
                copy_message(error_buf, error_cap, &format!("{}:{}: {message}", position.0, position.1));
                ForgeStatus::DecodeError
            }
            ParseOutcome::SchemaError { path, message } => {
                copy_message(error_buf, error_cap, &format!("{path}: {message}"));
                ForgeStatus::SchemaError
            }
        }
    })
}

/// Open an ontology snapshot file (as written by `forge ingest-wikidata`).
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be a valid
/// pointer. A non-NULL handle must be released with [`forge_ontology_free`].
#[no_mangle]
pub unsafe extern "C" fn forge_ontology_open(
    path: *const c_char,
    out: *mut *mut ForgeOntology,
) -> ForgeStatus {
    guarded(|| {
        let path = match unsafe { arg_str(path) } {
            Ok(p) => p,
            Err(e) => return e,
        };
        if out.is_null() {
            return ForgeStatus::NullArgument;
        }
        let reader = match forge_core::jsonl::open_input(std::path::Path::new(path)) {
            Ok(r) => r,
            Err(_) => return ForgeStatus::IoError,
        };
        match Ontology::read_snapshot(reader) {
            Ok(inner) => {
                let handle = Box::into_raw(Box::new(ForgeOntology { inner }));
                unsafe { out.write(handle) };
                ForgeStatus::Ok
            }
            Err(_) => ForgeStatus::IoError,
        }
    })
}

/// Release an ontology handle.
///
/// # Safety
/// `ontology` must be NULL or a handle from [`forge_ontology_open`] not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn forge_ontology_free(ontology: *mut ForgeOntology) {
    if !ontology.is_null() {
        drop(unsafe { Box::from_raw(ontology) });
    }
}

unsafe fn borrow_ontology<'a>(ptr: *const ForgeOntology) -> Result<&'a Ontology, ForgeStatus> {
    if ptr.is_null() {
        return Err(ForgeStatus::NullArgument);
    }
    Ok(&unsafe { &*ptr }.inner)
}

/// Number of entities in the snapshot.
///
/// # Safety
/// `ontology` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn forge_ontology_entity_count(
    ontology: *const ForgeOntology,
    out: *mut usize,
) -> ForgeStatus {
    guarded(|| {
        let onto = match unsafe { borrow_ontology(ontology) } {
            Ok(o) => o,
            Err(e) => return e,
        };
        match write_out(out, onto.entities.len()) {
            Ok(()) => ForgeStatus::Ok,
            Err(e) => e,
        }
    })
}

/// Whether the snapshot contains the entity (seen/unseen boundary check).
///
/// # Safety
/// `ontology` must be a live handle; `qid` a valid string; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn forge_ontology_contains(
    ontology: *const ForgeOntology,
    qid: *const c_char,
    out: *mut bool,
) -> ForgeStatus {
    guarded(|| {
        let onto = match unsafe { borrow_ontology(ontology) } {
            Ok(o) => o,
            Err(e) => return e,
        };
        let qid = match unsafe { arg_str(qid) } {
            Ok(q) => q,
            Err(e) => return e,
        };
        match write_out(out, onto.entities.contains_key(qid)) {
            Ok(()) => ForgeStatus::Ok,
            Err(e) => e,
        }
    })
}

/// Canonical title of an entity (label, falling back to the linked page
/// title). The returned string must be freed with [`forge_string_free`].
///
/// # Safety
/// `ontology` must be a live handle; `qid` a valid string; `out_title`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn forge_ontology_title(
    ontology: *const ForgeOntology,
    qid: *const c_char,
    out_title: *mut *mut c_char,
) -> ForgeStatus {
    guarded(|| {
        let onto = match unsafe { borrow_ontology(ontology) } {
            Ok(o) => o,
            Err(e) => return e,
        };
        let qid = match unsafe { arg_str(qid) } {
            Ok(q) => q,
            Err(e) => return e,
        };
        if out_title.is_null() {
            return ForgeStatus::NullArgument;
        }
        match forge_core::wikidata::resolve_entity_profile(qid, onto) {
            Ok(profile) => match CString::new(profile.title) {
                Ok(s) => {
                    unsafe { out_title.write(s.into_raw()) };
                    ForgeStatus::Ok
                }
                Err(_) => ForgeStatus::InternalError,
            },
            Err(_) => ForgeStatus::NotFound,
        }
    })
}

/// Score one prediction against one gold target, both as target-schema JSON
/// text. `threshold` is the title threshold for entity linking and the
/// match threshold for open relation extraction; other tasks ignore it.
///
/// The gold text must validate strictly. An invalid prediction scores zero
/// on every task, mirroring the harness. For description generation the
/// mean ROUGE-L lands in all three outputs, and `NotFound` is returned when
/// the gold carries no descriptions (metric absent).
///
/// # Safety
/// `gold_json` and `pred_json` must be valid NUL-terminated strings; the
/// out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn forge_score_pair(
    gold_json: *const c_char,
    pred_json: *const c_char,
    task: ForgeTask,
    threshold: f64,
    out_precision: *mut f64,
    out_recall: *mut f64,
    out_f1: *mut f64,
) -> ForgeStatus {
    guarded(|| {
        let (gold_text, pred_text) =
            match (unsafe { arg_str(gold_json) }, unsafe { arg_str(pred_json) }) {
                (Ok(g), Ok(p)) => (g, p),
                (Err(e), _) | (_, Err(e)) => return e,
            };
        if out_precision.is_null() || out_recall.is_null() || out_f1.is_null() {
            return ForgeStatus::NullArgument;
        }
        let gold = match parse_and_validate(gold_text, ParseMode::Strict) {
            ParseOutcome::Ok(g) => g,
            ParseOutcome::DecodeError { .. } => return ForgeStatus::DecodeError,
            ParseOutcome::SchemaError { .. } => return ForgeStatus::SchemaError,
        };
        let pred = parse_and_validate(pred_text, ParseMode::Strict)
            .ok()
            .unwrap_or_default();

        let write3 = |p: f64, r: f64, f1: f64| unsafe {
            out_precision.write(p);
            out_recall.write(r);
            out_f1.write(f1);
        };
        let prf = match task {
            ForgeTask::MentionDetection => tasks::score_mention_detection(&pred, &gold).prf(),
            ForgeTask::EntityLinking => tasks::score_entity_linking(&pred, &gold, threshold).prf(),
            ForgeTask::EntityTyping => tasks::score_entity_typing(&pred, &gold).prf(),
            ForgeTask::OpenRelationExtraction => tasks::score_open_re(&pred, &gold, threshold).prf(),
            ForgeTask::AliasGeneration => tasks::score_aliases(&pred, &gold).prf(),
            ForgeTask::DescriptionGeneration => {
                return match tasks::score_description(&pred, &gold).mean() {
                    Some(mean) => {
                        write3(mean, mean, mean);
                        ForgeStatus::Ok
                    }
                    None => ForgeStatus::NotFound,
                }
            }
        };
        write3(prf.precision, prf.recall, prf.f1);
        ForgeStatus::Ok
    })
}

// Keep TargetObject in scope for the unparseable-prediction default.
impl ForgeOntology {
    fn _assert_types(_t: TargetObject) {}
}
