//! C ABI over the intopt library.
//!
//! Conventions: every fallible call returns an [`IntoptStatus`] and writes
//! results through out-pointers. On failure a message is available from
//! [`intopt_last_error`] on the same thread. Strings returned to the caller
//! are owned by the caller and must be released with [`intopt_string_free`];
//! opaque handles have their own `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use intopt::kb::KnowledgeBase;
use intopt::pipeline::prompts::{render, TemplateKind};
use intopt::report::{classify_ratio, load_results, Outcome};
use intopt::retrieval::{build_index, RetrievalHit, TfIdfIndex};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntoptStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidArgument = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntoptPromptKind {
    Formulation = 0,
    Refinement = 1,
    Realization = 2,
    Baseline = 3,
    Distillation = 4,
    Harness = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntoptOutcome {
    Loss = -1,
    Tie = 0,
    Win = 1,
}

/// One `{name}` -> value substitution for [`intopt_render_prompt`].
#[repr(C)]
pub struct IntoptSlot {
    pub name: *const c_char,
    pub value: *const c_char,
}

/// Loaded knowledge base.
pub struct IntoptKb(KnowledgeBase);

/// TF-IDF index over a knowledge base.
pub struct IntoptIndex(TfIdfIndex);

/// Ranked retrieval result. Pass ids are kept as C strings so the pointers
/// handed out stay valid for the lifetime of the handle.
pub struct IntoptHits {
    hits: Vec<RetrievalHit>,
    ids: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(IntoptStatus, String);

impl Failure {
    fn new(status: IntoptStatus, msg: impl ToString) -> Self {
        Failure(status, msg.to_string())
    }
}

/// Runs `f`, translating failures and panics into a status plus last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IntoptStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IntoptStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            IntoptStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(IntoptStatus::NullArgument, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(IntoptStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn out_arg<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(IntoptStatus::NullArgument, format!("{what} is NULL")))
    } else {
        Ok(())
    }
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes replaced").into_raw()
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next intopt call on the same thread.
#[no_mangle]
pub extern "C" fn intopt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn intopt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library and not have been freed yet (NULL is ignored).
#[no_mangle]
pub unsafe extern "C" fn intopt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ----------------------------------------------------------------- KB

/// Loads a kb.json file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn intopt_kb_load(path: *const c_char, out: *mut *mut IntoptKb) -> IntoptStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let kb = KnowledgeBase::load(Path::new(path)).map_err(|e| match e {
            intopt::kb::KbError::Io { .. } => Failure::new(IntoptStatus::Io, e),
            _ => Failure::new(IntoptStatus::Parse, e),
        })?;
        *out = Box::into_raw(Box::new(IntoptKb(kb)));
        Ok(())
    })
}

/// Number of passes (0 for NULL).
///
/// # Safety
/// `kb` must be NULL or a live handle from [`intopt_kb_load`].
#[no_mangle]
pub unsafe extern "C" fn intopt_kb_len(kb: *const IntoptKb) -> usize {
    kb.as_ref().map_or(0, |k| k.0.len())
}

/// # Safety
/// `kb` must be NULL or a live handle from [`intopt_kb_load`].
#[no_mangle]
pub unsafe extern "C" fn intopt_kb_free(kb: *mut IntoptKb) {
    if !kb.is_null() {
        drop(Box::from_raw(kb));
    }
}

// ---------------------------------------------------------- retrieval

/// Builds the retrieval index. The index does not borrow `kb`.
///
/// # Safety
/// `kb` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn intopt_index_build(kb: *const IntoptKb, out: *mut *mut IntoptIndex) -> IntoptStatus {
    guard(|| {
        out_arg(out, "out")?;
        let kb = kb
            .as_ref()
            .ok_or_else(|| Failure::new(IntoptStatus::NullArgument, "kb is NULL"))?;
        let index = build_index(&kb.0).map_err(|e| Failure::new(IntoptStatus::InvalidArgument, e))?;
        *out = Box::into_raw(Box::new(IntoptIndex(index)));
        Ok(())
    })
}

/// # Safety
/// `index` must be NULL or a live handle from [`intopt_index_build`].
#[no_mangle]
pub unsafe extern "C" fn intopt_index_free(index: *mut IntoptIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Top-`m` passes for `query`. An empty result (no shared vocabulary) is
/// not an error.
///
/// # Safety
/// `index` must be a live handle, `query` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn intopt_retrieve(
    index: *const IntoptIndex,
    query: *const c_char,
    m: usize,
    out: *mut *mut IntoptHits,
) -> IntoptStatus {
    guard(|| {
        out_arg(out, "out")?;
        let index = index
            .as_ref()
            .ok_or_else(|| Failure::new(IntoptStatus::NullArgument, "index is NULL"))?;
        let query = str_arg(query, "query")?;
        let hits = index
            .0
            .retrieve(query, m)
            .map_err(|e| Failure::new(IntoptStatus::InvalidArgument, e))?;
        let ids = hits.iter().map(|h| CString::new(h.pass_id.clone()).unwrap_or_default()).collect();
        *out = Box::into_raw(Box::new(IntoptHits { hits, ids }));
        Ok(())
    })
}

/// # Safety
/// `hits` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn intopt_hits_len(hits: *const IntoptHits) -> usize {
    hits.as_ref().map_or(0, |h| h.hits.len())
}

/// Pass id of hit `i` (rank `i + 1`), or NULL when out of range. Owned by
/// the handle.
///
/// # Safety
/// `hits` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn intopt_hits_pass_id(hits: *const IntoptHits, i: usize) -> *const c_char {
    hits.as_ref()
        .and_then(|h| h.ids.get(i))
        .map_or(std::ptr::null(), |s| s.as_ptr())
}

/// Score of hit `i`, or -1 when out of range.
///
/// # Safety
/// `hits` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn intopt_hits_score(hits: *const IntoptHits, i: usize) -> f64 {
    hits.as_ref().and_then(|h| h.hits.get(i)).map_or(-1.0, |h| h.score)
}

/// # Safety
/// `hits` must be NULL or a live handle from [`intopt_retrieve`].
#[no_mangle]
pub unsafe extern "C" fn intopt_hits_free(hits: *mut IntoptHits) {
    if !hits.is_null() {
        drop(Box::from_raw(hits));
    }
}

// ------------------------------------------------------------- prompts

fn template_kind(k: IntoptPromptKind) -> TemplateKind {
    match k {
        IntoptPromptKind::Formulation => TemplateKind::Formulation,
        IntoptPromptKind::Refinement => TemplateKind::Refinement,
        IntoptPromptKind::Realization => TemplateKind::Realization,
        IntoptPromptKind::Baseline => TemplateKind::Baseline,
        IntoptPromptKind::Distillation => TemplateKind::Distillation,
        IntoptPromptKind::Harness => TemplateKind::Harness,
    }
}

/// Renders a built-in stage template. Every slot the template uses must be
/// present in `slots` (`n_slots` entries); extra slots are ignored.
///
/// # Safety
/// `slots` must point to `n_slots` valid entries (may be NULL when
/// `n_slots == 0`); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn intopt_render_prompt(
    kind: IntoptPromptKind,
    slots: *const IntoptSlot,
    n_slots: usize,
    out: *mut *mut c_char,
) -> IntoptStatus {
    guard(|| {
        out_arg(out, "out")?;
        if slots.is_null() && n_slots > 0 {
            return Err(Failure::new(IntoptStatus::NullArgument, "slots is NULL"));
        }
        let raw = if n_slots == 0 { &[][..] } else { std::slice::from_raw_parts(slots, n_slots) };
        let mut values = Vec::with_capacity(n_slots);
        for s in raw {
            values.push((str_arg(s.name, "slot name")?, str_arg(s.value, "slot value")?));
        }
        let text = render(template_kind(kind).builtin(), &values)
            .map_err(|e| Failure::new(IntoptStatus::InvalidArgument, e))?;
        *out = c_string(text);
        Ok(())
    })
}

// ----------------------------------------------------------- numbers

/// Baseline time over optimized time; 0 for incorrect programs or a
/// non-positive optimized time.
#[no_mangle]
pub extern "C" fn intopt_speedup(avg_ns_base: f64, avg_ns_opt: f64, correct: bool) -> f64 {
    intopt::bench::speedup(avg_ns_base, avg_ns_opt, correct)
}

/// Win/tie/loss of `ratio` against the inclusive band `[lo, hi]`.
#[no_mangle]
pub extern "C" fn intopt_classify_ratio(ratio: f64, lo: f64, hi: f64) -> IntoptOutcome {
    match classify_ratio(ratio, (lo, hi)) {
        Outcome::Loss => IntoptOutcome::Loss,
        Outcome::Tie => IntoptOutcome::Tie,
        Outcome::Win => IntoptOutcome::Win,
    }
}

/// Markdown summary table for a results.jsonl file.
///
/// # Safety
/// `results_path` and `label` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn intopt_report_markdown(
    results_path: *const c_char,
    label: *const c_char,
    out: *mut *mut c_char,
) -> IntoptStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(results_path, "results_path")?;
        let label = str_arg(label, "label")?;
        let report = load_results(Path::new(path)).map_err(|e| match e {
            intopt::report::ReportError::Io(_) => Failure::new(IntoptStatus::Io, e),
            _ => Failure::new(IntoptStatus::Parse, e),
        })?;
        *out = c_string(report.to_markdown(label));
        Ok(())
    })
}

/// Report summary as JSON (counts, rates, average speedup, buckets).
///
/// # Safety
/// `results_path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn intopt_report_json(results_path: *const c_char, out: *mut *mut c_char) -> IntoptStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(results_path, "results_path")?;
        let report = load_results(Path::new(path)).map_err(|e| match e {
            intopt::report::ReportError::Io(_) => Failure::new(IntoptStatus::Io, e),
            _ => Failure::new(IntoptStatus::Parse, e),
        })?;
        let v = serde_json::json!({
            "n_programs": report.n_programs,
            "correct_alive2": report.correct_alive2,
            "correct_combined": report.correct_combined,
            "correctness_alive2": report.correctness_alive2,
            "correctness_combined": report.correctness_combined,
            "avg_speedup": report.avg_speedup,
            "buckets": report.buckets,
        });
        *out = c_string(v.to_string());
        Ok(())
    })
}
