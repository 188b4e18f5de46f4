//! C ABI over the evaluation toolkit.
//!
//! Every fallible call returns a [`VfStatus`]. On failure the message is kept
//! per thread and can be fetched with [`vf_last_error_message`]. Handles are
//! opaque; each `*_new`/`*_load` has a matching `*_free`. Strings handed out
//! by the library must be released with [`vf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::OnceLock;

use vlafaith::config::RunConfig;
use vlafaith::datamodel::{load_corpus, Corpus, CorpusPaths, LoadOptions};
use vlafaith::pipeline::{Evaluator, PipelineError, RunOutput, Section, TOOLKIT_VERSION};
use vlafaith::report::report_text;
use vlafaith::stats::{ksg_mi, pearson_p_value};
use vlafaith::synth::{self, PlantSpec, SynthError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Data = 5,
    Infeasible = 6,
    /// The requested report section was skipped for this corpus.
    Unavailable = 7,
    Panic = 8,
}

/// A loaded or generated corpus.
pub struct VfCorpus {
    inner: Corpus,
}

/// Evaluation settings plus the lexicon and relevance rules they name.
pub struct VfEvaluator {
    inner: Evaluator,
}

/// The result of evaluating one corpus.
pub struct VfReport {
    inner: RunOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(VfStatus, String);

impl Failure {
    fn new(status: VfStatus, msg: impl Into<String>) -> Self {
        Failure(status, msg.into())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let status = match e {
            PipelineError::Config(_) => VfStatus::InvalidArgument,
            _ => VfStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        let status = match e {
            SynthError::InfeasibleSpec(_) => VfStatus::Infeasible,
            SynthError::Spec(_) => VfStatus::InvalidArgument,
            SynthError::Io { .. } => VfStatus::Io,
            SynthError::Write(_) => VfStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VfStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            VfStatus::Panic
        }
    }
}

/// Reads a required C string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(VfStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(VfStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// Reads an optional C string; null maps to `None`.
unsafe fn opt_text<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(VfStatus::NullArgument, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(VfStatus::NullArgument, format!("{what} is null")))
}

fn to_c(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::new(VfStatus::Data, "output contains a NUL byte"))
}

/// Library version as a static NUL-terminated string. Do not free.
#[no_mangle]
pub extern "C" fn vf_version() -> *const c_char {
    static VERSION: OnceLock<CString> = OnceLock::new();
    VERSION
        .get_or_init(|| CString::new(TOOLKIT_VERSION).expect("version has no NUL"))
        .as_ptr()
}

/// Message for the last failed call on this thread, or null if it succeeded.
/// The pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn vf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn vf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads `records.jsonl`, `obstacles.jsonl` and `futures.jsonl` from `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vf_corpus_load(dir: *const c_char, strict: bool, out: *mut *mut VfCorpus) -> VfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let dir = PathBuf::from(text(dir, "dir")?);
        let corpus = load_corpus(&CorpusPaths::in_dir(&dir), LoadOptions { strict })
            .map_err(|e| Failure::new(VfStatus::Data, e.to_string()))?;
        *out = Box::into_raw(Box::new(VfCorpus { inner: corpus }));
        Ok(())
    })
}

/// Generates a planted corpus. `spec_json` may be null for the default spec.
/// With a non-null `out_dir` the corpus and its ground-truth ledger are also
/// written there.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vf_corpus_synth(
    spec_json: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut VfCorpus,
) -> VfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let spec: PlantSpec = match opt_text(spec_json, "spec_json")? {
            Some(s) => serde_json::from_str(s).map_err(|e| Failure::new(VfStatus::InvalidArgument, e.to_string()))?,
            None => PlantSpec::default(),
        };
        let (corpus, ledger) = synth::generate(&spec)?;
        if let Some(dir) = opt_text(out_dir, "out_dir")? {
            synth::write(dir, &corpus, &ledger)?;
        }
        *out = Box::into_raw(Box::new(VfCorpus { inner: corpus }));
        Ok(())
    })
}

/// # Safety
/// `corpus` must be a live handle; `records` and `pairs` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vf_corpus_counts(corpus: *const VfCorpus, records: *mut usize, pairs: *mut usize) -> VfStatus {
    guard(|| {
        let c = &handle(corpus, "corpus")?.inner;
        *out_ptr(records, "records")? = c.records().len();
        *out_ptr(pairs, "pairs")? = c.pair_count();
        Ok(())
    })
}

/// # Safety
/// `corpus` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vf_corpus_free(corpus: *mut VfCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Builds an evaluator from a TOML configuration; null means defaults.
///
/// # Safety
/// `config_toml` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vf_evaluator_new(config_toml: *const c_char, out: *mut *mut VfEvaluator) -> VfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let config = match opt_text(config_toml, "config_toml")? {
            Some(s) => RunConfig::from_toml_str(s, "<config>")
                .map_err(|e| Failure::new(VfStatus::InvalidArgument, e.to_string()))?,
            None => RunConfig::default(),
        };
        let ev = Evaluator::new(config)?;
        *out = Box::into_raw(Box::new(VfEvaluator { inner: ev }));
        Ok(())
    })
}

/// # Safety
/// `evaluator` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vf_evaluator_free(evaluator: *mut VfEvaluator) {
    if !evaluator.is_null() {
        drop(Box::from_raw(evaluator));
    }
}

/// Runs every phase over `corpus`.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vf_evaluate(
    evaluator: *const VfEvaluator,
    corpus: *const VfCorpus,
    out: *mut *mut VfReport,
) -> VfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ev = &handle(evaluator, "evaluator")?.inner;
        let corpus = &handle(corpus, "corpus")?.inner;
        let run = ev.run(corpus)?;
        *out = Box::into_raw(Box::new(VfReport { inner: run }));
        Ok(())
    })
}

/// The full report as pretty JSON. Free the string with [`vf_string_free`].
///
/// # Safety
/// `report` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vf_report_json(report: *const VfReport, out: *mut *mut c_char) -> VfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let r = &handle(report, "report")?.inner.report;
        let json = serde_json::to_string_pretty(r).map_err(|e| Failure::new(VfStatus::Data, e.to_string()))?;
        *out = to_c(json)?;
        Ok(())
    })
}

/// The report as plain-text tables plus footer. Free with [`vf_string_free`].
///
/// # Safety
/// `report` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vf_report_text(report: *const VfReport, out: *mut *mut c_char) -> VfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let r = &handle(report, "report")?.inner.report;
        *out = to_c(report_text(r).map_err(|e| Failure::new(VfStatus::Data, e.to_string()))?)?;
        Ok(())
    })
}

/// Mean overall fidelity; [`VfStatus::Unavailable`] when no record has
/// obstacle context.
///
/// # Safety
/// `report` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vf_report_overall_fidelity(report: *const VfReport, out: *mut f64) -> VfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        match &handle(report, "report")?.inner.report.fidelity {
            Section::Done(f) => {
                *out = f.overall.mean;
                Ok(())
            }
            Section::Skipped { skipped } => Err(Failure::new(VfStatus::Unavailable, skipped.clone())),
        }
    })
}

/// Number of pairs of each outcome, in the order faithful, silent failure,
/// reason-only shift, robust.
///
/// # Safety
/// `report` must be live; `counts` must point to four writable values.
#[no_mangle]
pub unsafe extern "C" fn vf_report_outcome_counts(report: *const VfReport, counts: *mut usize) -> VfStatus {
    guard(|| {
        if counts.is_null() {
            return Err(Failure::new(VfStatus::NullArgument, "counts is null"));
        }
        let r = &handle(report, "report")?.inner.report;
        let Section::Done(p) = &r.perturbation else {
            return Err(Failure::new(VfStatus::Unavailable, "corpus has no perturbation pairs"));
        };
        let counts = std::slice::from_raw_parts_mut(counts, 4);
        for (slot, kind) in counts.iter_mut().zip(vlafaith::counterfactual::OutcomeKind::ALL) {
            *slot = p.kinds.get(&kind).map_or(0, |k| k.count);
        }
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vf_report_free(report: *mut VfReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Two-sided p-value of a Pearson correlation `r` over `n` points.
///
/// # Safety
/// `p_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vf_pearson_p_value(r: f64, n: usize, p_value: *mut f64) -> VfStatus {
    guard(|| {
        let out = out_ptr(p_value, "p_value")?;
        if !(-1.0..=1.0).contains(&r) || n < 3 {
            return Err(Failure::new(
                VfStatus::InvalidArgument,
                format!("need |r| <= 1 and n >= 3, got r={r}, n={n}"),
            ));
        }
        *out = pearson_p_value(r, n).1;
        Ok(())
    })
}

/// k-nearest-neighbour mutual information estimate in nats, clamped at zero.
///
/// # Safety
/// `x` and `y` must each point to `n` readable values; `nats` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vf_ksg_mi(
    x: *const f64,
    y: *const f64,
    n: usize,
    k: usize,
    seed: u64,
    nats: *mut f64,
) -> VfStatus {
    guard(|| {
        let out = out_ptr(nats, "nats")?;
        if x.is_null() || y.is_null() {
            return Err(Failure::new(VfStatus::NullArgument, "x or y is null"));
        }
        let (xs, ys) = (std::slice::from_raw_parts(x, n), std::slice::from_raw_parts(y, n));
        let est = ksg_mi(xs, ys, k, seed).map_err(|e| Failure::new(VfStatus::InvalidArgument, e.to_string()))?;
        *out = est.nats;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_a_status() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, VfStatus::Panic);
        let msg = unsafe { CStr::from_ptr(vf_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "panic: boom");
    }

    #[test]
    fn success_clears_the_last_error() {
        set_last_error("stale");
        assert_eq!(guard(|| Ok(())), VfStatus::Ok);
        assert!(vf_last_error_message().is_null());
    }

    #[test]
    fn interior_nul_is_reported() {
        assert!(to_c("a\0b".into()).is_err());
        let p = to_c("fine".into()).ok().unwrap();
        unsafe { vf_string_free(p) };
    }
}
