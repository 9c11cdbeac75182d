//! C ABI over `ipl-core`.
//!
//! Objects are opaque handles created by `ipl_*_load`, `ipl_*_synth`, `ipl_pool_filter` or
//! `ipl_run` and released with the matching `*_free`. Every fallible call returns an
//! [`IplStatus`]; on failure [`ipl_last_error`] describes the error for the calling thread.
//! Strings returned through out-parameters are owned by the caller and released with
//! [`ipl_string_free`]. Configuration is passed as JSON text; a null pointer selects defaults.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ipl_core::prompt::PromptState;
use ipl_core::scheduler::{self, Metrics, RunConfig, RunResult, RunTrace};
use ipl_core::store::synth::{self, SynthConfig};
use ipl_core::store::{self as core_store, Store};
use ipl_core::vocab::{filter_vocab, CandidatePool, FilterConfig};
use ipl_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IplStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    Integrity = 5,
    Config = 6,
    State = 7,
    Precondition = 8,
    Numeric = 9,
    NotFound = 10,
    Domain = 11,
    Size = 12,
    Json = 13,
    OutOfRange = 14,
    Panic = 15,
}

/// Opaque embedding store.
pub struct IplStore(Store);

/// Opaque candidate pool.
pub struct IplPool(CandidatePool);

/// Opaque finished run: trace, trained prompt and evaluation metrics.
pub struct IplRun {
    trace: RunTrace,
    state: PromptState,
    metrics: Metrics,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IplStoreInfo {
    pub dim: usize,
    pub tokens: usize,
    pub images: usize,
    pub classes: usize,
    pub vocab: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IplMetrics {
    pub base: f64,
    pub novel: f64,
    pub hm: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(IplStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => IplStatus::Io,
            Error::Format(_) => IplStatus::Format,
            Error::Integrity(_) => IplStatus::Integrity,
            Error::Config(_) => IplStatus::Config,
            Error::State(_) => IplStatus::State,
            Error::Precondition(_) => IplStatus::Precondition,
            Error::Numeric(_) => IplStatus::Numeric,
            Error::NotFound(_) => IplStatus::NotFound,
            Error::Domain(_) => IplStatus::Domain,
            Error::Size(_) => IplStatus::Size,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IplStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            IplStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside ipl");
            IplStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(IplStatus::NullArgument, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(IplStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn json_or_default<T: serde::de::DeserializeOwned + Default>(p: *const c_char, what: &str) -> Result<T, Failure> {
    if p.is_null() {
        return Ok(T::default());
    }
    serde_json::from_str(text(p, what)?).map_err(|e| Failure(IplStatus::Json, format!("{what}: {e}")))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn owned_string(s: &str) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(IplStatus::InvalidUtf8, "string contains a NUL byte".into()))
}

/// Message for the last failed call on this thread; empty after a success. The pointer stays
/// valid until the next `ipl_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ipl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ipl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ipl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a store directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ipl_store_load(dir: *const c_char, out_store: *mut *mut IplStore) -> IplStatus {
    guard(|| {
        let slot = out(out_store, "out_store")?;
        *slot = ptr::null_mut();
        let store = core_store::load_store(Path::new(text(dir, "dir")?))?;
        *slot = Box::into_raw(Box::new(IplStore(store)));
        Ok(())
    })
}

/// Generates a synthetic store. `config_json` may be null for defaults.
///
/// # Safety
/// `config_json` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ipl_store_synth(
    config_json: *const c_char,
    seed: u64,
    out_store: *mut *mut IplStore,
) -> IplStatus {
    guard(|| {
        let slot = out(out_store, "out_store")?;
        *slot = ptr::null_mut();
        let cfg: SynthConfig = json_or_default(config_json, "config_json")?;
        let store = synth::generate(&cfg, seed)?;
        *slot = Box::into_raw(Box::new(IplStore(store)));
        Ok(())
    })
}

/// Writes the store to a directory.
///
/// # Safety
/// `store` must be a live handle; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ipl_store_save(store: *const IplStore, dir: *const c_char) -> IplStatus {
    guard(|| {
        let s = obj(store, "store")?;
        core_store::save_store(&s.0, Path::new(text(dir, "dir")?))?;
        Ok(())
    })
}

/// # Safety
/// `store` must be a live handle; `info` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ipl_store_info(store: *const IplStore, info: *mut IplStoreInfo) -> IplStatus {
    guard(|| {
        let s = &obj(store, "store")?.0;
        *out(info, "info")? = IplStoreInfo {
            dim: s.dim(),
            tokens: s.tokens().rows(),
            images: s.dataset().images.rows(),
            classes: s.dataset().num_classes(),
            vocab: s.vocab().len(),
        };
        Ok(())
    })
}

/// # Safety
/// `store` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ipl_store_free(store: *mut IplStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Filters the store vocabulary. `filter_json` may be null for defaults.
///
/// # Safety
/// `store` must be a live handle; `filter_json` null or NUL-terminated; `out_pool` writable.
#[no_mangle]
pub unsafe extern "C" fn ipl_pool_filter(
    store: *const IplStore,
    filter_json: *const c_char,
    out_pool: *mut *mut IplPool,
) -> IplStatus {
    guard(|| {
        let slot = out(out_pool, "out_pool")?;
        *slot = ptr::null_mut();
        let s = obj(store, "store")?;
        let cfg: FilterConfig = json_or_default(filter_json, "filter_json")?;
        let (pool, _) = filter_vocab(s.0.vocab(), &cfg);
        *slot = Box::into_raw(Box::new(IplPool(pool)));
        Ok(())
    })
}

/// # Safety
/// `pool` must be a live handle; `len` writable.
#[no_mangle]
pub unsafe extern "C" fn ipl_pool_len(pool: *const IplPool, len: *mut usize) -> IplStatus {
    guard(|| {
        *out(len, "len")? = obj(pool, "pool")?.0.len();
        Ok(())
    })
}

/// Word at `index`; the caller frees it with [`ipl_string_free`].
///
/// # Safety
/// `pool` must be a live handle; `word` writable.
#[no_mangle]
pub unsafe extern "C" fn ipl_pool_word(pool: *const IplPool, index: usize, word: *mut *mut c_char) -> IplStatus {
    guard(|| {
        let slot = out(word, "word")?;
        *slot = ptr::null_mut();
        let p = &obj(pool, "pool")?.0;
        let e = p
            .entries()
            .get(index)
            .ok_or_else(|| Failure(IplStatus::OutOfRange, format!("index {index} of {}", p.len())))?;
        *slot = owned_string(&e.word)?;
        Ok(())
    })
}

/// # Safety
/// `pool` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ipl_pool_free(pool: *mut IplPool) {
    if !pool.is_null() {
        drop(Box::from_raw(pool));
    }
}

/// Runs selection and training, then evaluates. `config_json` may be null for defaults.
///
/// # Safety
/// `store` and `pool` must be live handles; `config_json` null or NUL-terminated;
/// `out_run` writable.
#[no_mangle]
pub unsafe extern "C" fn ipl_run(
    store: *const IplStore,
    pool: *const IplPool,
    config_json: *const c_char,
    out_run: *mut *mut IplRun,
) -> IplStatus {
    guard(|| {
        let slot = out(out_run, "out_run")?;
        *slot = ptr::null_mut();
        let s = &obj(store, "store")?.0;
        let p = &obj(pool, "pool")?.0;
        let cfg: RunConfig = json_or_default(config_json, "config_json")?;
        let RunResult { trace, state } = scheduler::run(s, p, &cfg)?;
        let metrics = scheduler::evaluate(&state, s)?;
        *slot = Box::into_raw(Box::new(IplRun { trace, state, metrics }));
        Ok(())
    })
}

/// # Safety
/// `run` must be a live handle; `metrics` writable.
#[no_mangle]
pub unsafe extern "C" fn ipl_run_metrics(run: *const IplRun, metrics: *mut IplMetrics) -> IplStatus {
    guard(|| {
        let m = obj(run, "run")?.metrics;
        *out(metrics, "metrics")? = IplMetrics { base: m.base, novel: m.novel, hm: m.hm };
        Ok(())
    })
}

/// # Safety
/// `run` must be a live handle; `count` writable.
#[no_mangle]
pub unsafe extern "C" fn ipl_run_selected_count(run: *const IplRun, count: *mut usize) -> IplStatus {
    guard(|| {
        *out(count, "count")? = obj(run, "run")?.trace.selection_steps.len();
        Ok(())
    })
}

/// Selected word at `index`, in selection order; the caller frees it.
///
/// # Safety
/// `run` must be a live handle; `word` writable.
#[no_mangle]
pub unsafe extern "C" fn ipl_run_selected_word(run: *const IplRun, index: usize, word: *mut *mut c_char) -> IplStatus {
    guard(|| {
        let slot = out(word, "word")?;
        *slot = ptr::null_mut();
        let steps = &obj(run, "run")?.trace.selection_steps;
        let s = steps
            .get(index)
            .ok_or_else(|| Failure(IplStatus::OutOfRange, format!("index {index} of {}", steps.len())))?;
        *slot = owned_string(&s.chosen)?;
        Ok(())
    })
}

/// The run trace as JSON; the caller frees it.
///
/// # Safety
/// `run` must be a live handle; `json` writable.
#[no_mangle]
pub unsafe extern "C" fn ipl_run_trace_json(run: *const IplRun, json: *mut *mut c_char) -> IplStatus {
    guard(|| {
        let slot = out(json, "json")?;
        *slot = ptr::null_mut();
        let t = &obj(run, "run")?.trace;
        let text = serde_json::to_string(t).map_err(|e| Failure(IplStatus::Json, e.to_string()))?;
        *slot = owned_string(&text)?;
        Ok(())
    })
}

/// Writes trace, metrics, selected words, gains and checkpoint into `dir`.
///
/// # Safety
/// `run` must be a live handle; `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ipl_run_write(run: *const IplRun, dir: *const c_char) -> IplStatus {
    guard(|| {
        let r = obj(run, "run")?;
        let dir = Path::new(text(dir, "dir")?);
        let result = RunResult { trace: r.trace.clone(), state: r.state.clone() };
        scheduler::write_run_outputs(dir, &result, &r.metrics)?;
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ipl_run_free(run: *mut IplRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// `2ab/(a+b)` for accuracies in percent.
///
/// # Safety
/// `out_hm` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ipl_harmonic_mean(base: f64, novel: f64, out_hm: *mut f64) -> IplStatus {
    guard(|| {
        let slot = out(out_hm, "out_hm")?;
        *slot = scheduler::harmonic_mean(base, novel)?;
        Ok(())
    })
}
