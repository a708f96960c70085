//! C ABI over the streaming engine.
//!
//! Every entry point returns a [`BrihmmStatus`]; on failure the message is
//! kept in a thread-local slot readable with [`brihmm_last_error`]. Engines
//! are opaque heap handles released with [`brihmm_engine_free`].

use std::cell::RefCell;
use std::collections::VecDeque;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use brihmm::emission::EmissionContext;
use brihmm::error::Error;
use brihmm::filter::{FilterConfig, OnlineEngine, StepOutput};
use nalgebra::{DMatrix, DVector};

/// Bumped on any incompatible change to the exported signatures or structs.
pub const BRIHMM_ABI_VERSION: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrihmmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    /// No completed tick is waiting.
    Empty = 5,
    Panic = 6,
}

/// Scalar part of one completed tick. The predictive mean and covariance are
/// copied into caller buffers by [`brihmm_engine_next_result`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BrihmmStep {
    pub tick: u64,
    pub map_state: u64,
    pub ess: f64,
    pub resampled: u8,
    pub num_active_states: f64,
}

/// Opaque engine handle.
pub struct BrihmmEngine {
    online: OnlineEngine,
    obs_noise: f64,
    param_dim: usize,
    obs_dim: usize,
    ready: VecDeque<StepOutput>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> BrihmmStatus {
    match err {
        Error::AtTick { source, .. } => status_of(source),
        Error::Numerical(_) => BrihmmStatus::Numerical,
        e if e.is_config() => BrihmmStatus::Config,
        _ => BrihmmStatus::InvalidArgument,
    }
}

fn fail(status: BrihmmStatus, msg: impl Into<String>) -> BrihmmStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> BrihmmStatus) -> BrihmmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(BrihmmStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn check(r: brihmm::error::Result<()>) -> BrihmmStatus {
    match r {
        Ok(()) => BrihmmStatus::Ok,
        Err(e) => fail(status_of(&e), e.to_string()),
    }
}

#[no_mangle]
pub extern "C" fn brihmm_abi_version() -> u32 {
    BRIHMM_ABI_VERSION
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn brihmm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn brihmm_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Create an engine from a JSON filter configuration.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn brihmm_engine_new(
    config_json: *const c_char,
    param_dim: usize,
    obs_dim: usize,
    out: *mut *mut BrihmmEngine,
) -> BrihmmStatus {
    guard(|| {
        if config_json.is_null() || out.is_null() {
            return fail(BrihmmStatus::NullPointer, "null argument to brihmm_engine_new");
        }
        *out = ptr::null_mut();
        let text = match CStr::from_ptr(config_json).to_str() {
            Ok(t) => t,
            Err(_) => return fail(BrihmmStatus::InvalidArgument, "config is not UTF-8"),
        };
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: FilterConfig = match serde_path_to_error::deserialize(de) {
            Ok(c) => c,
            Err(e) => return fail(BrihmmStatus::Config, format!("{}: {}", e.path(), e.inner())),
        };
        if let Err(e) = config.validate() {
            return fail(status_of(&e), e.to_string());
        }
        let obs_noise = config.obs_noise;
        match OnlineEngine::new(config, param_dim, obs_dim) {
            Ok(online) => {
                *out = Box::into_raw(Box::new(BrihmmEngine {
                    online,
                    obs_noise,
                    param_dim,
                    obs_dim,
                    ready: VecDeque::new(),
                }));
                BrihmmStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `engine` must come from [`brihmm_engine_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn brihmm_engine_free(engine: *mut BrihmmEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

unsafe fn context(engine: &BrihmmEngine, feature: *const f64) -> Result<EmissionContext, BrihmmStatus> {
    if feature.is_null() {
        return Err(fail(BrihmmStatus::NullPointer, "null feature matrix"));
    }
    let (d, m) = (engine.obs_dim, engine.param_dim);
    let f = std::slice::from_raw_parts(feature, d * m);
    let noise = DMatrix::identity(d, d) * engine.obs_noise;
    EmissionContext::new(DMatrix::from_row_slice(d, m, f), noise).map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn engine_mut<'a>(engine: *mut BrihmmEngine) -> Result<&'a mut BrihmmEngine, BrihmmStatus> {
    engine
        .as_mut()
        .ok_or_else(|| fail(BrihmmStatus::NullPointer, "null engine"))
}

fn copy_out(dst: *mut f64, src: &[f64]) {
    if !dst.is_null() {
        // SAFETY: callers size the buffer from the engine dimensions.
        unsafe { ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len()) };
    }
}

/// One-step-ahead predictive for the next tick, given its `obs_dim x
/// param_dim` row-major feature matrix. Writes `obs_dim` means and the
/// `obs_dim x obs_dim` covariance (row-major); either output may be null.
///
/// # Safety
/// Pointers must reference buffers of the sizes above.
#[no_mangle]
pub unsafe extern "C" fn brihmm_engine_predict(
    engine: *const BrihmmEngine,
    feature: *const f64,
    out_mean: *mut f64,
    out_cov: *mut f64,
) -> BrihmmStatus {
    guard(|| {
        let Some(engine) = engine.as_ref() else {
            return fail(BrihmmStatus::NullPointer, "null engine");
        };
        let ctx = match context(engine, feature) {
            Ok(c) => c,
            Err(s) => return s,
        };
        match engine.online.predict(&ctx) {
            Ok((mean, cov)) => {
                copy_out(out_mean, mean.as_slice());
                copy_out(out_cov, cov.transpose().as_slice());
                BrihmmStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Feed one observation. Completed ticks are queued; `out_ready` (optional)
/// receives the queue length afterwards.
///
/// # Safety
/// `feature` holds `obs_dim * param_dim` values, `y` holds `obs_dim`.
#[no_mangle]
pub unsafe extern "C" fn brihmm_engine_observe(
    engine: *mut BrihmmEngine,
    feature: *const f64,
    y: *const f64,
    out_ready: *mut usize,
) -> BrihmmStatus {
    guard(|| {
        let engine = match engine_mut(engine) {
            Ok(e) => e,
            Err(s) => return s,
        };
        if y.is_null() {
            return fail(BrihmmStatus::NullPointer, "null observation");
        }
        let ctx = match context(engine, feature) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let y = DVector::from_column_slice(std::slice::from_raw_parts(y, engine.obs_dim));
        let status = check(engine.online.observe(ctx, y).map(|o| engine.ready.extend(o)));
        if !out_ready.is_null() {
            *out_ready = engine.ready.len();
        }
        status
    })
}

/// Process a partially filled batch.
///
/// # Safety
/// `engine` must be a live handle; `out_ready` may be null.
#[no_mangle]
pub unsafe extern "C" fn brihmm_engine_flush(engine: *mut BrihmmEngine, out_ready: *mut usize) -> BrihmmStatus {
    guard(|| {
        let engine = match engine_mut(engine) {
            Ok(e) => e,
            Err(s) => return s,
        };
        let status = check(engine.online.flush().map(|o| engine.ready.extend(o)));
        if !out_ready.is_null() {
            *out_ready = engine.ready.len();
        }
        status
    })
}

/// Pop the oldest completed tick. Returns [`BrihmmStatus::Empty`] when none is
/// queued. `out_mean` / `out_cov` are sized as in [`brihmm_engine_predict`]
/// and may be null.
///
/// # Safety
/// `engine` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn brihmm_engine_next_result(
    engine: *mut BrihmmEngine,
    out: *mut BrihmmStep,
    out_mean: *mut f64,
    out_cov: *mut f64,
) -> BrihmmStatus {
    guard(|| {
        let engine = match engine_mut(engine) {
            Ok(e) => e,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(BrihmmStatus::NullPointer, "null result pointer");
        }
        let Some(step) = engine.ready.pop_front() else {
            return BrihmmStatus::Empty;
        };
        *out = BrihmmStep {
            tick: step.tick as u64,
            map_state: step.map_state,
            ess: step.ess,
            resampled: step.resampled as u8,
            num_active_states: step.num_active_states,
        };
        copy_out(out_mean, step.predictive_mean.as_slice());
        copy_out(out_cov, step.predictive_var.transpose().as_slice());
        BrihmmStatus::Ok
    })
}

/// Observations buffered towards the current batch.
///
/// # Safety
/// `engine` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn brihmm_engine_pending(engine: *const BrihmmEngine) -> usize {
    engine.as_ref().map_or(0, |e| e.online.pending())
}

/// Ticks consumed so far.
///
/// # Safety
/// `engine` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn brihmm_engine_tick(engine: *const BrihmmEngine) -> u64 {
    engine.as_ref().map_or(0, |e| e.online.engine().tick() as u64)
}
