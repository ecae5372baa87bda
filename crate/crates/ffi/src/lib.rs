//! C interface to the `rampc` crate.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_new`/`*_from_*` function and released by the matching `*_free`.
//! Functions return a [`RampcStatus`]; on failure the message is available
//! from [`rampc_last_error`] on the same thread. Strings handed out by the
//! library are owned by the caller and released with [`rampc_string_free`].
//! Panics never unwind into C; they surface as `RAMPC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rampc::config::ScenarioConfig;
use rampc::controller::OnlineController;
use rampc::sim::{build_controller, prepare_artifacts, run_closed_loop, RunLog};
use rampc::synthesis::SynthesisArtifacts;
use rampc::{DVector, Error};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RampcStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Malformed text, bad dimensions or out-of-range settings.
    InvalidInput = 2,
    /// Offline synthesis failed or its artifacts did not validate.
    Validation = 3,
    /// The tube QP had no solution.
    Infeasible = 4,
    /// No parameter is consistent with the measurements.
    Falsified = 5,
    /// Numerical failure inside a solver.
    Solver = 6,
    /// File or serialization failure.
    Io = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
}

/// A parsed scenario.
pub struct RampcScenario(ScenarioConfig);

/// Validated offline artifacts.
pub struct RampcArtifacts(SynthesisArtifacts);

/// Online controller with its estimator state.
pub struct RampcController(OnlineController);

/// Log of a closed-loop run.
pub struct RampcRunLog(RunLog);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn status_of(e: &Error) -> RampcStatus {
    match e {
        Error::Validation(_)
        | Error::ContractionUnreachable { .. }
        | Error::TerminalCostUnsatisfiable
        | Error::NotStabilizable(_) => RampcStatus::Validation,
        Error::Infeasible { .. } => RampcStatus::Infeasible,
        Error::ModelFalsified { .. } => RampcStatus::Falsified,
        Error::Solver(_) => RampcStatus::Solver,
        Error::Io(_) | Error::Json(_) => RampcStatus::Io,
        _ => RampcStatus::InvalidInput,
    }
}

/// Runs `f`, recording any error or panic for [`rampc_last_error`].
fn guard(f: impl FnOnce() -> Result<(), (RampcStatus, String)>) -> RampcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RampcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            RampcStatus::Panic
        }
    }
}

fn lib(e: Error) -> (RampcStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (RampcStatus, String) {
    (RampcStatus::NullArgument, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (RampcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (RampcStatus::InvalidInput, format!("{what} is not UTF-8")))
}

unsafe fn read_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (RampcStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn read_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (RampcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), (RampcStatus, String)> {
    let c = CString::new(s).map_err(|_| (RampcStatus::Io, "string contains a NUL byte".to_string()))?;
    *out = c.into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rampc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rampc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn rampc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a TOML scenario.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rampc_scenario_from_toml(toml: *const c_char, out: *mut *mut RampcScenario) -> RampcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(toml, "toml")?;
        let cfg = ScenarioConfig::from_toml(text).map_err(lib)?;
        write_out(out, RampcScenario(cfg));
        Ok(())
    })
}

/// Replaces the seed of the disturbance and noise streams.
///
/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rampc_scenario_set_seed(scenario: *mut RampcScenario, seed: u64) -> RampcStatus {
    guard(|| {
        let s = scenario.as_mut().ok_or_else(|| null("scenario"))?;
        s.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn rampc_scenario_free(scenario: *mut RampcScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Offline synthesis and validation for a scenario.
///
/// # Safety
/// `scenario` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rampc_synthesize(scenario: *const RampcScenario, out: *mut *mut RampcArtifacts) -> RampcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = read_ref(scenario, "scenario")?;
        let a = prepare_artifacts(&s.0).map_err(lib)?;
        write_out(out, RampcArtifacts(a));
        Ok(())
    })
}

/// Artifacts as JSON; release with [`rampc_string_free`].
///
/// # Safety
/// `artifacts` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rampc_artifacts_to_json(artifacts: *const RampcArtifacts, out: *mut *mut c_char) -> RampcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = read_ref(artifacts, "artifacts")?;
        write_string(out, a.0.to_json().map_err(lib)?)
    })
}

/// Loads artifacts previously written by [`rampc_artifacts_to_json`].
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rampc_artifacts_from_json(json: *const c_char, out: *mut *mut RampcArtifacts) -> RampcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(json, "json")?;
        let a = SynthesisArtifacts::from_json(text).map_err(|e| (RampcStatus::InvalidInput, e.to_string()))?;
        write_out(out, RampcArtifacts(a));
        Ok(())
    })
}

/// # Safety
/// `artifacts` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn rampc_artifacts_free(artifacts: *mut RampcArtifacts) {
    if !artifacts.is_null() {
        drop(Box::from_raw(artifacts));
    }
}

/// Controller for `scenario` using `artifacts`. Both handles may be freed
/// afterwards.
///
/// # Safety
/// Handles must be live and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rampc_controller_new(
    scenario: *const RampcScenario,
    artifacts: *const RampcArtifacts,
    out: *mut *mut RampcController,
) -> RampcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = read_ref(scenario, "scenario")?;
        let a = read_ref(artifacts, "artifacts")?;
        let c = build_controller(&s.0, &a.0).map_err(lib)?;
        write_out(out, RampcController(c));
        Ok(())
    })
}

/// State and input dimensions of the controller.
///
/// # Safety
/// `controller` must be a live handle; `n` and `m` writable.
#[no_mangle]
pub unsafe extern "C" fn rampc_controller_dims(controller: *const RampcController, n: *mut usize, m: *mut usize) -> RampcStatus {
    guard(|| {
        let c = read_ref(controller, "controller")?;
        if n.is_null() || m.is_null() {
            return Err(null("n or m"));
        }
        let sys = &c.0.config().artifacts.system;
        *n = sys.n();
        *m = sys.m();
        Ok(())
    })
}

/// One control step. `measured` and `reference` hold `n` entries (states
/// relative to trim), `u_abs` receives `m` absolute inputs. `flags`, when
/// not null, receives bit 0 for an infeasible QP (a fallback input was
/// returned) and bit 1 for a falsified parameter set.
///
/// # Safety
/// Buffers must hold the stated number of entries.
#[no_mangle]
pub unsafe extern "C" fn rampc_controller_step(
    controller: *mut RampcController,
    measured: *const f64,
    reference: *const f64,
    n: usize,
    u_abs: *mut f64,
    m: usize,
    flags: *mut u32,
) -> RampcStatus {
    guard(|| {
        let c = controller.as_mut().ok_or_else(|| null("controller"))?;
        let sys = &c.0.config().artifacts.system;
        if n != sys.n() || m != sys.m() {
            return Err((
                RampcStatus::InvalidInput,
                format!("expected n = {}, m = {}, got n = {n}, m = {m}", sys.n(), sys.m()),
            ));
        }
        if u_abs.is_null() {
            return Err(null("u_abs"));
        }
        let x = DVector::from_column_slice(read_slice(measured, n, "measured")?);
        let r = DVector::from_column_slice(read_slice(reference, n, "reference")?);
        let o = c.0.step(&x, &r).map_err(lib)?;
        std::slice::from_raw_parts_mut(u_abs, m).copy_from_slice(o.u_abs.as_slice());
        if !flags.is_null() {
            *flags = u32::from(o.infeasible) | (u32::from(o.falsified) << 1);
        }
        Ok(())
    })
}

/// Current parameter interval, `p` entries each.
///
/// # Safety
/// `lower` and `upper` must hold `p` entries.
#[no_mangle]
pub unsafe extern "C" fn rampc_controller_parameter_set(
    controller: *const RampcController,
    lower: *mut f64,
    upper: *mut f64,
    p: usize,
) -> RampcStatus {
    guard(|| {
        let c = read_ref(controller, "controller")?;
        let set = &c.0.estimator().theta_set;
        let (lo, hi) = (set.lower(), set.upper());
        if p != lo.len() {
            return Err((RampcStatus::InvalidInput, format!("expected p = {}, got {p}", lo.len())));
        }
        if lower.is_null() || upper.is_null() {
            return Err(null("lower or upper"));
        }
        std::slice::from_raw_parts_mut(lower, p).copy_from_slice(lo.as_slice());
        std::slice::from_raw_parts_mut(upper, p).copy_from_slice(hi.as_slice());
        Ok(())
    })
}

/// # Safety
/// `controller` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn rampc_controller_free(controller: *mut RampcController) {
    if !controller.is_null() {
        drop(Box::from_raw(controller));
    }
}

/// Simulates the scenario in closed loop.
///
/// # Safety
/// Handles must be live and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rampc_run(
    scenario: *const RampcScenario,
    artifacts: *const RampcArtifacts,
    out: *mut *mut RampcRunLog,
) -> RampcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = read_ref(scenario, "scenario")?;
        let a = read_ref(artifacts, "artifacts")?;
        let log = run_closed_loop(&s.0, &a.0).map_err(lib)?;
        write_out(out, RampcRunLog(log));
        Ok(())
    })
}

/// Number of recorded steps.
///
/// # Safety
/// `log` must be a live handle and `steps` writable.
#[no_mangle]
pub unsafe extern "C" fn rampc_runlog_steps(log: *const RampcRunLog, steps: *mut usize) -> RampcStatus {
    guard(|| {
        let l = read_ref(log, "log")?;
        if steps.is_null() {
            return Err(null("steps"));
        }
        *steps = l.0.records.len();
        Ok(())
    })
}

/// Hex SHA-256 of the log without wall-clock times; release with
/// [`rampc_string_free`].
///
/// # Safety
/// `log` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rampc_runlog_hash(log: *const RampcRunLog, out: *mut *mut c_char) -> RampcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let l = read_ref(log, "log")?;
        write_string(out, l.0.hash())
    })
}

/// The log as JSON; release with [`rampc_string_free`].
///
/// # Safety
/// `log` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rampc_runlog_to_json(log: *const RampcRunLog, out: *mut *mut c_char) -> RampcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let l = read_ref(log, "log")?;
        write_string(out, l.0.to_json().map_err(lib)?)
    })
}

/// # Safety
/// `log` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn rampc_runlog_free(log: *mut RampcRunLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}
