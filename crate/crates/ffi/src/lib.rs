//! C interface to the wfmpc dispatchers.
//!
//! A dispatcher is created from a scenario (a TOML path or `builtin:<name>`)
//! and used through an opaque pointer. Every function returns a
//! [`WfmpcStatus`]; the message of the last failure on the calling thread is
//! available from [`wfmpc_last_error`]. Panics never cross the boundary.

use nalgebra::DVector;
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use wfmpc::harness::{compute_metrics, HarnessError};
use wfmpc::optim::{QpError, SdpError};
use wfmpc::scenario::{load, ScenarioSource};
use wfmpc::{DispatchError, Dispatcher};

/// Result of every call. The numeric values match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WfmpcStatus {
    Ok = 0,
    /// Null pointer, wrong buffer length or invalid UTF-8.
    InvalidArgument = 1,
    /// Bad scenario, unknown controller or problem too large.
    Config = 2,
    /// Solver did not converge, plant left its envelope, or internal panic.
    Solver = 3,
    /// The constraints admit no solution.
    Infeasible = 4,
}

/// Opaque dispatcher handle.
pub struct WfmpcDispatcher {
    inner: Dispatcher,
    n: usize,
    nx: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(WfmpcStatus, String);

impl Failure {
    fn arg(msg: impl Into<String>) -> Self {
        Self(WfmpcStatus::InvalidArgument, msg.into())
    }
}

fn dispatch_status(e: &DispatchError) -> WfmpcStatus {
    match e {
        DispatchError::Config(_) | DispatchError::SizeCap(_) => WfmpcStatus::Config,
        DispatchError::ChanceInfeasible(_) | DispatchError::Qp(QpError::Infeasible(_)) | DispatchError::Sdp(SdpError::Infeasible(_)) => {
            WfmpcStatus::Infeasible
        }
        _ => WfmpcStatus::Solver,
    }
}

impl From<DispatchError> for Failure {
    fn from(e: DispatchError) -> Self {
        Self(dispatch_status(&e), e.to_string())
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let st = match &e {
            HarnessError::Config(_) | HarnessError::Io(_) => WfmpcStatus::Config,
            HarnessError::Dispatch { source, .. } => dispatch_status(source),
            HarnessError::Plant { .. } | HarnessError::Metrics(_) => WfmpcStatus::Solver,
        };
        Self(st, e.to_string())
    }
}

impl From<wfmpc::scenario::ScenarioError> for Failure {
    fn from(e: wfmpc::scenario::ScenarioError) -> Self {
        Self(WfmpcStatus::Config, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> WfmpcStatus {
    let out = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => return WfmpcStatus::Ok,
        Ok(Err(e)) => e,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            Failure(WfmpcStatus::Solver, format!("internal error: {msg}"))
        }
    };
    LAST_ERROR.with(|l| *l.borrow_mut() = out.1);
    out.0
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::arg(format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::arg(format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, want: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len != want {
        return Err(Failure::arg(format!("{what} has length {len}, expected {want}")));
    }
    if want == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::arg(format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Create a dispatcher for `scenario`.
///
/// `controller` may be null to use the scenario's own controller, or one of
/// `scheduler`, `proportional`, `edmpc`, `dmpc`, `smpc`. `n_h < 0` keeps the
/// scenario horizon. On success `*out` owns a handle to be released with
/// [`wfmpc_dispatcher_free`].
///
/// # Safety
/// `scenario` and a non-null `controller` must be NUL-terminated strings and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wfmpc_dispatcher_new(
    scenario: *const c_char,
    controller: *const c_char,
    n_h: i32,
    out: *mut *mut WfmpcDispatcher,
) -> WfmpcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::arg("out is null"));
        }
        *out = std::ptr::null_mut();
        let src = ScenarioSource::resolve(str_arg(scenario, "scenario")?)?;
        let (file, scen) = load(&src)?;
        let spec = if controller.is_null() && n_h < 0 {
            scen.controller.clone()
        } else {
            let kind = if controller.is_null() { file.controller.kind.clone() } else { str_arg(controller, "controller")?.to_string() };
            file.controller_spec(&kind, (n_h >= 0).then_some(n_h as usize))?
        };
        let model = scen.farm()?;
        let avail: Vec<f64> = scen
            .turbines
            .iter()
            .map(|t| wfmpc::dispatch::available_power_coeff(&t.model.params, &t.model.surface))
            .collect();
        let inner = Dispatcher::new(&spec, &model, scen.p_dem_wf, &avail)?;
        *out = Box::into_raw(Box::new(WfmpcDispatcher { inner, n: model.n(), nx: model.nx() }));
        Ok(())
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `h` must come from [`wfmpc_dispatcher_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wfmpc_dispatcher_free(h: *mut WfmpcDispatcher) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of turbines and length of the stacked state.
///
/// # Safety
/// `h` must be a live handle; the out pointers must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn wfmpc_dispatcher_dims(h: *const WfmpcDispatcher, n_turbines: *mut usize, n_states: *mut usize) -> WfmpcStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| Failure::arg("handle is null"))?;
        if let Some(p) = n_turbines.as_mut() {
            *p = h.n;
        }
        if let Some(p) = n_states.as_mut() {
            *p = h.nx;
        }
        Ok(())
    })
}

/// Override the solver tolerance.
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn wfmpc_dispatcher_set_tolerance(h: *mut WfmpcDispatcher, tol: f64) -> WfmpcStatus {
    guard(|| {
        let h = h.as_mut().ok_or_else(|| Failure::arg("handle is null"))?;
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Failure::arg("tol must be positive"));
        }
        h.inner.set_tolerance(tol);
        Ok(())
    })
}

/// One dispatch step.
///
/// `x` is the stacked deviation state (length `n_states`), `d` the wind
/// deviations and `v` the measured winds (both length `n_turbines`, m/s).
/// Writes the per-turbine power demands in W to `p_dem` (length
/// `n_turbines`). On failure `p_dem` is left untouched.
///
/// # Safety
/// `h` must be a live handle and each pointer valid for its stated length.
#[no_mangle]
pub unsafe extern "C" fn wfmpc_dispatch(
    h: *mut WfmpcDispatcher,
    x: *const f64,
    x_len: usize,
    d: *const f64,
    d_len: usize,
    v: *const f64,
    v_len: usize,
    p_dem: *mut f64,
    p_dem_len: usize,
) -> WfmpcStatus {
    guard(|| {
        let h = h.as_mut().ok_or_else(|| Failure::arg("handle is null"))?;
        let x = slice_arg(x, x_len, h.nx, "x")?;
        let d = slice_arg(d, d_len, h.n, "d")?;
        let v = slice_arg(v, v_len, h.n, "v")?;
        if p_dem.is_null() || p_dem_len != h.n {
            return Err(Failure::arg(format!("p_dem must hold {} values", h.n)));
        }
        if x.iter().chain(d).chain(v).any(|z| !z.is_finite()) {
            return Err(Failure::arg("non-finite input"));
        }
        let cmd = h.inner.dispatch(&DVector::from_column_slice(x), &DVector::from_column_slice(d), v)?;
        std::slice::from_raw_parts_mut(p_dem, h.n).copy_from_slice(cmd.p_dem.as_slice());
        Ok(())
    })
}

/// Run the scenario's closed loop for one seed and write
/// `[J_P, J_Ms, J_Mt, J_tilde]` to `metrics`.
///
/// # Safety
/// `scenario` must be a NUL-terminated string and `metrics` valid for 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn wfmpc_simulate(scenario: *const c_char, seed: u64, metrics: *mut f64) -> WfmpcStatus {
    guard(|| {
        if metrics.is_null() {
            return Err(Failure::arg("metrics is null"));
        }
        let src = ScenarioSource::resolve(str_arg(scenario, "scenario")?)?;
        let (_, scen) = load(&src)?;
        let r = wfmpc::simulate(&scen, seed)?;
        let m = compute_metrics(&r, scen.turbines[0].model.params.p_rated, scen.jp_norm)?;
        std::slice::from_raw_parts_mut(metrics, 4).copy_from_slice(&m.as_array());
        Ok(())
    })
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn wfmpc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|l| {
        let msg = l.borrow();
        if !buf.is_null() && len > 0 {
            let k = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, k);
            *buf.add(k) = 0;
        }
        msg.len()
    })
}
