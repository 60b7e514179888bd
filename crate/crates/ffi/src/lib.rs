//! C ABI for the controller: opaque handles, integer error codes, and a
//! thread-local last-error message.
//!
//! The generated header lives at `include/ilmpc.h` and is kept in sync with
//! this file by hand; `tests/header_sync.rs` checks that every exported
//! symbol is declared there.
//!
//! Conventions:
//! - Every function returns an `IlmpcStatus` unless it is a pure accessor.
//! - Out-parameters are written only on `ILMPC_OK`.
//! - Handles are created and destroyed by this library only; passing a null
//!   or foreign pointer is an error (null is checked, foreign is UB as usual).

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use libc::{c_char, c_double, c_int, size_t};

use ilmpc::config::Config;
use ilmpc::error::Error;
use ilmpc::io;
use ilmpc::nn::{Certificate, Policy};
use ilmpc::solver::{cold_start, mpc_step, OcpProblem, SolveStatus, SolverConfig, WarmStart};
use ilmpc::task::{
    wheel_velocities_with_convention, Input, State, TaskSpec, WheelGeometry,
};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IlmpcStatus {
    IlmpcOk = 0,
    IlmpcNullPointer = 1,
    IlmpcInvalidArgument = 2,
    IlmpcIoError = 3,
    IlmpcParseError = 4,
    IlmpcSolverError = 5,
    IlmpcSafetyViolation = 6,
    IlmpcInternalError = 7,
}

use IlmpcStatus::*;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").expect("empty"));
}

fn set_last_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&ch| ch != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("nul-free");
    });
}

fn status_of(err: &Error) -> IlmpcStatus {
    match err {
        Error::Config(_) | Error::Contract(_) => IlmpcInvalidArgument,
        Error::Io(_) => IlmpcIoError,
        Error::Parse(_) => IlmpcParseError,
        Error::Solver(_) | Error::InfeasibleWarmStart(_) => IlmpcSolverError,
        Error::Safety(_) => IlmpcSafetyViolation,
        _ => IlmpcInternalError,
    }
}

fn fail(err: &Error) -> IlmpcStatus {
    set_last_error(&err.to_string());
    status_of(err)
}

/// Runs a closure, converting panics into `IlmpcInternalError`.
fn guarded<F: FnOnce() -> IlmpcStatus>(f: F) -> IlmpcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            IlmpcInternalError
        }
    }
}

unsafe fn cstr_arg(ptr: *const c_char) -> Result<PathBuf, IlmpcStatus> {
    if ptr.is_null() {
        set_last_error("null string argument");
        return Err(IlmpcNullPointer);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_last_error("string argument is not valid UTF-8");
            Err(IlmpcInvalidArgument)
        }
    }
}

/// Message of the most recent error on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ilmpc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ilmpc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opaque task handle.
pub struct IlmpcTask {
    task: TaskSpec,
    solver: SolverConfig,
}

/// Opaque certificate handle.
pub struct IlmpcCertificate {
    cert: Certificate,
}

/// Opaque policy handle.
pub struct IlmpcPolicy {
    policy: Policy,
}

/// Opaque receding-horizon controller session.
pub struct IlmpcController {
    task: TaskSpec,
    solver: SolverConfig,
    cert: Certificate,
    policy: Policy,
    warm: Option<WarmStart>,
    t: usize,
}

/// Creates a task (plus solver settings) from a TOML config file.
///
/// # Safety
/// `config_path` must be a valid NUL-terminated string and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn ilmpc_task_from_config(
    config_path: *const c_char,
    out: *mut *mut IlmpcTask,
) -> IlmpcStatus {
    guarded(|| {
        if out.is_null() {
            set_last_error("null out pointer");
            return IlmpcNullPointer;
        }
        let path = match cstr_arg(config_path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let config = match Config::load(&path) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        };
        let task = match config.task_spec() {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        *out = Box::into_raw(Box::new(IlmpcTask {
            task,
            solver: config.solver,
        }));
        IlmpcOk
    })
}

/// Creates the standard benchmark task with default settings.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ilmpc_task_benchmark(out: *mut *mut IlmpcTask) -> IlmpcStatus {
    guarded(|| {
        if out.is_null() {
            set_last_error("null out pointer");
            return IlmpcNullPointer;
        }
        let config = Config::default();
        let task = match config.task_spec() {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        *out = Box::into_raw(Box::new(IlmpcTask {
            task,
            solver: config.solver,
        }));
        IlmpcOk
    })
}

/// # Safety
/// `task` must come from a task constructor (or be null, which is a no-op).
#[no_mangle]
pub unsafe extern "C" fn ilmpc_task_free(task: *mut IlmpcTask) {
    if !task.is_null() {
        drop(Box::from_raw(task));
    }
}

/// State dimension of the task.
///
/// # Safety
/// `task` must be a valid task handle.
#[no_mangle]
pub unsafe extern "C" fn ilmpc_task_state_dim(task: *const IlmpcTask) -> size_t {
    if task.is_null() {
        return 0;
    }
    (*task).task.state_dim
}

/// Input dimension of the task.
///
/// # Safety
/// `task` must be a valid task handle.
#[no_mangle]
pub unsafe extern "C" fn ilmpc_task_input_dim(task: *const IlmpcTask) -> size_t {
    if task.is_null() {
        return 0;
    }
    (*task).task.input_dim
}

/// True (1) when the state lies in an obstacle or outside the domain box.
///
/// # Safety
/// `task` must be valid; `state` must point to `state_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn ilmpc_task_state_unsafe(
    task: *const IlmpcTask,
    state: *const c_double,
    state_len: size_t,
    out: *mut c_int,
) -> IlmpcStatus {
    guarded(|| {
        if task.is_null() || state.is_null() || out.is_null() {
            set_last_error("null pointer");
            return IlmpcNullPointer;
        }
        let task = &(*task).task;
        if state_len != task.state_dim {
            set_last_error("state length does not match the task");
            return IlmpcInvalidArgument;
        }
        let x = State(std::slice::from_raw_parts(state, state_len).to_vec());
        *out = c_int::from(task.in_unsafe(&x));
        IlmpcOk
    })
}

/// Loads a certificate parameter file.
///
/// # Safety
/// `path` must be a valid string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ilmpc_certificate_load(
    path: *const c_char,
    out: *mut *mut IlmpcCertificate,
) -> IlmpcStatus {
    guarded(|| {
        if out.is_null() {
            set_last_error("null out pointer");
            return IlmpcNullPointer;
        }
        let path = match cstr_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match io::load_certificate(&path) {
            Ok(cert) => {
                *out = Box::into_raw(Box::new(IlmpcCertificate { cert }));
                IlmpcOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `cert` must come from `ilmpc_certificate_load` (or be null).
#[no_mangle]
pub unsafe extern "C" fn ilmpc_certificate_free(cert: *mut IlmpcCertificate) {
    if !cert.is_null() {
        drop(Box::from_raw(cert));
    }
}

/// Evaluates the certificate value `V(x)`.
///
/// # Safety
/// `cert` must be valid; `state` must point to `state_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ilmpc_certificate_value(
    cert: *const IlmpcCertificate,
    state: *const c_double,
    state_len: size_t,
    out: *mut c_double,
) -> IlmpcStatus {
    guarded(|| {
        if cert.is_null() || state.is_null() || out.is_null() {
            set_last_error("null pointer");
            return IlmpcNullPointer;
        }
        let x = std::slice::from_raw_parts(state, state_len);
        match (*cert).cert.value(x) {
            Ok(v) => {
                *out = v;
                IlmpcOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Certificate level `c` (the terminal set is `V(x) <= c`).
///
/// # Safety
/// `cert` must be a valid certificate handle.
#[no_mangle]
pub unsafe extern "C" fn ilmpc_certificate_level(cert: *const IlmpcCertificate) -> c_double {
    if cert.is_null() {
        return f64::NAN;
    }
    (*cert).cert.level
}

/// Loads a policy parameter file.
///
/// # Safety
/// `path` must be a valid string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ilmpc_policy_load(
    path: *const c_char,
    out: *mut *mut IlmpcPolicy,
) -> IlmpcStatus {
    guarded(|| {
        if out.is_null() {
            set_last_error("null out pointer");
            return IlmpcNullPointer;
        }
        let path = match cstr_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match io::load_policy(&path) {
            Ok(policy) => {
                *out = Box::into_raw(Box::new(IlmpcPolicy { policy }));
                IlmpcOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `policy` must come from `ilmpc_policy_load` (or be null).
#[no_mangle]
pub unsafe extern "C" fn ilmpc_policy_free(policy: *mut IlmpcPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Evaluates the learned policy action.
///
/// # Safety
/// `policy` must be valid; `state`/`action` must point to buffers of the
/// stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ilmpc_policy_action(
    policy: *const IlmpcPolicy,
    state: *const c_double,
    state_len: size_t,
    action: *mut c_double,
    action_len: size_t,
) -> IlmpcStatus {
    guarded(|| {
        if policy.is_null() || state.is_null() || action.is_null() {
            set_last_error("null pointer");
            return IlmpcNullPointer;
        }
        let policy = &(*policy).policy;
        if action_len != policy.action_dim() {
            set_last_error("action buffer length does not match the policy");
            return IlmpcInvalidArgument;
        }
        let x = std::slice::from_raw_parts(state, state_len);
        match policy.action(x) {
            Ok(u) => {
                std::slice::from_raw_parts_mut(action, action_len).copy_from_slice(&u);
                IlmpcOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Creates a receding-horizon controller session. The task handle is copied;
/// the certificate and policy handles are copied too and may be freed
/// afterwards.
///
/// # Safety
/// All handles must be valid; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ilmpc_controller_new(
    task: *const IlmpcTask,
    cert: *const IlmpcCertificate,
    policy: *const IlmpcPolicy,
    out: *mut *mut IlmpcController,
) -> IlmpcStatus {
    guarded(|| {
        if task.is_null() || cert.is_null() || policy.is_null() || out.is_null() {
            set_last_error("null pointer");
            return IlmpcNullPointer;
        }
        let task_ref = &*task;
        *out = Box::into_raw(Box::new(IlmpcController {
            task: task_ref.task.clone(),
            solver: task_ref.solver,
            cert: (*cert).cert.clone(),
            policy: (*policy).policy.clone(),
            warm: None,
            t: 0,
        }));
        IlmpcOk
    })
}

/// # Safety
/// `controller` must come from `ilmpc_controller_new` (or be null).
#[no_mangle]
pub unsafe extern "C" fn ilmpc_controller_free(controller: *mut IlmpcController) {
    if !controller.is_null() {
        drop(Box::from_raw(controller));
    }
}

/// Resets the internal warm start and time counter (start of an iteration).
///
/// # Safety
/// `controller` must be a valid controller handle.
#[no_mangle]
pub unsafe extern "C" fn ilmpc_controller_reset(controller: *mut IlmpcController) -> IlmpcStatus {
    guarded(|| {
        if controller.is_null() {
            set_last_error("null pointer");
            return IlmpcNullPointer;
        }
        let c = &mut *controller;
        c.warm = None;
        c.t = 0;
        IlmpcOk
    })
}

/// One receding-horizon step from the measured state: solves the horizon
/// problem, returns the input to apply, and shifts the warm start.
///
/// # Safety
/// `controller` must be valid; `state` must point to `state_len` doubles and
/// `action` to `action_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ilmpc_controller_step(
    controller: *mut IlmpcController,
    state: *const c_double,
    state_len: size_t,
    action: *mut c_double,
    action_len: size_t,
) -> IlmpcStatus {
    guarded(|| {
        if controller.is_null() || state.is_null() || action.is_null() {
            set_last_error("null pointer");
            return IlmpcNullPointer;
        }
        let c = &mut *controller;
        if state_len != c.task.state_dim || action_len != c.task.input_dim {
            set_last_error("state/action lengths do not match the task");
            return IlmpcInvalidArgument;
        }
        let x = State(std::slice::from_raw_parts(state, state_len).to_vec());
        if c.task.in_unsafe(&x) {
            set_last_error("measured state lies in the unsafe set");
            return IlmpcSafetyViolation;
        }
        let warm = match c.warm.take() {
            Some(w) => w,
            None => match cold_start(&c.policy, &c.task, &x) {
                Ok(w) => w,
                Err(e) => return fail(&e),
            },
        };
        let problem = OcpProblem::new(&c.task, &c.cert, x, c.t);
        match mpc_step(&problem, &warm, &c.policy, &c.solver) {
            Ok((u, next_warm, solution)) => {
                if solution.status == SolveStatus::InfeasibleFallback {
                    set_last_error("solver fell back to the shifted warm start");
                }
                std::slice::from_raw_parts_mut(action, action_len).copy_from_slice(&u.0);
                c.warm = Some(next_warm);
                c.t += 1;
                IlmpcOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Converts body velocity to wheel speeds:
/// `v_r = (v - omega L / 2) / R`, `v_l = (v + omega L / 2) / R`.
/// `swap_convention != 0` exchanges the pair.
///
/// # Safety
/// `v_right` and `v_left` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ilmpc_wheel_velocities(
    wheel_radius: c_double,
    wheelbase: c_double,
    v: c_double,
    omega: c_double,
    swap_convention: c_int,
    v_right: *mut c_double,
    v_left: *mut c_double,
) -> IlmpcStatus {
    guarded(|| {
        if v_right.is_null() || v_left.is_null() {
            set_last_error("null pointer");
            return IlmpcNullPointer;
        }
        let geometry = match WheelGeometry::new(wheel_radius, wheelbase) {
            Ok(g) => g,
            Err(e) => return fail(&e),
        };
        let (r, l) = wheel_velocities_with_convention(geometry, v, omega, swap_convention != 0);
        *v_right = r;
        *v_left = l;
        IlmpcOk
    })
}

/// Simulates one step of the task's prediction model (for nominal loops).
///
/// # Safety
/// `task` must be valid; `state`, `input` and `next` must point to buffers of
/// the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ilmpc_task_step(
    task: *const IlmpcTask,
    state: *const c_double,
    state_len: size_t,
    input: *const c_double,
    input_len: size_t,
    next: *mut c_double,
) -> IlmpcStatus {
    guarded(|| {
        if task.is_null() || state.is_null() || input.is_null() || next.is_null() {
            set_last_error("null pointer");
            return IlmpcNullPointer;
        }
        let task = &(*task).task;
        if state_len != task.state_dim || input_len != task.input_dim {
            set_last_error("state/input lengths do not match the task");
            return IlmpcInvalidArgument;
        }
        let x = State(std::slice::from_raw_parts(state, state_len).to_vec());
        let u = Input(std::slice::from_raw_parts(input, input_len).to_vec());
        match task.step(&x, &u) {
            Ok(xn) => {
                std::slice::from_raw_parts_mut(next, state_len).copy_from_slice(xn.as_slice());
                IlmpcOk
            }
            Err(e) => fail(&e),
        }
    })
}
