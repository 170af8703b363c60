//! C ABI over the `uaddpg` crate.
//!
//! Every fallible function returns a [`UaStatus`]; on failure a message is
//! available from [`ua_last_error`] on the same thread. Handles are opaque
//! pointers owned by the caller and released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use uaddpg::agent::{Agent, Checkpoint};
use uaddpg::envs::{Env, EnvConfig};
use uaddpg::harness::{self, RunConfig};
use uaddpg::rng::{stream, Stream};
use uaddpg::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Checkpoint = 4,
    Io = 5,
    Usage = 6,
    Panic = 7,
}

/// Loaded agent, used for greedy inference.
pub struct UaAgent {
    agent: Agent,
}

/// An environment instance.
pub struct UaEnv {
    env: Box<dyn Env>,
}

/// Uncertainty estimates for one inference step.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct UaUncertainty {
    pub eu: f64,
    pub au: f64,
    pub warned: bool,
}

/// Result of one environment step.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct UaStepInfo {
    pub reward: f64,
    pub done: bool,
    pub truncated: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: UaStatus, msg: impl Into<String>) -> UaStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> UaStatus {
    let status = match &e {
        Error::Config(_) => UaStatus::Config,
        Error::Usage(_) => UaStatus::Usage,
        Error::Checkpoint(_) => UaStatus::Checkpoint,
        Error::Io { .. } => UaStatus::Io,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> UaStatus) -> UaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(UaStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, UaStatus> {
    if p.is_null() {
        return Err(fail(UaStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(UaStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, want: usize, name: &str) -> Result<&'a [f64], UaStatus> {
    if p.is_null() {
        return Err(fail(UaStatus::NullPointer, format!("{name} is null")));
    }
    if len != want {
        return Err(fail(UaStatus::InvalidArgument, format!("{name} has length {len}, expected {want}")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, want: usize, name: &str) -> Result<&'a mut [f64], UaStatus> {
    if p.is_null() {
        return Err(fail(UaStatus::NullPointer, format!("{name} is null")));
    }
    if len != want {
        return Err(fail(UaStatus::InvalidArgument, format!("{name} has length {len}, expected {want}")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ua_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ua_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an agent checkpoint.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ua_agent_load(path: *const c_char, out: *mut *mut UaAgent) -> UaStatus {
    guard(|| {
        if out.is_null() {
            return fail(UaStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = tri!(str_arg(path, "path"));
        let agent = Checkpoint::load(Path::new(path)).and_then(|c| Agent::from_checkpoint(c, stream(0, Stream::Action)));
        match agent {
            Ok(agent) => {
                *out = Box::into_raw(Box::new(UaAgent { agent }));
                UaStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `agent` must be null or a handle from [`ua_agent_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ua_agent_free(agent: *mut UaAgent) {
    if !agent.is_null() {
        drop(Box::from_raw(agent));
    }
}

/// Writes the state and action dimensions of a loaded agent.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ua_agent_dims(agent: *const UaAgent, state_dim: *mut usize, action_dim: *mut usize) -> UaStatus {
    guard(|| {
        if agent.is_null() || state_dim.is_null() || action_dim.is_null() {
            return fail(UaStatus::NullPointer, "null argument");
        }
        let spec = (*agent).agent.env_spec();
        *state_dim = spec.state_dim;
        *action_dim = spec.action_dim;
        UaStatus::Ok
    })
}

/// Greedy action for `state`, with its uncertainty report. `report` may be
/// null.
///
/// # Safety
/// `state` must point to `state_len` doubles and `action` to `action_len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ua_agent_act(
    agent: *const UaAgent,
    state: *const f64,
    state_len: usize,
    action: *mut f64,
    action_len: usize,
    report: *mut UaUncertainty,
) -> UaStatus {
    guard(|| {
        if agent.is_null() {
            return fail(UaStatus::NullPointer, "agent is null");
        }
        let agent = &(*agent).agent;
        let spec = agent.env_spec();
        let s = tri!(slice_arg(state, state_len, spec.state_dim, "state"));
        let out = tri!(out_slice(action, action_len, spec.action_dim, "action"));
        match agent.act_inference(s) {
            Ok((a, u)) => {
                out.copy_from_slice(&a);
                if !report.is_null() {
                    *report = UaUncertainty {
                        eu: u.eu,
                        au: u.au,
                        warned: u.warned,
                    };
                }
                UaStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Sets the epistemic-uncertainty warning threshold.
///
/// # Safety
/// `agent` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn ua_agent_set_umax(agent: *mut UaAgent, u_max: f64) -> UaStatus {
    guard(|| {
        if agent.is_null() {
            return fail(UaStatus::NullPointer, "agent is null");
        }
        if u_max.is_nan() {
            return fail(UaStatus::InvalidArgument, "u_max is NaN");
        }
        let a = &mut (*agent).agent;
        let mut ck = a.checkpoint(0);
        ck.config.u_max = u_max;
        match Agent::from_checkpoint(ck, stream(0, Stream::Action)) {
            Ok(new) => {
                *a = new;
                UaStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Creates an environment by id (`cube`, `oracle-bernoulli`, `oracle-gaussian`).
///
/// # Safety
/// `id` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ua_env_new(id: *const c_char, seed: u64, out: *mut *mut UaEnv) -> UaStatus {
    guard(|| {
        if out.is_null() {
            return fail(UaStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let id = tri!(str_arg(id, "id"));
        match EnvConfig::from_id(id).and_then(|c| c.build(seed, Stream::Eval)) {
            Ok(env) => {
                *out = Box::into_raw(Box::new(UaEnv { env }));
                UaStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `env` must be null or a handle from [`ua_env_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ua_env_free(env: *mut UaEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ua_env_dims(env: *const UaEnv, state_dim: *mut usize, action_dim: *mut usize) -> UaStatus {
    guard(|| {
        if env.is_null() || state_dim.is_null() || action_dim.is_null() {
            return fail(UaStatus::NullPointer, "null argument");
        }
        let spec = (*env).env.spec();
        *state_dim = spec.state_dim;
        *action_dim = spec.action_dim;
        UaStatus::Ok
    })
}

/// Starts an episode, writing the initial state.
///
/// # Safety
/// `state` must point to `state_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ua_env_reset(env: *mut UaEnv, state: *mut f64, state_len: usize) -> UaStatus {
    guard(|| {
        if env.is_null() {
            return fail(UaStatus::NullPointer, "env is null");
        }
        let env = &mut (*env).env;
        let out = tri!(out_slice(state, state_len, env.spec().state_dim, "state"));
        out.copy_from_slice(&env.reset());
        UaStatus::Ok
    })
}

/// Applies `action` (clipped to the action box), writing the next state.
///
/// # Safety
/// `action` must point to `action_len` doubles, `next_state` to
/// `state_len` writable doubles, and `info` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ua_env_step(
    env: *mut UaEnv,
    action: *const f64,
    action_len: usize,
    next_state: *mut f64,
    state_len: usize,
    info: *mut UaStepInfo,
) -> UaStatus {
    guard(|| {
        if env.is_null() || info.is_null() {
            return fail(UaStatus::NullPointer, "null argument");
        }
        let env = &mut (*env).env;
        let spec = env.spec().clone();
        let a = tri!(slice_arg(action, action_len, spec.action_dim, "action"));
        let out = tri!(out_slice(next_state, state_len, spec.state_dim, "next_state"));
        let r = env.step(a);
        out.copy_from_slice(&r.next_state);
        *info = UaStepInfo {
            reward: r.reward,
            done: r.done,
            truncated: r.truncated,
        };
        UaStatus::Ok
    })
}

/// Trains one seed of the configuration at `config` (a TOML path or preset
/// name) and writes outputs under `out_dir`. Blocks until training ends.
///
/// # Safety
/// `config` and `out_dir` must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ua_train(config: *const c_char, seed: u64, out_dir: *const c_char) -> UaStatus {
    guard(|| {
        let config = tri!(str_arg(config, "config"));
        let out_dir = tri!(str_arg(out_dir, "out_dir"));
        let cfg = if harness::PRESETS.contains(&config) && !Path::new(config).exists() {
            RunConfig::preset(config)
        } else {
            harness::load_config(Path::new(config))
        };
        match cfg.and_then(|c| harness::run_training(&c, seed, Path::new(out_dir))) {
            Ok(_) => UaStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}
