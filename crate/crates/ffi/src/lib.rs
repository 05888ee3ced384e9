//! C interface to the `ddsls` library.
//!
//! Objects live behind opaque handles created by `ddsls_*_new` style
//! functions and released by the matching `ddsls_*_free`. Every fallible
//! function returns a [`DdslsStatus`]; on failure the message is available
//! from [`ddsls_last_error_message`] on the same thread. Matrices cross the
//! boundary as row-major `double` arrays with explicit dimensions.
//!
//! Panics never unwind into the caller; they are reported as
//! `DDSLS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ddsls::analysis::{eps_precondition, noise_hankel_norm};
use ddsls::blockops::{CostWeights, Mat};
use ddsls::cli::{run, Command};
use ddsls::config::ExperimentConfig;
use ddsls::lqg::{dare, optimal_responses};
use ddsls::lti::{average, generate_ensemble, laplacian_benchmark, EnsembleOptions, LtiSystem, Trajectory};
use ddsls::synth::{synthesize, true_cost, DataHankels, Mode, Structure, SynthOptions, SynthesisResult};
use ddsls::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdslsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    NotPersistentlyExciting = 4,
    EpsilonTooLarge = 5,
    Infeasible = 6,
    NoConvergence = 7,
    Structure = 8,
    Mismatch = 9,
    EmptyEnsemble = 10,
    Io = 11,
    Parse = 12,
    BufferTooSmall = 13,
    Panic = 14,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdslsMode {
    Noiseless = 0,
    Naive = 1,
    Robust = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdslsStructure {
    BlockDiagonal = 0,
    Full = 1,
}

/// Linear plant with Gaussian process noise.
pub struct DdslsSystem(LtiSystem);

/// Quadratic stage and terminal weights.
pub struct DdslsWeights(CostWeights);

/// State, input and noise record of one (possibly averaged) trajectory.
pub struct DdslsTrajectory(Trajectory);

/// Synthesized controller with its solver diagnostics.
pub struct DdslsController(SynthesisResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Core(Error),
    Null(&'static str),
    BufferTooSmall { needed: usize, given: usize },
    Utf8(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn status(&self) -> DdslsStatus {
        match self {
            Failure::Null(_) => DdslsStatus::NullPointer,
            Failure::BufferTooSmall { .. } => DdslsStatus::BufferTooSmall,
            Failure::Utf8(_) => DdslsStatus::InvalidArgument,
            Failure::Core(e) => match e {
                Error::Dimension(_) => DdslsStatus::Dimension,
                Error::InvalidArgument(_) => DdslsStatus::InvalidArgument,
                Error::NotPersistentlyExciting(_) => DdslsStatus::NotPersistentlyExciting,
                Error::EpsilonTooLarge(_) => DdslsStatus::EpsilonTooLarge,
                Error::Infeasible(_) => DdslsStatus::Infeasible,
                Error::NoConvergence { .. } => DdslsStatus::NoConvergence,
                Error::Structure(_) => DdslsStatus::Structure,
                Error::Mismatch(_) => DdslsStatus::Mismatch,
                Error::EmptyEnsemble => DdslsStatus::EmptyEnsemble,
                Error::Io { .. } => DdslsStatus::Io,
                Error::Json(_) | Error::Csv(_) => DdslsStatus::Parse,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(e) => e.to_string(),
            Failure::Null(what) => format!("null pointer: {what}"),
            Failure::BufferTooSmall { needed, given } => format!("buffer holds {given} values, {needed} needed"),
            Failure::Utf8(what) => format!("{what} is not valid UTF-8"),
        }
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DdslsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DdslsStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(failure.message());
            failure.status()
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            DdslsStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn read_matrix(p: *const f64, rows: usize, cols: usize, what: &'static str) -> Result<Mat, Failure> {
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!("{what} must be nonempty, got {rows}x{cols}")).into());
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let values = std::slice::from_raw_parts(p, rows * cols);
    Ok(Mat::from_row_slice(rows, cols, values))
}

unsafe fn write_matrix(m: &Mat, out: *mut f64, len: usize) -> Result<(), Failure> {
    let needed = m.nrows() * m.ncols();
    if len < needed {
        return Err(Failure::BufferTooSmall { needed, given: len });
    }
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    let dst = std::slice::from_raw_parts_mut(out, needed);
    for (k, v) in dst.iter_mut().enumerate() {
        *v = m[(k / m.ncols(), k % m.ncols())];
    }
    Ok(())
}

unsafe fn read_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(what))
}

fn boxed<T>(value: T, out: &mut *mut T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ddsls_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ddsls_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Plant `x(t+1) = A x(t) + B u(t) + w(t)` with `w ~ N(0, noise_std² I)`.
/// `a` is `n x n`, `b` is `n x m`, both row-major.
///
/// # Safety
/// `a` and `b` must point to `n*n` and `n*m` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddsls_system_new(
    n: usize,
    m: usize,
    a: *const f64,
    b: *const f64,
    noise_std: f64,
    out: *mut *mut DdslsSystem,
) -> DdslsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let sys = LtiSystem::new(read_matrix(a, n, n, "a")?, read_matrix(b, n, m, "b")?, noise_std)?;
        boxed(DdslsSystem(sys), out);
        Ok(())
    })
}

/// The three-state benchmark plant.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddsls_system_benchmark(out: *mut *mut DdslsSystem) -> DdslsStatus {
    guard(|| {
        boxed(DdslsSystem(laplacian_benchmark()), out_ptr(out, "out")?);
        Ok(())
    })
}

/// # Safety
/// `sys` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddsls_system_free(sys: *mut DdslsSystem) {
    free(sys)
}

/// Stage weights `q` (`n x n`), `r` (`m x m`) and terminal weight `q_final`
/// (`n x n`). A NULL `q_final` reuses `q`.
///
/// # Safety
/// Non-NULL matrix pointers must hold the stated number of doubles; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddsls_weights_new(
    n: usize,
    m: usize,
    q: *const f64,
    r: *const f64,
    q_final: *const f64,
    out: *mut *mut DdslsWeights,
) -> DdslsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (q, r) = (read_matrix(q, n, n, "q")?, read_matrix(r, m, m, "r")?);
        let weights = if q_final.is_null() {
            CostWeights::running(q, r)?
        } else {
            CostWeights::new(q, r, read_matrix(q_final, n, n, "q_final")?)?
        };
        boxed(DdslsWeights(weights), out);
        Ok(())
    })
}

/// Stage weights `q`, `r` with the stationary Riccati solution of `sys` as
/// terminal weight.
///
/// # Safety
/// `sys` must be a live handle; `q`, `r` must hold `n*n` and `m*m` doubles
/// for the plant's dimensions; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddsls_weights_with_riccati_terminal(
    sys: *const DdslsSystem,
    q: *const f64,
    r: *const f64,
    out: *mut *mut DdslsWeights,
) -> DdslsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let sys = &handle(sys, "sys")?.0;
        let (n, m) = (sys.state_dim(), sys.input_dim());
        let (q, r) = (read_matrix(q, n, n, "q")?, read_matrix(r, m, m, "r")?);
        let p = dare(sys, &q, &r)?;
        boxed(DdslsWeights(CostWeights::new(q, r, p)?), out);
        Ok(())
    })
}

/// # Safety
/// `weights` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddsls_weights_free(weights: *mut DdslsWeights) {
    free(weights)
}

/// Average of `samples` trajectories of length `data_len` sharing a
/// Gaussian input and zero initial state, drawn from `seed`.
///
/// # Safety
/// `sys` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddsls_trajectory_averaged(
    sys: *const DdslsSystem,
    data_len: usize,
    samples: usize,
    seed: u64,
    out: *mut *mut DdslsTrajectory,
) -> DdslsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let sys = &handle(sys, "sys")?.0;
        let ens = generate_ensemble(sys, data_len, samples, seed, &EnsembleOptions::default())?;
        boxed(DdslsTrajectory(average(&ens)?), out);
        Ok(())
    })
}

/// Spectral norm of the order-`horizon` Hankel matrix of the recorded
/// noise: the smallest noise level the trajectory is consistent with.
///
/// # Safety
/// `traj` must be a live handle; `norm` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddsls_trajectory_noise_level(
    traj: *const DdslsTrajectory,
    horizon: usize,
    norm: *mut f64,
) -> DdslsStatus {
    guard(|| {
        let norm = out_ptr(norm, "norm")?;
        *norm = noise_hankel_norm(handle(traj, "traj")?.0.w(), horizon)?;
        Ok(())
    })
}

/// # Safety
/// `traj` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddsls_trajectory_free(traj: *mut DdslsTrajectory) {
    free(traj)
}

/// Synthesizes a controller over `horizon` steps from the state and input
/// record of `traj`. `epsilon` is the assumed noise level and is only read
/// in robust mode.
///
/// # Safety
/// `traj` and `weights` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddsls_synthesize(
    traj: *const DdslsTrajectory,
    weights: *const DdslsWeights,
    horizon: usize,
    mode: DdslsMode,
    structure: DdslsStructure,
    epsilon: f64,
    out: *mut *mut DdslsController,
) -> DdslsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let traj = &handle(traj, "traj")?.0;
        let weights = &handle(weights, "weights")?.0;
        let data = DataHankels::from_trajectory(traj, horizon)?.without_noise();
        let mode = match mode {
            DdslsMode::Noiseless => Mode::Noiseless,
            DdslsMode::Naive => Mode::Naive,
            DdslsMode::Robust => Mode::Robust,
        };
        let opts = SynthOptions {
            structure: match structure {
                DdslsStructure::BlockDiagonal => Structure::BlockDiagonal,
                DdslsStructure::Full => Structure::Full,
            },
            ..SynthOptions::default()
        };
        boxed(DdslsController(synthesize(&data, weights, mode, epsilon, &opts)?), out);
        Ok(())
    })
}

/// Horizon and state/input dimensions of the controller. Any output
/// pointer may be NULL.
///
/// # Safety
/// `ctrl` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddsls_controller_dims(
    ctrl: *const DdslsController,
    horizon: *mut usize,
    n: *mut usize,
    m: *mut usize,
) -> DdslsStatus {
    guard(|| {
        let k = &handle(ctrl, "ctrl")?.0.controller;
        for (p, v) in [(horizon, k.horizon()), (n, k.block_cols()), (m, k.block_rows())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Block lower-triangular gain matrix `u = K x` over the horizon, `Lm x Ln`,
/// written row-major into `out` of capacity `len`.
///
/// # Safety
/// `ctrl` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ddsls_controller_gains(ctrl: *const DdslsController, out: *mut f64, len: usize) -> DdslsStatus {
    guard(|| write_matrix(handle(ctrl, "ctrl")?.0.controller.dense(), out, len))
}

/// Objective reported by the synthesis program.
///
/// # Safety
/// `ctrl` must be a live handle; `objective` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddsls_controller_objective(ctrl: *const DdslsController, objective: *mut f64) -> DdslsStatus {
    guard(|| {
        *out_ptr(objective, "objective")? = handle(ctrl, "ctrl")?.0.objective;
        Ok(())
    })
}

/// Selected robustness level; `*has_gamma` is 0 outside robust mode.
///
/// # Safety
/// `ctrl` must be a live handle; `gamma` and `has_gamma` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddsls_controller_gamma(
    ctrl: *const DdslsController,
    gamma: *mut f64,
    has_gamma: *mut i32,
) -> DdslsStatus {
    guard(|| {
        let g = handle(ctrl, "ctrl")?.0.gamma;
        *out_ptr(has_gamma, "has_gamma")? = i32::from(g.is_some());
        *out_ptr(gamma, "gamma")? = g.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Cost of the controller in closed loop with `sys`.
///
/// # Safety
/// All handles must be live; `cost` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddsls_controller_true_cost(
    ctrl: *const DdslsController,
    sys: *const DdslsSystem,
    weights: *const DdslsWeights,
    cost: *mut f64,
) -> DdslsStatus {
    guard(|| {
        let cost = out_ptr(cost, "cost")?;
        *cost = true_cost(&handle(ctrl, "ctrl")?.0.controller, &handle(sys, "sys")?.0, &handle(weights, "weights")?.0)?;
        Ok(())
    })
}

/// # Safety
/// `ctrl` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddsls_controller_free(ctrl: *mut DdslsController) {
    free(ctrl)
}

/// Optimal finite-horizon cost of `sys` under `weights`.
///
/// # Safety
/// Handles must be live; `cost` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddsls_optimal_cost(
    sys: *const DdslsSystem,
    weights: *const DdslsWeights,
    horizon: usize,
    cost: *mut f64,
) -> DdslsStatus {
    guard(|| {
        let cost = out_ptr(cost, "cost")?;
        *cost = optimal_responses(&handle(sys, "sys")?.0, &handle(weights, "weights")?.0, horizon)?.cost;
        Ok(())
    })
}

/// Largest noise level covered by the suboptimality guarantee, given the
/// optimal parameter norm and the Toeplitz noise-map norm.
#[no_mangle]
pub extern "C" fn ddsls_eps_precondition(gstar_norm: f64, horizon: usize, toep_norm: f64) -> f64 {
    eps_precondition(gstar_norm, horizon, toep_norm)
}

/// Runs an experiment command (`simulate`, `synth`, `bounds`, `mpc`,
/// `concentration`, `bootstrap`) with a JSON configuration (NULL for
/// defaults). On success `*summary_json` receives a string to release with
/// [`ddsls_string_free`].
///
/// # Safety
/// `command` and non-NULL `config_json` must be NUL-terminated strings;
/// `summary_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddsls_run(
    command: *const c_char,
    config_json: *const c_char,
    summary_json: *mut *mut c_char,
) -> DdslsStatus {
    guard(|| {
        let out = out_ptr(summary_json, "summary_json")?;
        let cmd: Command = read_str(command, "command")?.parse()?;
        let cfg = if config_json.is_null() {
            ExperimentConfig::default()
        } else {
            ExperimentConfig::from_json(read_str(config_json, "config_json")?)?
        };
        let text = ddsls::io::to_json(&run(cmd, &cfg)?)?;
        *out = CString::new(text).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddsls_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
