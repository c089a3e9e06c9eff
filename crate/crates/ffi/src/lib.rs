//! C ABI over the `probdmp` library.
//!
//! Models and executors are opaque heap handles owned by the caller and
//! released with the matching `*_free` function. Every fallible call returns a
//! [`PdmpStatus`]; on failure the message is available from
//! [`pdmp_last_error_message`] on the same thread. Arrays are row-major
//! `n_steps x n_dofs` buffers of `double`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use probdmp::imitation::demo_task;
use probdmp::kalman::{rollout, Executor};
use probdmp::monitor::classify_execution;
use probdmp::trajectory::Trajectory;
use probdmp::{DmpError, PrimitiveModel, TaskSpec};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdmpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidModel = 3,
    DimensionMismatch = 4,
    Io = 5,
    Parse = 6,
    NotCalibrated = 7,
    Internal = 8,
}

/// A learned primitive.
pub struct PdmpModel {
    model: Arc<PrimitiveModel>,
}

/// A streaming execution of a model.
pub struct PdmpExecutor {
    // Declared before `_model` so it is dropped first.
    exec: Executor<'static>,
    _model: Arc<PrimitiveModel>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(PdmpStatus, String);

impl From<DmpError> for Failure {
    fn from(e: DmpError) -> Self {
        let status = match &e {
            DmpError::InvalidArgument(_) | DmpError::Fit(_) => PdmpStatus::InvalidArgument,
            DmpError::InvalidModel(_) => PdmpStatus::InvalidModel,
            DmpError::DimensionMismatch { .. } => PdmpStatus::DimensionMismatch,
            DmpError::Io { .. } => PdmpStatus::Io,
            DmpError::Parse { .. } | DmpError::Json(_) => PdmpStatus::Parse,
            DmpError::Stage { .. } => PdmpStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: PdmpStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, records any error and converts panics into `Internal`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PdmpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PdmpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PdmpStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(PdmpStatus::NullPointer, format!("{what} is NULL")))
    } else {
        Ok(())
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p).to_str().map_err(|_| {
        fail(
            PdmpStatus::InvalidArgument,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn model_ref<'a>(p: *const PdmpModel) -> Result<&'a PdmpModel, Failure> {
    non_null(p, "model")?;
    Ok(&*p)
}

/// Start/goal from optional caller arrays, falling back to the fitted values.
unsafe fn task_for(
    model: &PrimitiveModel,
    start: *const f64,
    goal: *const f64,
    n_dofs: usize,
) -> Result<TaskSpec, Failure> {
    if n_dofs != model.n_dofs() {
        return Err(fail(
            PdmpStatus::DimensionMismatch,
            format!("model has {} DOFs, caller passed {n_dofs}", model.n_dofs()),
        ));
    }
    let read = |p: *const f64, fallback: &[f64]| {
        if p.is_null() {
            fallback.to_vec()
        } else {
            std::slice::from_raw_parts(p, n_dofs).to_vec()
        }
    };
    Ok(model.task(read(start, &model.fit.start), read(goal, &model.fit.goal)))
}

fn boxed_model(model: PrimitiveModel, out: *mut *mut PdmpModel) {
    let handle = Box::new(PdmpModel {
        model: Arc::new(model),
    });
    // SAFETY: caller checked `out` for NULL.
    unsafe { *out = Box::into_raw(handle) };
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length plus one, or 0 when
/// no error has been recorded.
///
/// # Safety
/// `buf` must be NULL or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pdmp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pdmp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parses a model from its JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdmp_model_from_json(
    json: *const c_char,
    out: *mut *mut PdmpModel,
) -> PdmpStatus {
    guard(|| {
        non_null(out, "out")?;
        let text = c_str(json, "json")?;
        boxed_model(PrimitiveModel::from_json(text)?, out);
        Ok(())
    })
}

/// Loads a model JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdmp_model_load(
    path: *const c_char,
    out: *mut *mut PdmpModel,
) -> PdmpStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = c_str(path, "path")?;
        boxed_model(PrimitiveModel::load(Path::new(path))?, out);
        Ok(())
    })
}

/// Serializes a model; release the string with [`pdmp_string_free`].
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdmp_model_to_json(
    model: *const PdmpModel,
    out: *mut *mut c_char,
) -> PdmpStatus {
    guard(|| {
        non_null(out, "out")?;
        let m = model_ref(model)?;
        let text = m.model.to_json()?;
        *out = CString::new(text)
            .map_err(|_| fail(PdmpStatus::Internal, "JSON contains NUL"))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn pdmp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `model` must be NULL or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pdmp_model_free(model: *mut PdmpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of DOFs, fitted length and time step of a model.
///
/// # Safety
/// `model` must come from this library; each output must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn pdmp_model_info(
    model: *const PdmpModel,
    n_dofs: *mut usize,
    n_steps: *mut usize,
    dt: *mut f64,
) -> PdmpStatus {
    guard(|| {
        let m = &model_ref(model)?.model;
        if !n_dofs.is_null() {
            *n_dofs = m.n_dofs();
        }
        if !n_steps.is_null() {
            *n_steps = m.fit.n_steps;
        }
        if !dt.is_null() {
            *dt = m.fit.dt;
        }
        Ok(())
    })
}

/// Calibrated failure threshold.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdmp_model_threshold(
    model: *const PdmpModel,
    out: *mut f64,
) -> PdmpStatus {
    guard(|| {
        non_null(out, "out")?;
        let m = &model_ref(model)?.model;
        *out = m.threshold().ok_or_else(|| {
            fail(
                PdmpStatus::NotCalibrated,
                "model has no calibrated threshold",
            )
        })?;
        Ok(())
    })
}

/// Open-loop rollout. `start`/`goal` may be NULL for the fitted values.
/// Writes `n_steps x n_dofs` position means and, if `std_out` is not NULL,
/// position standard deviations.
///
/// # Safety
/// Non-NULL `start`/`goal` hold `n_dofs` values; `mean_out` (and `std_out`)
/// hold `n_steps * n_dofs` writable values.
#[no_mangle]
pub unsafe extern "C" fn pdmp_rollout(
    model: *const PdmpModel,
    start: *const f64,
    goal: *const f64,
    n_dofs: usize,
    n_steps: usize,
    mean_out: *mut f64,
    std_out: *mut f64,
) -> PdmpStatus {
    guard(|| {
        let m = &model_ref(model)?.model;
        non_null(mean_out, "mean_out")?;
        let task = task_for(m, start, goal, n_dofs)?;
        let beliefs = rollout(m, &task, n_steps)?;
        let mean = std::slice::from_raw_parts_mut(mean_out, n_steps * n_dofs);
        for (row, b) in mean.chunks_mut(n_dofs).zip(&beliefs) {
            row.copy_from_slice(&b.positions());
        }
        if !std_out.is_null() {
            let std = std::slice::from_raw_parts_mut(std_out, n_steps * n_dofs);
            for (row, b) in std.chunks_mut(n_dofs).zip(&beliefs) {
                row.copy_from_slice(&b.position_stds());
            }
        }
        Ok(())
    })
}

/// Starts a streaming execution. The executor keeps the model alive, so the
/// model handle may be freed first.
///
/// # Safety
/// As for [`pdmp_rollout`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdmp_executor_new(
    model: *const PdmpModel,
    start: *const f64,
    goal: *const f64,
    n_dofs: usize,
    out: *mut *mut PdmpExecutor,
) -> PdmpStatus {
    guard(|| {
        non_null(out, "out")?;
        let owner = Arc::clone(&model_ref(model)?.model);
        let task = task_for(&owner, start, goal, n_dofs)?;
        // SAFETY: the Arc allocation never moves and outlives `exec`, which
        // is dropped first (field order of `PdmpExecutor`).
        let borrowed: &'static PrimitiveModel = &*Arc::as_ptr(&owner);
        let exec = Executor::new(borrowed, &task)?;
        *out = Box::into_raw(Box::new(PdmpExecutor {
            exec,
            _model: owner,
        }));
        Ok(())
    })
}

/// Feeds the observation of the next step (`observation` NULL when the
/// sensor reading is missing). Writes the filtered position means and stds
/// (each `n_dofs`, optional) and the step's predictive log-likelihood (NaN
/// for a missing observation).
///
/// # Safety
/// `executor` must come from this library; non-NULL buffers hold `n_dofs`
/// values.
#[no_mangle]
pub unsafe extern "C" fn pdmp_executor_step(
    executor: *mut PdmpExecutor,
    observation: *const f64,
    n_dofs: usize,
    mean_out: *mut f64,
    std_out: *mut f64,
    loglik_out: *mut f64,
) -> PdmpStatus {
    guard(|| {
        non_null(executor, "executor")?;
        let e = &mut *executor;
        if n_dofs != e.exec.n_dofs() {
            return Err(fail(
                PdmpStatus::DimensionMismatch,
                format!(
                    "executor has {} DOFs, caller passed {n_dofs}",
                    e.exec.n_dofs()
                ),
            ));
        }
        let obs = (!observation.is_null()).then(|| std::slice::from_raw_parts(observation, n_dofs));
        let (belief, lik) = e.exec.step(obs)?;
        if !mean_out.is_null() {
            std::slice::from_raw_parts_mut(mean_out, n_dofs).copy_from_slice(&belief.positions());
        }
        if !std_out.is_null() {
            std::slice::from_raw_parts_mut(std_out, n_dofs)
                .copy_from_slice(&belief.position_stds());
        }
        if !loglik_out.is_null() {
            *loglik_out = lik.map_or(f64::NAN, |l| l.loglik);
        }
        Ok(())
    })
}

/// Predicted (feedback-modulated) position for the next step.
///
/// # Safety
/// `executor` must come from this library; `mean_out` holds `n_dofs` values.
#[no_mangle]
pub unsafe extern "C" fn pdmp_executor_desired_next(
    executor: *const PdmpExecutor,
    n_dofs: usize,
    mean_out: *mut f64,
) -> PdmpStatus {
    guard(|| {
        non_null(executor, "executor")?;
        non_null(mean_out, "mean_out")?;
        let e = &*executor;
        if n_dofs != e.exec.n_dofs() {
            return Err(fail(PdmpStatus::DimensionMismatch, "wrong DOF count"));
        }
        let next = e.exec.desired_next();
        std::slice::from_raw_parts_mut(mean_out, n_dofs).copy_from_slice(&next.positions());
        Ok(())
    })
}

/// # Safety
/// `executor` must be NULL or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pdmp_executor_free(executor: *mut PdmpExecutor) {
    if !executor.is_null() {
        drop(Box::from_raw(executor));
    }
}

/// Outcome of [`pdmp_classify`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdmpClassification {
    /// 1 when the execution is classified as failed.
    pub failed: i32,
    /// First failing step, or -1.
    pub failure_step: i64,
    pub min_score: f64,
    pub threshold: f64,
}

/// Classifies a recorded execution (`n_steps x n_dofs` positions) with the
/// model's calibrated threshold. `start` and `goal` are the intended end
/// points; a NULL one is taken from the recording itself, which is only
/// right when the execution reached its target. `loglik_out` may be NULL or
/// receive `n_steps` per-step log-likelihoods.
///
/// # Safety
/// `observations` holds `n_steps * n_dofs` values; non-NULL `start`/`goal`
/// hold `n_dofs` values; `result` is writable; non-NULL `loglik_out` holds
/// `n_steps` values.
#[no_mangle]
pub unsafe extern "C" fn pdmp_classify(
    model: *const PdmpModel,
    observations: *const f64,
    start: *const f64,
    goal: *const f64,
    n_steps: usize,
    n_dofs: usize,
    result: *mut PdmpClassification,
    loglik_out: *mut f64,
) -> PdmpStatus {
    guard(|| {
        let m = &model_ref(model)?.model;
        non_null(observations, "observations")?;
        non_null(result, "result")?;
        if n_dofs != m.n_dofs() {
            return Err(fail(
                PdmpStatus::DimensionMismatch,
                format!("model has {} DOFs, caller passed {n_dofs}", m.n_dofs()),
            ));
        }
        if m.calibration.is_none() {
            return Err(fail(
                PdmpStatus::NotCalibrated,
                "model has no calibrated threshold",
            ));
        }
        let flat = std::slice::from_raw_parts(observations, n_steps * n_dofs);
        let samples: Vec<Vec<f64>> = flat.chunks(n_dofs).map(<[f64]>::to_vec).collect();
        let traj = Trajectory::new(m.fit.dt, samples, m.label.clone(), "ffi")?;
        let ends = demo_task(m, &traj);
        let task = task_for(
            m,
            if start.is_null() {
                ends.start.as_ptr()
            } else {
                start
            },
            if goal.is_null() {
                ends.goal.as_ptr()
            } else {
                goal
            },
            n_dofs,
        )?;
        let obs: Vec<Option<&[f64]>> = traj.samples.iter().map(|r| Some(r.as_slice())).collect();
        let report = classify_execution(m, &task, &obs)?;
        *result = PdmpClassification {
            failed: i32::from(report.failed()),
            failure_step: report.failure_step.map_or(-1, |s| s as i64),
            min_score: report.min_loglik,
            threshold: report.threshold,
        };
        if !loglik_out.is_null() {
            let out = std::slice::from_raw_parts_mut(loglik_out, n_steps);
            for (o, l) in out.iter_mut().zip(&report.per_step_loglik) {
                *o = l.unwrap_or(f64::NAN);
            }
        }
        Ok(())
    })
}
