//! C interface to the induction solvers.
//!
//! Problems and schedules are opaque heap handles owned by the caller and
//! released with their `_free` function. Every fallible call returns an
//! [`InductionStatus`]; on failure a description is available from
//! [`induction_last_error`] until the next failing call on the same thread.
//! Array outputs go into caller buffers and report the needed length.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use induction_core::patient::{BisParameters, PatientDemographics, Sex};
use induction_core::shooting::{default_seed_grid, solve_shooting, ShootingOptions};
use induction_core::strategy::{schedule_endpoint, solve_time_optimal, StrategyOptions};
use induction_core::{ControlSchedule, Error, TimeOptimalProblem};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InductionStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    IntegrationFailed = 4,
    NoConvergence = 5,
    Infeasible = 6,
    UnsupportedSystem = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InductionSex {
    Male = 0,
    Female = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InductionPatient {
    pub sex: InductionSex,
    /// years
    pub age: f64,
    /// kg
    pub weight: f64,
    /// cm
    pub height: f64,
}

/// Opaque minimum-time problem.
pub struct InductionProblem(TimeOptimalProblem);

/// Opaque piecewise-constant infusion schedule.
pub struct InductionSchedule(ControlSchedule);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> InductionStatus {
    match e {
        Error::Domain(_) | Error::DegenerateDemographics { .. } | Error::ParameterOutOfRange { .. } | Error::DegenerateTarget => {
            InductionStatus::InvalidArgument
        }
        Error::StepUnderflow { .. } | Error::TooManySteps(_) => InductionStatus::IntegrationFailed,
        Error::NoConvergence { .. } => InductionStatus::NoConvergence,
        Error::Infeasible { .. } => InductionStatus::Infeasible,
        Error::NotControllable(_) | Error::ComplexSpectrum => InductionStatus::UnsupportedSystem,
    }
}

fn fail(status: InductionStatus, msg: impl Into<String>) -> InductionStatus {
    set_error(msg.into());
    status
}

fn from_core(e: Error) -> InductionStatus {
    fail(status_of(&e), e.to_string())
}

/// Runs `f`, turning a panic into [`InductionStatus::Panic`].
fn guard(f: impl FnOnce() -> InductionStatus) -> InductionStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(InductionStatus::Panic, "internal panic"))
}

fn copy_out(values: &[f64], buf: *mut f64, cap: usize, len_out: *mut usize) -> InductionStatus {
    if len_out.is_null() {
        return fail(InductionStatus::NullPointer, "len_out is NULL");
    }
    // SAFETY: checked non-null; caller provides a writable usize.
    unsafe { *len_out = values.len() };
    if values.is_empty() {
        return InductionStatus::Ok;
    }
    if buf.is_null() || cap < values.len() {
        return fail(
            InductionStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", values.len()),
        );
    }
    // SAFETY: buf has room for cap >= values.len() doubles per the contract.
    unsafe { ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len()) };
    InductionStatus::Ok
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn induction_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds the problem for a patient at rest. `u_max` in mg/min; the BIS
/// sigmoid uses its default parameters.
///
/// # Safety
/// `patient` must point to a valid `InductionPatient` and `out` to writable
/// storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn induction_problem_new(
    patient: *const InductionPatient,
    bis_target: f64,
    u_max: f64,
    out: *mut *mut InductionProblem,
) -> InductionStatus {
    guard(|| {
        if patient.is_null() || out.is_null() {
            return fail(InductionStatus::NullPointer, "patient or out is NULL");
        }
        let p = &*patient;
        let sex = match p.sex {
            InductionSex::Male => Sex::Male,
            InductionSex::Female => Sex::Female,
        };
        let built = PatientDemographics::new(sex, p.age, p.weight, p.height)
            .and_then(|d| TimeOptimalProblem::for_patient(&d, &BisParameters::default(), bis_target, u_max));
        match built {
            Ok(prob) => {
                *out = Box::into_raw(Box::new(InductionProblem(prob)));
                InductionStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `problem` must be NULL or a handle from `induction_problem_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn induction_problem_free(problem: *mut InductionProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Writes the target equilibrium: four masses (mg) and the holding infusion (mg/min).
///
/// # Safety
/// `x_e` must have room for 4 doubles; `u_e` must be writable.
#[no_mangle]
pub unsafe extern "C" fn induction_problem_equilibrium(
    problem: *const InductionProblem,
    x_e: *mut f64,
    u_e: *mut f64,
) -> InductionStatus {
    if problem.is_null() || x_e.is_null() || u_e.is_null() {
        return fail(InductionStatus::NullPointer, "NULL argument");
    }
    let eq = (*problem).0.equilibrium();
    ptr::copy_nonoverlapping(eq.x_e.as_ptr(), x_e, 4);
    *u_e = eq.u_e;
    InductionStatus::Ok
}

/// Writes the four eigenvalues of `A`, ascending.
///
/// # Safety
/// `out` must have room for 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn induction_problem_eigenvalues(
    problem: *const InductionProblem,
    out: *mut f64,
) -> InductionStatus {
    if problem.is_null() || out.is_null() {
        return fail(InductionStatus::NullPointer, "NULL argument");
    }
    match (*problem).0.system().eigenvalues() {
        Some(ev) => {
            ptr::copy_nonoverlapping(ev.as_ptr(), out, 4);
            InductionStatus::Ok
        }
        None => fail(InductionStatus::UnsupportedSystem, "spectrum is not real and separated"),
    }
}

/// Strategy enumeration. On success `*out` receives a new schedule and
/// `*strategy` (if not NULL) the winning strategy number.
///
/// # Safety
/// `problem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn induction_solve_strategy(
    problem: *const InductionProblem,
    out: *mut *mut InductionSchedule,
    strategy: *mut u32,
) -> InductionStatus {
    guard(|| {
        if problem.is_null() || out.is_null() {
            return fail(InductionStatus::NullPointer, "problem or out is NULL");
        }
        match solve_time_optimal(&(*problem).0, &StrategyOptions::default()) {
            Ok(sol) => {
                if !strategy.is_null() {
                    *strategy = sol.best.strategy as u32;
                }
                let schedule = sol.best.schedule.expect("best strategy is feasible");
                *out = Box::into_raw(Box::new(InductionSchedule(schedule)));
                InductionStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Shooting on the default seed grid. `*residual_norm` (if not NULL)
/// receives the certificate's residual.
///
/// # Safety
/// `problem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn induction_solve_shooting(
    problem: *const InductionProblem,
    out: *mut *mut InductionSchedule,
    residual_norm: *mut f64,
) -> InductionStatus {
    guard(|| {
        if problem.is_null() || out.is_null() {
            return fail(InductionStatus::NullPointer, "problem or out is NULL");
        }
        match solve_shooting(&(*problem).0, &default_seed_grid(), &ShootingOptions::default()) {
            Ok(cert) => {
                if !residual_norm.is_null() {
                    *residual_norm = cert.residual_norm;
                }
                *out = Box::into_raw(Box::new(InductionSchedule(cert.schedule)));
                InductionStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Builds a schedule from `n` levels and `n - 1` breakpoints.
///
/// # Safety
/// `levels` must hold `n` doubles, `breakpoints` `n - 1` (may be NULL when
/// `n == 1`), and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn induction_schedule_new(
    levels: *const f64,
    breakpoints: *const f64,
    n: usize,
    t_f: f64,
    out: *mut *mut InductionSchedule,
) -> InductionStatus {
    if levels.is_null() || out.is_null() || (n > 1 && breakpoints.is_null()) {
        return fail(InductionStatus::NullPointer, "NULL argument");
    }
    if n == 0 {
        return fail(InductionStatus::InvalidArgument, "a schedule needs at least one level");
    }
    let lv = std::slice::from_raw_parts(levels, n).to_vec();
    let bp = if n > 1 {
        std::slice::from_raw_parts(breakpoints, n - 1).to_vec()
    } else {
        Vec::new()
    };
    match ControlSchedule::new(lv, bp, t_f) {
        Ok(s) => {
            *out = Box::into_raw(Box::new(InductionSchedule(s)));
            InductionStatus::Ok
        }
        Err(e) => from_core(e),
    }
}

/// # Safety
/// `schedule` must be NULL or a live schedule handle.
#[no_mangle]
pub unsafe extern "C" fn induction_schedule_free(schedule: *mut InductionSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Final time in minutes, or NaN for a NULL handle.
///
/// # Safety
/// `schedule` must be NULL or a live schedule handle.
#[no_mangle]
pub unsafe extern "C" fn induction_schedule_t_f(schedule: *const InductionSchedule) -> f64 {
    if schedule.is_null() {
        return f64::NAN;
    }
    (*schedule).0.t_f()
}

/// Copies the levels (mg/min). `*len` always receives the count; pass a
/// NULL buffer to query it.
///
/// # Safety
/// `buf` must have room for `cap` doubles; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn induction_schedule_levels(
    schedule: *const InductionSchedule,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> InductionStatus {
    if schedule.is_null() {
        return fail(InductionStatus::NullPointer, "schedule is NULL");
    }
    copy_out((*schedule).0.levels(), buf, cap, len)
}

/// Copies the switch times (min), same protocol as `induction_schedule_levels`.
///
/// # Safety
/// `buf` must have room for `cap` doubles; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn induction_schedule_breakpoints(
    schedule: *const InductionSchedule,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> InductionStatus {
    if schedule.is_null() {
        return fail(InductionStatus::NullPointer, "schedule is NULL");
    }
    copy_out((*schedule).0.breakpoints(), buf, cap, len)
}

/// State (4 masses, mg) reached at `t_f` from the problem's initial state.
///
/// # Safety
/// Both handles must be live; `x_out` must have room for 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn induction_schedule_endpoint(
    problem: *const InductionProblem,
    schedule: *const InductionSchedule,
    x_out: *mut f64,
) -> InductionStatus {
    if problem.is_null() || schedule.is_null() || x_out.is_null() {
        return fail(InductionStatus::NullPointer, "NULL argument");
    }
    let prob = &(*problem).0;
    match schedule_endpoint(prob.system(), prob.x0(), &(*schedule).0) {
        Ok(x) => {
            ptr::copy_nonoverlapping(x.as_ptr(), x_out, 4);
            InductionStatus::Ok
        }
        Err(e) => from_core(e),
    }
}
