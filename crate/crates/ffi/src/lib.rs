//! C ABI for the QCS analysis library.
//!
//! Scenarios are opaque handles created from the same JSON schema the CLI
//! consumes. Every fallible call returns a [`QcsStatus`]; on failure a
//! human-readable detail is available from [`qcs_last_error_message`]
//! (thread-local, valid until the next failing call on that thread).
//! Standard errors (`se_*` fields) are NaN when the underlying estimate
//! is exact rather than sampled.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use qcs::driver::{eval_scenario, MethodChoice, RunOptions};
use qcs::model::{Scenario, ValidatedScenario, Window};
use qcs::window::{MomentMethod, WindowSpec};
use qcs::{capacity, hardware, queueing, sim, QcsError};

/// Sentinel for an infinite request window.
pub const QCS_WINDOW_INFINITE: u64 = u64::MAX;

/// Sentinel asking the simulator to pick its own warmup length.
pub const QCS_WARMUP_AUTO: u64 = u64::MAX;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    InvalidParameter = 4,
    InfeasibleWindow = 5,
    Unsupported = 6,
    StateSpaceTooLarge = 7,
    SamplerOverrun = 8,
    Overloaded = 9,
    NonConvergence = 10,
    InvalidConfig = 11,
    InternalPanic = 12,
}

/// Provenance of a moment estimate.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcsMomentMethod {
    ClosedForm = 0,
    Series = 1,
    MonteCarlo = 2,
}

/// Which waiting-time formula produced an estimate.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcsWaitMethod {
    ExactMg1 = 0,
    ExactMms = 1,
    LeeLongton = 2,
    Simulated = 3,
}

/// First two raw moments of the window problem's batch count.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QcsMoments {
    pub m1: f64,
    pub m2: f64,
    /// NaN unless the estimate is Monte Carlo.
    pub se_m1: f64,
    pub se_m2: f64,
    pub method: QcsMomentMethod,
}

/// Full analytic evaluation of one scenario.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QcsEvalResult {
    /// Aggregate request rate, 1/us.
    pub lambda_per_us: f64,
    /// Packets per batch, m.
    pub batch_size: u32,
    /// Concurrent requests, s.
    pub servers: u32,
    /// Resolved packet success probability.
    pub p: f64,
    pub e_b: f64,
    pub e_b_se: f64,
    pub e_b2: f64,
    pub e_t_service_us: f64,
    pub e_t_service2_us2: f64,
    pub c2_service: f64,
    pub rho: f64,
    /// False when the load is at or above one; the wait and sojourn
    /// fields are infinity in that case.
    pub stable: bool,
    pub window_method: QcsMomentMethod,
    pub wait_method: QcsWaitMethod,
    pub e_t_wait_us: f64,
    pub mst_us: f64,
    pub mst_se_us: f64,
}

/// Aggregated simulation output.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QcsSimResult {
    pub mean_wait_us: f64,
    pub mean_wait_se_us: f64,
    pub mean_service_us: f64,
    pub mean_service_se_us: f64,
    pub mean_sojourn_us: f64,
    pub mean_sojourn_se_us: f64,
    pub mean_in_system: f64,
    pub mean_in_system_se: f64,
    pub throughput_per_us: f64,
    pub throughput_se_per_us: f64,
    pub utilization: f64,
    pub requests_completed: u64,
    pub warmup_requests: u64,
}

/// Opaque scenario handle.
pub struct QcsScenario {
    scenario: Scenario,
    validated: ValidatedScenario,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(status: QcsStatus, message: &str) -> QcsStatus {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
    status
}

fn status_of(err: &QcsError) -> QcsStatus {
    match err {
        QcsError::InvalidParameter(_) => QcsStatus::InvalidParameter,
        QcsError::InfeasibleWindow { .. } => QcsStatus::InfeasibleWindow,
        QcsError::Unsupported(_) => QcsStatus::Unsupported,
        QcsError::StateSpaceTooLarge { .. } => QcsStatus::StateSpaceTooLarge,
        QcsError::SamplerOverrun => QcsStatus::SamplerOverrun,
        QcsError::Overloaded { .. } => QcsStatus::Overloaded,
        QcsError::NonConvergence(_) => QcsStatus::NonConvergence,
        QcsError::InvalidConfig(_) => QcsStatus::InvalidConfig,
        QcsError::UnknownFigure(_) => QcsStatus::InvalidParameter,
        QcsError::Io(_) => QcsStatus::InvalidParameter,
        QcsError::Json(_) => QcsStatus::InvalidJson,
    }
}

fn fail(err: &QcsError) -> QcsStatus {
    set_error(status_of(err), &err.to_string())
}

/// Runs a fallible body with panics converted to a status.
fn guarded(body: impl FnOnce() -> QcsStatus) -> QcsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => set_error(QcsStatus::InternalPanic, "internal panic"),
    }
}

fn options(samples: u64, seed: u64) -> RunOptions {
    RunOptions {
        samples: if samples == 0 { None } else { Some(samples) },
        seed,
        method: MethodChoice::Auto,
        ..RunOptions::default()
    }
}

fn moment_method(method: MomentMethod) -> QcsMomentMethod {
    match method {
        MomentMethod::ClosedForm => QcsMomentMethod::ClosedForm,
        MomentMethod::Series => QcsMomentMethod::Series,
        MomentMethod::MonteCarlo => QcsMomentMethod::MonteCarlo,
    }
}

fn wait_method(method: queueing::WaitMethod) -> QcsWaitMethod {
    match method {
        queueing::WaitMethod::ExactMg1 => QcsWaitMethod::ExactMg1,
        queueing::WaitMethod::ExactMms => QcsWaitMethod::ExactMms,
        queueing::WaitMethod::LeeLongton => QcsWaitMethod::LeeLongton,
        queueing::WaitMethod::Simulated => QcsWaitMethod::Simulated,
    }
}

/// Parses a scenario from its JSON description (the schema used by the
/// `qcs` CLI) and validates it. On success `*out` owns the handle; free
/// it with [`qcs_scenario_free`].
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qcs_scenario_from_json(
    json: *const c_char,
    out: *mut *mut QcsScenario,
) -> QcsStatus {
    guarded(|| {
        if json.is_null() || out.is_null() {
            return set_error(QcsStatus::NullArgument, "null argument");
        }
        let text = match CStr::from_ptr(json).to_str() {
            Ok(t) => t,
            Err(_) => return set_error(QcsStatus::InvalidUtf8, "scenario JSON is not UTF-8"),
        };
        let scenario = match Scenario::from_json(text) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        let validated = match scenario.validate() {
            Ok(v) => v,
            Err(e) => return fail(&e),
        };
        *out = Box::into_raw(Box::new(QcsScenario {
            scenario,
            validated,
        }));
        QcsStatus::Ok
    })
}

/// Frees a scenario handle. Null is accepted and ignored.
///
/// # Safety
/// `handle` must have come from [`qcs_scenario_from_json`] and must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qcs_scenario_free(handle: *mut QcsScenario) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Analytic evaluation: window moments (routed to a closed form, the
/// survival series, or `samples` Monte Carlo draws), service moments,
/// load, mean wait, and mean sojourn. `samples` of 0 means the default
/// budget (1e5).
///
/// # Safety
/// `handle` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn qcs_eval(
    handle: *const QcsScenario,
    samples: u64,
    seed: u64,
    out: *mut QcsEvalResult,
) -> QcsStatus {
    guarded(|| {
        if handle.is_null() || out.is_null() {
            return set_error(QcsStatus::NullArgument, "null argument");
        }
        let scenario = &(*handle).scenario;
        match eval_scenario(scenario, &options(samples, seed)) {
            Ok(o) => {
                *out = QcsEvalResult {
                    lambda_per_us: o.lambda,
                    batch_size: o.batch_size,
                    servers: o.servers,
                    p: o.p,
                    e_b: o.e_b,
                    e_b_se: o.e_b_se.unwrap_or(f64::NAN),
                    e_b2: o.e_b2,
                    e_t_service_us: o.e_t_service,
                    e_t_service2_us2: o.e_t_service2,
                    c2_service: o.c2_service,
                    rho: o.rho,
                    stable: o.stable,
                    window_method: moment_method(o.window_method),
                    wait_method: wait_method(o.wait_method),
                    e_t_wait_us: o.e_t_wait,
                    mst_us: o.mst,
                    mst_se_us: o.mst_se.unwrap_or(f64::NAN),
                };
                QcsStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Runs the discrete-event simulator. `warmup` of [`QCS_WARMUP_AUTO`]
/// applies the built-in heuristic. Fails with `Overloaded` when no steady
/// state exists.
///
/// # Safety
/// `handle` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn qcs_simulate(
    handle: *const QcsScenario,
    warmup: u64,
    measured: u64,
    replications: u32,
    seed: u64,
    out: *mut QcsSimResult,
) -> QcsStatus {
    guarded(|| {
        if handle.is_null() || out.is_null() {
            return set_error(QcsStatus::NullArgument, "null argument");
        }
        let validated = (*handle).validated.clone();
        let mut cfg = match sim::SimConfig::new(validated, measured, replications, seed) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        };
        if warmup != QCS_WARMUP_AUTO {
            cfg.warmup_requests = warmup;
        }
        match sim::run(&cfg) {
            Ok(r) => {
                *out = QcsSimResult {
                    mean_wait_us: r.mean_wait.value,
                    mean_wait_se_us: r.mean_wait.se,
                    mean_service_us: r.mean_service.value,
                    mean_service_se_us: r.mean_service.se,
                    mean_sojourn_us: r.mean_sojourn.value,
                    mean_sojourn_se_us: r.mean_sojourn.se,
                    mean_in_system: r.mean_in_system.value,
                    mean_in_system_se: r.mean_in_system.se,
                    throughput_per_us: r.throughput.value,
                    throughput_se_per_us: r.throughput.se,
                    utilization: r.utilization,
                    requests_completed: r.requests_completed,
                    warmup_requests: cfg.warmup_requests,
                };
                QcsStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Largest user count whose load stays at or below one.
///
/// # Safety
/// `handle` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn qcs_u_crit(
    handle: *const QcsScenario,
    samples: u64,
    seed: u64,
    out: *mut u64,
) -> QcsStatus {
    guarded(|| {
        if handle.is_null() || out.is_null() {
            return set_error(QcsStatus::NullArgument, "null argument");
        }
        let opts = options(samples, seed);
        let mc = qcs::window::McBudget::new(opts.samples.unwrap_or(100_000), seed);
        match capacity::u_crit(&(*handle).validated, &mc) {
            Ok(r) => {
                *out = r.value.min(u64::MAX as f64) as u64;
                QcsStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Longest arm length (km) for `users` users before the load reaches one;
/// the handle's own user count and arm length are ignored.
///
/// # Safety
/// `handle` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn qcs_l_crit(
    handle: *const QcsScenario,
    users: u32,
    samples: u64,
    seed: u64,
    out: *mut f64,
) -> QcsStatus {
    guarded(|| {
        if handle.is_null() || out.is_null() {
            return set_error(QcsStatus::NullArgument, "null argument");
        }
        let opts = options(samples, seed);
        let mc = qcs::window::McBudget::new(opts.samples.unwrap_or(100_000), seed);
        match capacity::l_crit(&(*handle).scenario, users, &mc) {
            Ok(r) => {
                *out = r.value;
                QcsStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Moments of the window problem for (n, w, p, m); `window` of
/// [`QCS_WINDOW_INFINITE`] lifts the deadline. Monte Carlo is used only
/// where no analytic route exists.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qcs_window_moments(
    n: u32,
    window: u64,
    p: f64,
    m: u32,
    samples: u64,
    seed: u64,
    out: *mut QcsMoments,
) -> QcsStatus {
    guarded(|| {
        if out.is_null() {
            return set_error(QcsStatus::NullArgument, "null argument");
        }
        let w = if window == QCS_WINDOW_INFINITE {
            Window::Infinite
        } else if window <= u32::MAX as u64 {
            Window::Finite(window as u32)
        } else {
            return set_error(
                QcsStatus::InvalidParameter,
                "finite window too large; use QCS_WINDOW_INFINITE",
            );
        };
        let spec = match WindowSpec::new(n, w, p, m) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        let budget = qcs::window::McBudget::new(if samples == 0 { 100_000 } else { samples }, seed);
        match qcs::window::b_moments(&spec, &budget) {
            Ok(b) => {
                *out = QcsMoments {
                    m1: b.moments.m1,
                    m2: b.moments.m2,
                    se_m1: b.stderr.map_or(f64::NAN, |e| e.se_m1),
                    se_m2: b.stderr.map_or(f64::NAN, |e| e.se_m2),
                    method: moment_method(b.method),
                };
                QcsStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Effective attenuation (dB/km) of the all-photonic encoding at the
/// given inter-repeater spacing. NaN for nonpositive spacing.
#[no_mangle]
pub extern "C" fn qcs_alpha_eff(hop_km: f64) -> f64 {
    if hop_km > 0.0 {
        hardware::alpha_eff(hop_km)
    } else {
        f64::NAN
    }
}

/// End-to-end packet success probability for an arm of `arm_km` with
/// `repeaters` intermediate repeaters. NaN for nonpositive length.
#[no_mangle]
pub extern "C" fn qcs_p_success(arm_km: f64, repeaters: u32) -> f64 {
    if arm_km > 0.0 {
        hardware::p_success(arm_km, repeaters)
    } else {
        f64::NAN
    }
}

/// Repeater count in 0..=max minimizing (2N+1)/(L p).
#[no_mangle]
pub extern "C" fn qcs_optimize_repeaters(arm_km: f64, max: u32) -> u32 {
    hardware::optimize_repeaters(arm_km, max)
}

/// Detail of the last failure on this thread; empty string when none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn qcs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn qcs_status_name(status: QcsStatus) -> *const c_char {
    let name: &'static CStr = match status {
        QcsStatus::Ok => c"ok",
        QcsStatus::NullArgument => c"null_argument",
        QcsStatus::InvalidUtf8 => c"invalid_utf8",
        QcsStatus::InvalidJson => c"invalid_json",
        QcsStatus::InvalidParameter => c"invalid_parameter",
        QcsStatus::InfeasibleWindow => c"infeasible_window",
        QcsStatus::Unsupported => c"unsupported",
        QcsStatus::StateSpaceTooLarge => c"state_space_too_large",
        QcsStatus::SamplerOverrun => c"sampler_overrun",
        QcsStatus::Overloaded => c"overloaded",
        QcsStatus::NonConvergence => c"non_convergence",
        QcsStatus::InvalidConfig => c"invalid_config",
        QcsStatus::InternalPanic => c"internal_panic",
    };
    name.as_ptr()
}
