//! C interface to the offo solvers.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Every fallible function returns an
//! [`OffoStatus`]; on failure a message is available from
//! [`offo_last_error`] on the same thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use offo_core::bounds::{project_box, BoundBox};
use offo_core::config::{ExperimentConfig, SolverKind};
use offo_core::cost::CostLedger;
use offo_core::driver::{run_cycles, RunSetup, StopRule};
use offo_core::experiment::{self, Outcome};
use offo_core::level::{AlgorithmParams, NoObserver};
use offo_core::multilevel::{Hierarchy, Level, MultilevelConfig, MultilevelSolver};
use offo_core::oracle::{FnOracle, GradientOracle};
use offo_core::problems::ProblemKind;
use offo_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    /// The solver stopped on an error, e.g. a non-finite gradient.
    Aborted = 5,
    Panic = 6,
    BufferTooSmall = 7,
}

/// Validated experiment configuration.
pub struct OffoConfig(ExperimentConfig);

/// Finished experiment: trace and final iterate.
pub struct OffoRun(Outcome);

/// One cycle of a run. `d_norm` is NaN where no value was recorded.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OffoCycle {
    pub cycle: usize,
    pub d_norm: f64,
    pub xi_norm: f64,
    pub cost: f64,
    pub fine_evals: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OffoMinimizeInfo {
    pub iterations: usize,
    pub gradient_evals: u64,
    pub final_xi: f64,
    pub converged: bool,
}

/// Writes the gradient at `x` into `g` (both of length `n`). A nonzero
/// return stops the solver with `OFFO_STATUS_ABORTED`.
pub type OffoGradientFn = Option<unsafe extern "C" fn(user: *mut c_void, x: *const f64, g: *mut f64, n: usize) -> c_int>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: OffoStatus, msg: impl Into<String>) -> OffoStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> OffoStatus {
    match e {
        Error::Config(_) | Error::InvalidCovering(_) | Error::NonNestedGrids { .. } => OffoStatus::Config,
        Error::Io(_) | Error::Trace(_) => OffoStatus::Io,
        Error::NonFiniteGradient { .. } => OffoStatus::Aborted,
        _ => OffoStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> OffoStatus) -> OffoStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(OffoStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, OffoStatus> {
    if p.is_null() {
        return Err(fail(OffoStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(OffoStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

fn core<T>(r: offo_core::Result<T>) -> Result<T, OffoStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

/// Library version, NUL-terminated and static.
#[no_mangle]
pub extern "C" fn offo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn offo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

fn store_config(cfg: ExperimentConfig, out: *mut *mut OffoConfig) -> OffoStatus {
    tri!(core(cfg.validate()));
    unsafe { *out = Box::into_raw(Box::new(OffoConfig(cfg))) };
    OffoStatus::Ok
}

/// Parses a TOML configuration.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn offo_config_from_toml(text: *const c_char, out: *mut *mut OffoConfig) -> OffoStatus {
    guard(|| {
        if out.is_null() {
            return fail(OffoStatus::NullPointer, "out is null");
        }
        let text = tri!(str_arg(text, "text"));
        store_config(tri!(core(ExperimentConfig::from_toml(text))), out)
    })
}

/// Reads a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn offo_config_load(path: *const c_char, out: *mut *mut OffoConfig) -> OffoStatus {
    guard(|| {
        if out.is_null() {
            return fail(OffoStatus::NullPointer, "out is null");
        }
        let path = tri!(str_arg(path, "path"));
        store_config(tri!(core(ExperimentConfig::load(Path::new(path)))), out)
    })
}

/// Default configuration for a problem (`membrane`, `minsurf`, ...) and a
/// solver (`adagb2`, `ml`, `dd`, `ml-dd`).
///
/// # Safety
/// `problem` and `solver` must be NUL-terminated strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn offo_config_new(
    problem: *const c_char,
    cells: usize,
    solver: *const c_char,
    out: *mut *mut OffoConfig,
) -> OffoStatus {
    guard(|| {
        if out.is_null() {
            return fail(OffoStatus::NullPointer, "out is null");
        }
        let problem: ProblemKind = tri!(core(tri!(str_arg(problem, "problem")).parse()));
        let solver: SolverKind = tri!(core(tri!(str_arg(solver, "solver")).parse()));
        store_config(ExperimentConfig::new(problem, cells, solver), out)
    })
}

/// # Safety
/// `cfg` must come from this library and not be freed.
#[no_mangle]
pub unsafe extern "C" fn offo_config_set_seed(cfg: *mut OffoConfig, seed: u64) -> OffoStatus {
    guard(|| match cfg.as_mut() {
        Some(c) => {
            c.0.seed = seed;
            OffoStatus::Ok
        }
        None => fail(OffoStatus::NullPointer, "cfg is null"),
    })
}

/// # Safety
/// `cfg` must come from this library and not be freed.
#[no_mangle]
pub unsafe extern "C" fn offo_config_set_max_cycles(cfg: *mut OffoConfig, max_cycles: usize) -> OffoStatus {
    guard(|| match cfg.as_mut() {
        Some(_) if max_cycles == 0 => fail(OffoStatus::InvalidArgument, "max_cycles must be at least 1"),
        Some(c) => {
            c.0.stop.max_cycles = max_cycles;
            OffoStatus::Ok
        }
        None => fail(OffoStatus::NullPointer, "cfg is null"),
    })
}

/// Writes the 64-character configuration hash and a NUL into `buf`.
///
/// # Safety
/// `cfg` must be valid and `buf` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn offo_config_hash(cfg: *const OffoConfig, buf: *mut c_char, len: usize) -> OffoStatus {
    guard(|| {
        let (Some(c), false) = (cfg.as_ref(), buf.is_null()) else {
            return fail(OffoStatus::NullPointer, "cfg or buf is null");
        };
        let h = c.0.hash();
        if len < h.len() + 1 {
            return fail(OffoStatus::BufferTooSmall, format!("need {} bytes", h.len() + 1));
        }
        std::ptr::copy_nonoverlapping(h.as_ptr().cast(), buf, h.len());
        *buf.add(h.len()) = 0;
        OffoStatus::Ok
    })
}

/// # Safety
/// `cfg` must come from this library (or be null) and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn offo_config_free(cfg: *mut OffoConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the configured experiment. A run that exhausts its cycle budget
/// still succeeds; inspect [`offo_run_exit_code`].
///
/// # Safety
/// `cfg` must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn offo_run(cfg: *const OffoConfig, out: *mut *mut OffoRun) -> OffoStatus {
    guard(|| {
        let (Some(c), false) = (cfg.as_ref(), out.is_null()) else {
            return fail(OffoStatus::NullPointer, "cfg or out is null");
        };
        let outcome = tri!(core(experiment::run(&c.0)));
        *out = Box::into_raw(Box::new(OffoRun(outcome)));
        OffoStatus::Ok
    })
}

/// 0 converged, 2 cycle budget exhausted, 1 aborted; -1 for a null handle.
///
/// # Safety
/// `run` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn offo_run_exit_code(run: *const OffoRun) -> c_int {
    run.as_ref().map_or(-1, |r| r.0.exit_code())
}

/// # Safety
/// `run` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn offo_run_num_cycles(run: *const OffoRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.trace.num_cycles())
}

/// Number of cycle records, including the initial one.
///
/// # Safety
/// `run` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn offo_run_num_records(run: *const OffoRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.trace.cycles.len())
}

/// # Safety
/// `run` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn offo_run_final_cost(run: *const OffoRun) -> f64 {
    run.as_ref().map_or(f64::NAN, |r| r.0.trace.final_cost())
}

/// # Safety
/// `run` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn offo_run_final_xi(run: *const OffoRun) -> f64 {
    run.as_ref().map_or(f64::NAN, |r| r.0.trace.final_xi())
}

/// # Safety
/// `run` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn offo_run_dim(run: *const OffoRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.result.x.len())
}

/// Copies the final iterate into `out`, which must hold `offo_run_dim` values.
///
/// # Safety
/// `run` must be valid and `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn offo_run_solution(run: *const OffoRun, out: *mut f64, len: usize) -> OffoStatus {
    guard(|| {
        let (Some(r), false) = (run.as_ref(), out.is_null()) else {
            return fail(OffoStatus::NullPointer, "run or out is null");
        };
        let x = &r.0.result.x;
        if len < x.len() {
            return fail(OffoStatus::BufferTooSmall, format!("need {} values", x.len()));
        }
        std::ptr::copy_nonoverlapping(x.as_ptr(), out, x.len());
        OffoStatus::Ok
    })
}

/// Record `index` (0 is the starting point).
///
/// # Safety
/// `run` must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn offo_run_cycle(run: *const OffoRun, index: usize, out: *mut OffoCycle) -> OffoStatus {
    guard(|| {
        let (Some(r), false) = (run.as_ref(), out.is_null()) else {
            return fail(OffoStatus::NullPointer, "run or out is null");
        };
        let Some(c) = r.0.trace.cycles.get(index) else {
            return fail(OffoStatus::InvalidArgument, format!("no cycle {index}"));
        };
        *out = OffoCycle {
            cycle: c.cycle,
            d_norm: c.d_norm.unwrap_or(f64::NAN),
            xi_norm: c.xi_norm,
            cost: c.cost,
            fine_evals: c.fine_evals,
        };
        OffoStatus::Ok
    })
}

/// Writes `<stem>.ndjson` and `<stem>.csv`.
///
/// # Safety
/// `run` must be valid and `stem` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn offo_run_save(run: *const OffoRun, stem: *const c_char) -> OffoStatus {
    guard(|| {
        let Some(r) = run.as_ref() else {
            return fail(OffoStatus::NullPointer, "run is null");
        };
        let stem = tri!(str_arg(stem, "stem"));
        tri!(core(r.0.trace.save(Path::new(stem))));
        OffoStatus::Ok
    })
}

/// # Safety
/// `run` must come from this library (or be null) and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn offo_run_free(run: *mut OffoRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

struct UserData(*mut c_void);

// The callback is only ever invoked from the thread that called
// `offo_minimize`; the single-level solver does not spawn threads.
unsafe impl Send for UserData {}
unsafe impl Sync for UserData {}

/// Minimizes over the box `[lower, upper]` with single-level ADAGB2 using
/// only gradients from `grad`. `x` holds the start on entry (projected onto
/// the box) and the final iterate on return. `lower` or `upper` may be null
/// for an unbounded side. The callback is also used to report the stopping
/// measure; those calls are not counted in `info.gradient_evals`.
///
/// # Safety
/// `x` must be writable for `n` doubles, `lower`/`upper` readable for `n`
/// doubles when non-null, and `info` valid or null.
#[no_mangle]
pub unsafe extern "C" fn offo_minimize(
    n: usize,
    grad: OffoGradientFn,
    user: *mut c_void,
    lower: *const f64,
    upper: *const f64,
    x: *mut f64,
    max_iterations: usize,
    tolerance: f64,
    info: *mut OffoMinimizeInfo,
) -> OffoStatus {
    guard(|| {
        let Some(grad) = grad else {
            return fail(OffoStatus::NullPointer, "grad is null");
        };
        if x.is_null() {
            return fail(OffoStatus::NullPointer, "x is null");
        }
        if n == 0 || max_iterations == 0 || !(tolerance >= 0.0) {
            return fail(OffoStatus::InvalidArgument, "need n > 0, max_iterations > 0 and tolerance >= 0");
        }
        let side = |p: *const f64, fill: f64| {
            if p.is_null() {
                vec![fill; n]
            } else {
                std::slice::from_raw_parts(p, n).to_vec()
            }
        };
        let bounds = tri!(core(BoundBox::new(side(lower, f64::NEG_INFINITY), side(upper, f64::INFINITY))));
        let x_out = std::slice::from_raw_parts_mut(x, n);
        let x0 = tri!(core(project_box(&*x_out, &bounds)));

        let user = Arc::new(UserData(user));
        let callback = move |x: &[f64], g: &mut [f64]| {
            let rc = grad(user.0, x.as_ptr(), g.as_mut_ptr(), x.len());
            if rc != 0 {
                g.fill(f64::NAN);
            }
        };
        let mut ledger = CostLedger::new();
        let counter = ledger.add_level(n);
        let reporting = FnOracle::new(n, callback.clone());
        let oracle: Arc<dyn GradientOracle> = Arc::new(FnOracle::new(n, callback).with_counter(counter.clone()));
        let solver = tri!(core(MultilevelSolver::new(
            tri!(core(Hierarchy::new(vec![Level { oracle, transfer: None }]))),
            MultilevelConfig::default(),
        )));
        let setup = RunSetup {
            bounds: &bounds,
            exact: &reporting,
            ledger: &ledger,
            stop: StopRule {
                abs_tol: tolerance,
                rel_tol: 0.0,
                max_cycles: max_iterations,
            },
            varsigma: AlgorithmParams::default().varsigma,
        };
        let res = tri!(core(run_cycles(&solver, &setup, x0, &NoObserver, &mut |_, _| {})));
        x_out.copy_from_slice(&res.x);
        if let Some(info) = info.as_mut() {
            *info = OffoMinimizeInfo {
                iterations: res.num_cycles(),
                gradient_evals: counter.get(),
                final_xi: res.final_xi(),
                converged: res.converged(),
            };
        }
        match &res.stop {
            offo_core::driver::StopReason::Aborted(why) => fail(OffoStatus::Aborted, why.clone()),
            _ => OffoStatus::Ok,
        }
    })
}
