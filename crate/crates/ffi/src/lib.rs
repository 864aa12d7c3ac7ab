//! C ABI over `prodist`.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `_free` function. Every fallible call returns a [`PdStatus`]; on
//! failure [`pd_last_error_message`] describes the error on the calling
//! thread. Out-parameters are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use prodist::descent::{gradient_step, nearest_newton_step, DescentConfig};
use prodist::harness::{generate_problem, run, RunConfig};
use prodist::lagrangian::{brouwer_step, maxent_lagrangian};
use prodist::{oracle, CategoricalDomain, ExactSource, GameUtilities, PdError, ProductDistribution, WorldUtility};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidDistribution = 3,
    DimensionMismatch = 4,
    GuardExceeded = 5,
    NumericFailure = 6,
    UtilityFailure = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// A world utility over a categorical joint move space.
pub struct PdProblem {
    utilities: GameUtilities,
}

/// A product distribution: one probability vector per agent.
pub struct PdDistribution {
    q: ProductDistribution,
}

/// Utility callback: writes `G(x)` for the `n` move indices at `x` into `out`
/// and returns 0, or returns nonzero on failure. It may be called from any
/// thread and must be safe to call concurrently with the same `user` pointer.
pub type PdUtilityCallback = extern "C" fn(user: *mut c_void, x: *const usize, n: usize, out: *mut f64) -> i32;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(PdStatus, String);

impl From<PdError> for Failure {
    fn from(e: PdError) -> Self {
        let status = match &e {
            PdError::InvalidDistribution(_) | PdError::KlUndefined { .. } | PdError::NoPositiveMass { .. } => {
                PdStatus::InvalidDistribution
            }
            PdError::DimensionMismatch { .. } => PdStatus::DimensionMismatch,
            PdError::GuardExceeded { .. } => PdStatus::GuardExceeded,
            PdError::StepCollapse { .. }
            | PdError::DegenerateConstraints
            | PdError::EstimatorUnavailable { .. }
            | PdError::NoCoverage { .. }
            | PdError::EmptyTruncation { .. } => PdStatus::NumericFailure,
            PdError::UtilityEvaluation(_) | PdError::PartialBlock { .. } => PdStatus::UtilityFailure,
            PdError::Io(_) => PdStatus::Io,
            _ => PdStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard<F>(f: F) -> PdStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PdStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PdStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(PdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PdStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

fn split_marginals(domain: &CategoricalDomain, flat: &[f64]) -> Result<Vec<Vec<f64>>, Failure> {
    let total: usize = domain.move_counts().iter().sum();
    if flat.len() != total {
        return Err(PdError::DimensionMismatch { expected: total, found: flat.len() }.into());
    }
    let mut rest = flat;
    Ok(domain
        .move_counts()
        .iter()
        .map(|&m| {
            let (head, tail) = rest.split_at(m);
            rest = tail;
            head.to_vec()
        })
        .collect())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Dense table problem. `values` has `Π move_counts` entries in row-major
/// order with agent 0 varying slowest.
///
/// # Safety
/// Pointers must be valid for the given lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_problem_from_table(
    move_counts: *const usize,
    agents: usize,
    values: *const f64,
    value_count: usize,
    out: *mut *mut PdProblem,
) -> PdStatus {
    guard(|| {
        let domain = CategoricalDomain::new(as_slice(move_counts, agents, "move_counts")?.to_vec())?;
        let table = as_slice(values, value_count, "values")?.to_vec();
        let u = WorldUtility::from_table(domain, table)?;
        write_out(out, boxed(PdProblem { utilities: GameUtilities::team(u) }), "out")
    })
}

/// Built-in generator: `random-table`, `congestion` (default costs) or `sum`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_problem_generate(
    name: *const c_char,
    agents: usize,
    moves: usize,
    seed: u64,
    out: *mut *mut PdProblem,
) -> PdStatus {
    guard(|| {
        let u = generate_problem(c_str(name, "name")?, agents, moves, seed, None)?;
        write_out(out, boxed(PdProblem { utilities: GameUtilities::team(u) }), "out")
    })
}

struct Callback {
    f: PdUtilityCallback,
    user: *mut c_void,
}

// The caller guarantees the callback is thread-safe for this `user` pointer.
unsafe impl Send for Callback {}
unsafe impl Sync for Callback {}

/// Black-box problem evaluated through `callback`.
///
/// # Safety
/// `move_counts` must hold `agents` entries; `callback` and `user` must stay
/// valid until the problem is freed.
#[no_mangle]
pub unsafe extern "C" fn pd_problem_from_callback(
    move_counts: *const usize,
    agents: usize,
    callback: Option<extern "C" fn(user: *mut c_void, x: *const usize, n: usize, out: *mut f64) -> i32>,
    user: *mut c_void,
    out: *mut *mut PdProblem,
) -> PdStatus {
    guard(|| {
        let domain = CategoricalDomain::new(as_slice(move_counts, agents, "move_counts")?.to_vec())?;
        let cb = Callback { f: callback.ok_or_else(|| null("callback"))?, user };
        let u = WorldUtility::from_fn(domain, move |x| {
            let cb = &cb;
            let mut v = f64::NAN;
            match (cb.f)(cb.user, x.as_ptr(), x.len(), &mut v) {
                0 => Ok(v),
                code => Err(format!("callback returned {code}")),
            }
        });
        write_out(out, boxed(PdProblem { utilities: GameUtilities::team(u) }), "out")
    })
}

/// # Safety
/// `problem` must come from a `pd_problem_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pd_problem_free(problem: *mut PdProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// # Safety
/// `problem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_problem_agent_count(problem: *const PdProblem, out: *mut usize) -> PdStatus {
    guard(|| write_out(out, as_ref(problem, "problem")?.utilities.domain().agent_count(), "out"))
}

/// # Safety
/// `problem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_problem_move_count(problem: *const PdProblem, agent: usize, out: *mut usize) -> PdStatus {
    guard(|| {
        let d = as_ref(problem, "problem")?.utilities.domain();
        if agent >= d.agent_count() {
            return Err(Failure(PdStatus::InvalidArgument, format!("no agent {agent}")));
        }
        write_out(out, d.moves(agent), "out")
    })
}

/// `G(x)` for the `agents` move indices at `x`.
///
/// # Safety
/// `x` must hold `agents` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_problem_evaluate(problem: *const PdProblem, x: *const usize, agents: usize, out: *mut f64) -> PdStatus {
    guard(|| {
        let p = as_ref(problem, "problem")?;
        let g = p.utilities.world().eval(as_slice(x, agents, "x")?)?;
        write_out(out, g, "out")
    })
}

/// Uniform distribution over the problem's moves.
///
/// # Safety
/// `problem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_distribution_uniform(problem: *const PdProblem, out: *mut *mut PdDistribution) -> PdStatus {
    guard(|| {
        let q = ProductDistribution::uniform(as_ref(problem, "problem")?.utilities.domain());
        write_out(out, boxed(PdDistribution { q }), "out")
    })
}

/// Distribution from concatenated per-agent probability vectors, laid out as
/// the problem's move counts.
///
/// # Safety
/// `values` must hold `len` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_distribution_from_marginals(
    problem: *const PdProblem,
    values: *const f64,
    len: usize,
    out: *mut *mut PdDistribution,
) -> PdStatus {
    guard(|| {
        let d = as_ref(problem, "problem")?.utilities.domain();
        let m = split_marginals(d, as_slice(values, len, "values")?)?;
        let q = ProductDistribution::from_marginals(m)?;
        write_out(out, boxed(PdDistribution { q }), "out")
    })
}

/// # Safety
/// `dist` must come from a `pd_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pd_distribution_free(dist: *mut PdDistribution) {
    if !dist.is_null() {
        drop(Box::from_raw(dist));
    }
}

/// `S(q) = Σ_i S(q_i)`.
///
/// # Safety
/// `dist` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_distribution_entropy(dist: *const PdDistribution, out: *mut f64) -> PdStatus {
    guard(|| write_out(out, as_ref(dist, "dist")?.q.entropy(), "out"))
}

/// Copies agent `agent`'s probabilities into `buf`. `written` receives the
/// number of moves, also when `buf` is too small.
///
/// # Safety
/// `buf` must be writable for `len` entries; `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_distribution_marginal(
    dist: *const PdDistribution,
    agent: usize,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> PdStatus {
    guard(|| {
        let q = &as_ref(dist, "dist")?.q;
        if agent >= q.agent_count() {
            return Err(Failure(PdStatus::InvalidArgument, format!("no agent {agent}")));
        }
        let m = q.marginal(agent);
        write_out(written, m.len(), "written")?;
        if len < m.len() {
            return Err(Failure(PdStatus::BufferTooSmall, format!("need {} entries, got {len}", m.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(m.as_ptr(), buf, m.len());
        Ok(())
    })
}

/// `E_q(G)` by enumeration.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_exact_expectation(problem: *const PdProblem, dist: *const PdDistribution, out: *mut f64) -> PdStatus {
    guard(|| {
        let p = as_ref(problem, "problem")?;
        let q = &as_ref(dist, "dist")?.q;
        write_out(out, oracle::exact_expectation(p.utilities.world(), q)?, "out")
    })
}

/// `L(q) = β·E_q(G) − S(q)` by enumeration.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_lagrangian(problem: *const PdProblem, dist: *const PdDistribution, beta: f64, out: *mut f64) -> PdStatus {
    guard(|| {
        let p = as_ref(problem, "problem")?;
        let q = &as_ref(dist, "dist")?.q;
        let mut src = ExactSource::new(p.utilities.clone())?;
        write_out(out, maxent_lagrangian(q, &mut src, beta)?, "out")
    })
}

#[derive(Clone, Copy)]
enum Rule {
    Gradient { step_size: f64, floor: f64 },
    NearestNewton { floor: f64 },
    Brouwer { mix: f64 },
}

unsafe fn step(problem: *const PdProblem, dist: *const PdDistribution, beta: f64, rule: Rule, out: *mut *mut PdDistribution) -> PdStatus {
    guard(|| {
        let p = as_ref(problem, "problem")?;
        let q = &as_ref(dist, "dist")?.q;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut src = ExactSource::new(p.utilities.clone())?;
        let next = match rule {
            Rule::Gradient { step_size, floor } => {
                let cfg = DescentConfig { step_size, floor, ..DescentConfig::default() };
                gradient_step(q, &mut src, beta, &cfg)?
            }
            Rule::NearestNewton { floor } => {
                let cfg = DescentConfig { floor, ..DescentConfig::default() };
                nearest_newton_step(q, &mut src, beta, &cfg)?
            }
            Rule::Brouwer { mix } => brouwer_step(q, &mut src, beta, mix)?,
        };
        write_out(out, boxed(PdDistribution { q: next }), "out")
    })
}

/// One exact projected-gradient step; the result is a new handle.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_gradient_step(
    problem: *const PdProblem,
    dist: *const PdDistribution,
    beta: f64,
    step_size: f64,
    floor: f64,
    out: *mut *mut PdDistribution,
) -> PdStatus {
    step(problem, dist, beta, Rule::Gradient { step_size, floor }, out)
}

/// One exact Nearest Newton step; the result is a new handle.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_nearest_newton_step(
    problem: *const PdProblem,
    dist: *const PdDistribution,
    beta: f64,
    floor: f64,
    out: *mut *mut PdDistribution,
) -> PdStatus {
    step(problem, dist, beta, Rule::NearestNewton { floor }, out)
}

/// One exact damped Brouwer step; the result is a new handle.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_brouwer_step(
    problem: *const PdProblem,
    dist: *const PdDistribution,
    beta: f64,
    mix: f64,
    out: *mut *mut PdDistribution,
) -> PdStatus {
    step(problem, dist, beta, Rule::Brouwer { mix }, out)
}

/// Marginals of the Boltzmann distribution `∝ e^{−βG}`.
///
/// # Safety
/// `problem` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_canonical_marginals(problem: *const PdProblem, beta: f64, out: *mut *mut PdDistribution) -> PdStatus {
    guard(|| {
        let p = as_ref(problem, "problem")?;
        let q = oracle::canonical_marginals(p.utilities.world(), beta)?;
        write_out(out, boxed(PdDistribution { q }), "out")
    })
}

/// Exhaustive minimizer of `G`; ties go to the lowest row-major index.
///
/// # Safety
/// `x` must be writable for `len` entries; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_global_minimum(problem: *const PdProblem, x: *mut usize, len: usize, value: *mut f64) -> PdStatus {
    guard(|| {
        let p = as_ref(problem, "problem")?;
        let (best, g) = oracle::global_minimum(p.utilities.world())?;
        if len < best.len() {
            return Err(Failure(PdStatus::BufferTooSmall, format!("need {} entries, got {len}", best.len())));
        }
        if x.is_null() {
            return Err(null("x"));
        }
        write_out(value, g, "value")?;
        ptr::copy_nonoverlapping(best.as_ptr(), x, best.len());
        Ok(())
    })
}

/// Runs a JSON run configuration in memory. `out` receives a JSON string
/// `{"summary": {...}, "trace": [...]}` to be released with `pd_string_free`.
/// Relative table paths resolve against the working directory.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_run_json(config_json: *const c_char, out: *mut *mut c_char) -> PdStatus {
    guard(|| {
        let config = RunConfig::from_json(c_str(config_json, "config_json")?)?;
        let outcome = run(&config, None, None).map_err(|f| Failure::from(f.error))?;
        let doc = serde_json::json!({ "summary": outcome.summary, "trace": outcome.trace });
        let text = CString::new(doc.to_string()).map_err(|e| Failure(PdStatus::InvalidArgument, e.to_string()))?;
        write_out(out, text.into_raw(), "out")
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
