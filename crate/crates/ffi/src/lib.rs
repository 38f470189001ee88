//! C ABI for the online RML estimator.
//!
//! Every function returns a [`PrmlStatus`]; on failure a description is kept
//! in thread-local storage and read with [`prml_last_error`]. Panics never
//! cross the boundary. Estimator handles are opaque, created by
//! [`prml_estimator_new`] and released by [`prml_estimator_free`]. A handle
//! whose last push failed is unusable except for reading `theta` and freeing.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use paris_rml::kalman::{log_likelihood, total_score, LgssmSpec};
use paris_rml::model::sv_simulate;
use paris_rml::{Algorithm, AnyModel, Error, OnlineRml, ParameterVector, RmlOptions, StateSpaceModel, StepSchedule};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrmlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// A parameter lies outside the model's domain.
    Domain = 3,
    /// Weight collapse or a degenerate backward kernel (unguarded runs only).
    Degenerate = 4,
    /// A non-finite score or parameter update.
    NonFinite = 5,
    /// The handle is unusable after an earlier failure.
    InvalidState = 6,
    /// A caller-supplied buffer is too small.
    BufferTooSmall = 7,
    Internal = 8,
    Panic = 9,
}

pub const PRML_ALGORITHM_PARIS: u32 = 0;
pub const PRML_ALGORITHM_QUADRATIC: u32 = 1;

/// Estimator settings. Fill with [`prml_options_default`] before editing.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PrmlOptions {
    /// `PRML_ALGORITHM_PARIS` or `PRML_ALGORITHM_QUADRATIC`.
    pub algorithm: u32,
    pub particles: usize,
    /// Backward draws per particle (PaRIS only).
    pub backward_draws: usize,
    /// Accept-reject proposals per draw before the exact fallback.
    pub rejection_cap: usize,
    pub gamma0: f64,
    pub alpha: f64,
    /// Lower bound on the variance parameters.
    pub param_floor: f64,
    /// Observation coefficient of the linear-Gaussian model.
    pub obs_coef: f64,
    /// Skip and flag degenerate steps instead of failing.
    pub guard: bool,
    /// No guard, emission-only first additive term, degeneracy is an error.
    pub paper_fidelity: bool,
}

/// Outcome of one push.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PrmlStep {
    /// False for the first observation, which only primes the filter.
    pub updated: bool,
    /// The update was skipped because of a guarded degeneracy.
    pub skipped: bool,
    /// Time index of the parameter after this push.
    pub t: u64,
    pub gamma: f64,
}

/// Opaque estimator handle.
pub struct PrmlEstimator {
    inner: OnlineRml<AnyModel>,
    failed: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> PrmlStatus {
    match e {
        Error::InvalidInput(_) | Error::Config { .. } | Error::Data(_) => PrmlStatus::InvalidArgument,
        Error::Domain(_) => PrmlStatus::Domain,
        Error::WeightCollapse { .. } | Error::BackwardDegenerate { .. } => PrmlStatus::Degenerate,
        Error::NonFinite { .. } | Error::NonFiniteUpdate { .. } => PrmlStatus::NonFinite,
        _ => PrmlStatus::Internal,
    }
}

struct Fail(PrmlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: PrmlStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

/// Runs `f`, records any failure and converts panics.
fn guarded(f: impl FnOnce() -> Result<(), Fail>) -> PrmlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PrmlStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PrmlStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        fail(PrmlStatus::NullPointer, format!("`{name}` is null"))
    } else {
        Ok(())
    }
}

/// Message of the last failure on this thread, or null after a success. The
/// pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn prml_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn prml_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes the default settings to `out`.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn prml_options_default(out: *mut PrmlOptions) -> PrmlStatus {
    guarded(|| {
        non_null(out, "out")?;
        let d = RmlOptions::default();
        let floor = paris_rml::model::DEFAULT_PARAM_FLOOR;
        // SAFETY: checked non-null; the caller guarantees validity.
        unsafe {
            out.write(PrmlOptions {
                algorithm: PRML_ALGORITHM_PARIS,
                particles: d.particles,
                backward_draws: d.smoother.n_tilde,
                rejection_cap: d.smoother.rejection_cap,
                gamma0: d.schedule.gamma0,
                alpha: d.schedule.alpha,
                param_floor: floor,
                obs_coef: 1.0,
                guard: d.guard,
                paper_fidelity: false,
            })
        };
        Ok(())
    })
}

fn rml_options(o: &PrmlOptions) -> Result<RmlOptions, Fail> {
    let algorithm = match o.algorithm {
        PRML_ALGORITHM_PARIS => Algorithm::Paris,
        PRML_ALGORITHM_QUADRATIC => Algorithm::Quadratic,
        other => return fail(PrmlStatus::InvalidArgument, format!("unknown algorithm code {other}")),
    };
    let mut opts = RmlOptions {
        algorithm,
        particles: o.particles,
        schedule: StepSchedule::new(o.gamma0, o.alpha)?,
        guard: o.guard,
        ..RmlOptions::default()
    };
    opts.smoother.n_tilde = o.backward_draws;
    opts.smoother.rejection_cap = o.rejection_cap;
    if o.paper_fidelity {
        opts = opts.paper_fidelity();
    }
    opts.validate()?;
    Ok(opts)
}

/// Creates an estimator for model `model_id` (`"sv"` or `"lgssm"`) started at
/// `theta0[0..dim]`. `options` may be null for the defaults.
///
/// # Safety
/// `model_id` must be null or a NUL-terminated string; `theta0` must be null
/// or valid for `dim` reads; `options` must be null or valid; `out` must be
/// null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn prml_estimator_new(
    model_id: *const c_char,
    theta0: *const f64,
    dim: usize,
    options: *const PrmlOptions,
    seed: u64,
    out: *mut *mut PrmlEstimator,
) -> PrmlStatus {
    guarded(|| {
        non_null(model_id, "model_id")?;
        non_null(theta0, "theta0")?;
        non_null(out, "out")?;
        // SAFETY: pointers checked non-null; validity is the caller's contract.
        let (id, theta, o) = unsafe {
            let id = CStr::from_ptr(model_id)
                .to_str()
                .map_err(|_| Fail(PrmlStatus::InvalidArgument, "model_id is not UTF-8".into()))?;
            let theta = std::slice::from_raw_parts(theta0, dim).to_vec();
            let mut o = std::mem::zeroed::<PrmlOptions>();
            if options.is_null() {
                prml_options_default(&mut o);
            } else {
                o = *options;
            }
            (id, theta, o)
        };
        let model = AnyModel::from_id(id, o.param_floor, o.obs_coef)?;
        if dim != model.dim() {
            return fail(
                PrmlStatus::InvalidArgument,
                format!("model `{id}` has {} parameters, got {dim}", model.dim()),
            );
        }
        let inner = OnlineRml::new(model, rml_options(&o)?, ParameterVector::new(theta)?, seed)?;
        let handle = Box::into_raw(Box::new(PrmlEstimator { inner, failed: false }));
        // SAFETY: checked non-null.
        unsafe { out.write(handle) };
        Ok(())
    })
}

/// Feeds one observation. `step` may be null.
///
/// # Safety
/// `est` must be null or a live handle not used concurrently; `step` must be
/// null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn prml_estimator_push(est: *mut PrmlEstimator, y: f64, step: *mut PrmlStep) -> PrmlStatus {
    guarded(|| {
        non_null(est, "est")?;
        // SAFETY: checked non-null; exclusive access is the caller's contract.
        let est = unsafe { &mut *est };
        if est.failed {
            return fail(PrmlStatus::InvalidState, "estimator failed earlier; create a new one");
        }
        let rec = est.inner.push(y).inspect_err(|e| est.failed = !matches!(e, Error::Data(_)))?;
        let s = match rec {
            None => PrmlStep { updated: false, skipped: false, t: 0, gamma: 0.0 },
            Some(r) => PrmlStep { updated: true, skipped: r.flags.skipped(), t: r.t as u64, gamma: r.gamma },
        };
        if !step.is_null() {
            // SAFETY: checked non-null.
            unsafe { step.write(s) };
        }
        Ok(())
    })
}

/// Number of parameter components, or 0 for a null handle.
///
/// # Safety
/// `est` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn prml_estimator_dim(est: *const PrmlEstimator) -> usize {
    // SAFETY: caller contract.
    unsafe { est.as_ref() }.map_or(0, |e| e.inner.theta().len())
}

/// Copies the current parameter into `out[0..len]`; `len` must be at least
/// the model dimension.
///
/// # Safety
/// `est` must be null or a live handle; `out` must be null or valid for `len`
/// writes.
#[no_mangle]
pub unsafe extern "C" fn prml_estimator_theta(est: *const PrmlEstimator, out: *mut f64, len: usize) -> PrmlStatus {
    guarded(|| {
        non_null(est, "est")?;
        non_null(out, "out")?;
        // SAFETY: checked non-null; validity is the caller's contract.
        let theta = unsafe { &*est }.inner.theta().as_slice();
        if len < theta.len() {
            return fail(PrmlStatus::BufferTooSmall, format!("need {} values, buffer holds {len}", theta.len()));
        }
        // SAFETY: `out` holds at least `theta.len()` values.
        unsafe { std::ptr::copy_nonoverlapping(theta.as_ptr(), out, theta.len()) };
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `est` must be null or a handle from [`prml_estimator_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn prml_estimator_free(est: *mut PrmlEstimator) {
    if !est.is_null() {
        // SAFETY: the handle came from `Box::into_raw`.
        drop(unsafe { Box::from_raw(est) });
    }
}

/// Simulates the stochastic-volatility model at `theta[0..3]` for `steps`
/// transitions, writing `steps + 1` observations to `y` and, when `x` is not
/// null, the hidden states to `x`. `len` is the capacity of each buffer.
///
/// # Safety
/// `theta` must be null or valid for 3 reads; `y` (and `x` if not null) must
/// be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn prml_sv_simulate(
    theta: *const f64,
    steps: usize,
    seed: u64,
    y: *mut f64,
    x: *mut f64,
    len: usize,
) -> PrmlStatus {
    guarded(|| {
        non_null(theta, "theta")?;
        non_null(y, "y")?;
        let needed = steps.checked_add(1).ok_or_else(|| Fail(PrmlStatus::InvalidArgument, "steps overflows".into()))?;
        if len < needed {
            return fail(PrmlStatus::BufferTooSmall, format!("need {needed} values, buffer holds {len}"));
        }
        // SAFETY: checked non-null; 3 reads per the contract.
        let th = ParameterVector::new(unsafe { std::slice::from_raw_parts(theta, 3) }.to_vec())?;
        let (states, obs) = sv_simulate(&th, steps, seed)?;
        // SAFETY: both buffers hold at least `needed` values.
        unsafe {
            std::ptr::copy_nonoverlapping(obs.as_ptr(), y, needed);
            if !x.is_null() {
                std::ptr::copy_nonoverlapping(states.as_ptr(), x, needed);
            }
        }
        Ok(())
    })
}

/// Exact log-likelihood and its gradient in `(phi, sigma2, beta2)` for the
/// linear-Gaussian model with observation coefficient `obs_coef`, started from
/// the stationary law. `loglik` and `score` (3 values) may each be null.
///
/// # Safety
/// `y` must be null or valid for `n` reads; `loglik` must be null or valid for
/// a write; `score` must be null or valid for 3 writes.
#[no_mangle]
pub unsafe extern "C" fn prml_kalman_score(
    phi: f64,
    sigma2: f64,
    obs_coef: f64,
    beta2: f64,
    y: *const f64,
    n: usize,
    loglik: *mut f64,
    score: *mut f64,
) -> PrmlStatus {
    guarded(|| {
        non_null(y, "y")?;
        let spec = LgssmSpec::new(phi, sigma2, obs_coef, beta2)?;
        // SAFETY: checked non-null; `n` reads per the contract.
        let obs = unsafe { std::slice::from_raw_parts(y, n) };
        if !obs.iter().all(|v| v.is_finite()) {
            return fail(PrmlStatus::InvalidArgument, "observations must be finite");
        }
        if !loglik.is_null() {
            let ll = log_likelihood(&spec, obs)?;
            // SAFETY: checked non-null.
            unsafe { loglik.write(ll) };
        }
        if !score.is_null() {
            let s = total_score(&spec, obs)?;
            // SAFETY: checked non-null; 3 writes per the contract.
            unsafe { std::ptr::copy_nonoverlapping(s.as_ptr(), score, 3) };
        }
        Ok(())
    })
}
