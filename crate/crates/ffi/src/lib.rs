//! C ABI over the bound evaluators, the lattice prior sampler and the
//! trajectory certifier.
//!
//! Every fallible entry point returns a [`PgStatus`] and writes its result
//! through an out-pointer. On failure the message is kept per thread and can
//! be read with [`pg_last_error_message`]. Panics never cross the boundary;
//! they surface as [`PgStatus::Internal`].

// Entry points are called from C with the pointer contract documented on
// each function; null is always checked before use.
#![allow(clippy::not_unsafe_ptr_arg_deref)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pacgrad::certifier::{self, Extras};
use pacgrad::discrete_noise::{GridNoiseSpec, LatticeSampler};
use pacgrad::optimizers::LogSummary;
use pacgrad::rng::{self, Stream};
use pacgrad::scalar_bounds::{self as sb, BoundBreakdown, CatoniParams, CldInputs, TheoremId};
use pacgrad::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgStatus {
    Ok = 0,
    NullArgument = 1,
    Domain = 2,
    Contract = 3,
    Format = 4,
    Config = 5,
    Io = 6,
    InvalidUtf8 = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgTheorem {
    DataPac = 0,
    Fgd = 1,
    Fsgd = 2,
    Gld = 3,
    Sgld = 4,
    SgldSubg = 5,
    Cld = 6,
    Rgd = 7,
}

impl From<PgTheorem> for TheoremId {
    fn from(t: PgTheorem) -> Self {
        match t {
            PgTheorem::DataPac => TheoremId::DataPac,
            PgTheorem::Fgd => TheoremId::Fgd,
            PgTheorem::Fsgd => TheoremId::Fsgd,
            PgTheorem::Gld => TheoremId::Gld,
            PgTheorem::Sgld => TheoremId::Sgld,
            PgTheorem::SgldSubg => TheoremId::SgldSubg,
            PgTheorem::Cld => TheoremId::Cld,
            PgTheorem::Rgd => TheoremId::Rgd,
        }
    }
}

impl From<TheoremId> for PgTheorem {
    fn from(t: TheoremId) -> Self {
        match t {
            TheoremId::DataPac => PgTheorem::DataPac,
            TheoremId::Fgd => PgTheorem::Fgd,
            TheoremId::Fsgd => PgTheorem::Fsgd,
            TheoremId::Gld => PgTheorem::Gld,
            TheoremId::Sgld => PgTheorem::Sgld,
            TheoremId::SgldSubg => PgTheorem::SgldSubg,
            TheoremId::Cld => PgTheorem::Cld,
            TheoremId::Rgd => PgTheorem::Rgd,
        }
    }
}

/// `(η, n, m, δ)`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgCatoniParams {
    pub eta: f64,
    pub n: u64,
    pub m: u64,
    pub delta: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgBoundBreakdown {
    pub empirical_term: f64,
    pub confidence_term: f64,
    pub kl_term: f64,
    pub total: f64,
    pub theorem: PgTheorem,
}

impl From<BoundBreakdown> for PgBoundBreakdown {
    fn from(b: BoundBreakdown) -> Self {
        PgBoundBreakdown {
            empirical_term: b.empirical_term,
            confidence_term: b.confidence_term,
            kl_term: b.kl_term,
            total: b.total,
            theorem: b.theorem_id.into(),
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgCldInputs {
    pub beta: f64,
    pub lambda_reg: f64,
    pub loss_bound: f64,
    pub lipschitz: f64,
    pub horizon: f64,
}

/// Inputs a trajectory does not record. A NaN field means "not given".
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgExtras {
    pub kl: f64,
    pub lipschitz: f64,
    pub l0: f64,
    pub rgd_p: f64,
}

impl From<PgExtras> for Extras {
    fn from(e: PgExtras) -> Self {
        let opt = |v: f64| (!v.is_nan()).then_some(v);
        Extras { kl: opt(e.kl), lipschitz: opt(e.lipschitz), l0: opt(e.l0), rgd_p: opt(e.rgd_p) }
    }
}

/// Opaque trajectory summary loaded from `summary.json`.
pub struct PgTrajectory {
    summary: LogSummary,
}

/// Opaque lattice sampler with its own random stream.
pub struct PgLattice {
    sampler: LatticeSampler,
    rng: Stream,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> PgStatus {
    match err {
        Error::Domain(_) => PgStatus::Domain,
        Error::Contract(_) => PgStatus::Contract,
        Error::Format { .. } | Error::Json(_) => PgStatus::Format,
        Error::Config { .. } => PgStatus::Config,
        Error::Io(_) => PgStatus::Io,
        Error::Step { source, .. } | Error::Run { source, .. } => status_of(source),
    }
}

enum Failure {
    Null(&'static str),
    Utf8(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            PgStatus::Ok
        }
        Ok(Err(Failure::Null(name))) => {
            set_last_error(format!("null pointer passed for `{name}`"));
            PgStatus::NullArgument
        }
        Ok(Err(Failure::Utf8(name))) => {
            set_last_error(format!("`{name}` is not valid UTF-8"));
            PgStatus::InvalidUtf8
        }
        Ok(Err(Failure::Core(e))) => {
            let status = status_of(&e);
            set_last_error(e.to_string());
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            PgStatus::Internal
        }
    }
}

fn out<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: the caller promises a non-null `p` is valid for writes.
    unsafe { p.as_mut() }.ok_or(Failure::Null(name))
}

fn input<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: the caller promises a non-null `p` is valid for reads.
    unsafe { p.as_ref() }.ok_or(Failure::Null(name))
}

fn string<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    // SAFETY: non-null and, per the contract, NUL-terminated.
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| Failure::Utf8(name))
}

fn params(p: *const PgCatoniParams) -> Result<CatoniParams, Failure> {
    let p = input(p, "params")?;
    Ok(CatoniParams::new(p.eta, p.n as usize, p.m as usize, p.delta)?)
}

fn write_bound(out_ptr: *mut PgBoundBreakdown, b: pacgrad::Result<BoundBreakdown>) -> Result<(), Failure> {
    *out(out_ptr, "out")? = b?.into();
    Ok(())
}

/// Message of the last failed call on this thread, or null if it succeeded.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Free a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pg_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: allocated by `CString::into_raw` in this crate.
        drop(unsafe { CString::from_raw(s) });
    }
}

#[no_mangle]
pub extern "C" fn pg_c_eta(eta: f64, out_value: *mut f64) -> PgStatus {
    guard(|| {
        *out(out_value, "out_value")? = sb::c_eta(eta)?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn pg_c_delta(delta: f64, out_value: *mut f64) -> PgStatus {
    guard(|| {
        *out(out_value, "out_value")? = sb::c_delta(delta)?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn pg_phi(x: f64, lambda: f64, k: u64, out_value: *mut f64) -> PgStatus {
    guard(|| {
        *out(out_value, "out_value")? = sb::phi(x, lambda, k as usize)?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn pg_phi_inv(y: f64, lambda: f64, k: u64, out_value: *mut f64) -> PgStatus {
    guard(|| {
        *out(out_value, "out_value")? = sb::phi_inv(y, lambda, k as usize)?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn pg_data_pac_bound(
    kl: f64,
    emp_risk_i: f64,
    params_ptr: *const PgCatoniParams,
    out_bound: *mut PgBoundBreakdown,
) -> PgStatus {
    guard(|| write_bound(out_bound, sb::data_pac_bound(kl, emp_risk_i, &params(params_ptr)?)))
}

#[no_mangle]
pub extern "C" fn pg_fgd_bound(
    emp_risk_i: f64,
    grad_diff_weighted_sum: f64,
    d: u64,
    steps: u64,
    params_ptr: *const PgCatoniParams,
    out_bound: *mut PgBoundBreakdown,
) -> PgStatus {
    guard(|| {
        let p = params(params_ptr)?;
        write_bound(out_bound, sb::fgd_bound(emp_risk_i, grad_diff_weighted_sum, d as usize, steps as usize, &p))
    })
}

#[no_mangle]
pub extern "C" fn pg_fsgd_bound(
    emp_risk_i: f64,
    expected_grad_diff_weighted_sum: f64,
    d: u64,
    steps: u64,
    params_ptr: *const PgCatoniParams,
    out_bound: *mut PgBoundBreakdown,
) -> PgStatus {
    guard(|| {
        let p = params(params_ptr)?;
        let b = sb::fsgd_bound(emp_risk_i, expected_grad_diff_weighted_sum, d as usize, steps as usize, &p);
        write_bound(out_bound, b)
    })
}

#[no_mangle]
pub extern "C" fn pg_gld_bound(
    emp_risk_i: f64,
    weighted_gradnorm_sum: f64,
    params_ptr: *const PgCatoniParams,
    out_bound: *mut PgBoundBreakdown,
) -> PgStatus {
    guard(|| write_bound(out_bound, sb::gld_bound(emp_risk_i, weighted_gradnorm_sum, &params(params_ptr)?)))
}

#[no_mangle]
pub extern "C" fn pg_sgld_bound(
    emp_risk_i: f64,
    weighted_gradnorm_sum: f64,
    batch_size: u64,
    params_ptr: *const PgCatoniParams,
    out_bound: *mut PgBoundBreakdown,
) -> PgStatus {
    guard(|| {
        let p = params(params_ptr)?;
        write_bound(out_bound, sb::sgld_bound(emp_risk_i, weighted_gradnorm_sum, batch_size as usize, &p))
    })
}

#[no_mangle]
pub extern "C" fn pg_sgld_bound_subgaussian(
    emp_risk_i: f64,
    l0: f64,
    schedule_sum: f64,
    steps: u64,
    d: u64,
    params_ptr: *const PgCatoniParams,
    out_bound: *mut PgBoundBreakdown,
) -> PgStatus {
    guard(|| {
        let p = params(params_ptr)?;
        let b = sb::sgld_bound_subgaussian(emp_risk_i, l0, schedule_sum, steps as usize, d as usize, &p);
        write_bound(out_bound, b)
    })
}

#[no_mangle]
pub extern "C" fn pg_cld_bound(
    emp_risk_i: f64,
    inputs: *const PgCldInputs,
    params_ptr: *const PgCatoniParams,
    out_bound: *mut PgBoundBreakdown,
) -> PgStatus {
    guard(|| {
        let c = input(inputs, "inputs")?;
        let inputs = CldInputs {
            beta: c.beta,
            lambda_reg: c.lambda_reg,
            loss_bound: c.loss_bound,
            lipschitz: c.lipschitz,
            horizon: c.horizon,
        };
        write_bound(out_bound, sb::cld_bound(emp_risk_i, &inputs, &params(params_ptr)?))
    })
}

#[no_mangle]
pub extern "C" fn pg_rgd_bound(
    emp_risk_i: f64,
    grad_diff_sum: f64,
    eps: f64,
    p: f64,
    d: u64,
    steps: u64,
    params_ptr: *const PgCatoniParams,
    out_bound: *mut PgBoundBreakdown,
) -> PgStatus {
    guard(|| {
        let params = params(params_ptr)?;
        let b = sb::rgd_bound(emp_risk_i, grad_diff_sum, eps, p, d as usize, steps as usize, &params);
        write_bound(out_bound, b)
    })
}

/// Create a sampler for the `d`-dimensional lattice prior with parameter `p`.
#[no_mangle]
pub extern "C" fn pg_lattice_new(p: f64, d: u64, seed: u64, out_handle: *mut *mut PgLattice) -> PgStatus {
    guard(|| {
        let slot = out(out_handle, "out_handle")?;
        let spec = GridNoiseSpec::new(p, d as usize)?;
        let lattice = PgLattice { sampler: LatticeSampler::new(spec), rng: rng::stream(seed, rng::streams::NOISE) };
        *slot = Box::into_raw(Box::new(lattice));
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn pg_lattice_dim(handle: *const PgLattice) -> u64 {
    // SAFETY: null or a live handle from `pg_lattice_new`.
    unsafe { handle.as_ref() }.map_or(0, |h| h.sampler.spec().d as u64)
}

#[no_mangle]
pub extern "C" fn pg_lattice_log_normalizer(handle: *const PgLattice, out_value: *mut f64) -> PgStatus {
    guard(|| {
        let h = input(handle, "handle")?;
        *out(out_value, "out_value")? = h.sampler.spec().log_normalizer();
        Ok(())
    })
}

/// Draw one lattice vector into `out_values`, which must hold exactly `len = d` entries.
///
/// # Safety
/// `out_values` must be valid for `len` writes of `int64_t`.
#[no_mangle]
pub unsafe extern "C" fn pg_lattice_sample(handle: *mut PgLattice, out_values: *mut i64, len: u64) -> PgStatus {
    guard(|| {
        let h = out(handle, "handle")?;
        if out_values.is_null() {
            return Err(Failure::Null("out_values"));
        }
        let d = h.sampler.spec().d;
        if len as usize != d {
            return Err(Error::Contract(format!("buffer holds {len} values but the lattice has d = {d}")).into());
        }
        // SAFETY: checked non-null; the caller guarantees `len` slots.
        let buf = unsafe { std::slice::from_raw_parts_mut(out_values, d) };
        buf.copy_from_slice(&h.sampler.sample(&mut h.rng).0);
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`pg_lattice_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pg_lattice_free(handle: *mut PgLattice) {
    if !handle.is_null() {
        // SAFETY: produced by `Box::into_raw` in `pg_lattice_new`.
        drop(unsafe { Box::from_raw(handle) });
    }
}

fn new_trajectory(slot: &mut *mut PgTrajectory, summary: LogSummary) {
    *slot = Box::into_raw(Box::new(PgTrajectory { summary }));
}

/// Load a `summary.json` written by `pacgrad train`.
#[no_mangle]
pub extern "C" fn pg_trajectory_load(path: *const c_char, out_handle: *mut *mut PgTrajectory) -> PgStatus {
    guard(|| {
        let slot = out(out_handle, "out_handle")?;
        let text = std::fs::read_to_string(Path::new(string(path, "path")?)).map_err(Error::from)?;
        new_trajectory(slot, serde_json::from_str(&text).map_err(Error::from)?);
        Ok(())
    })
}

/// Parse a trajectory summary from an in-memory JSON document.
#[no_mangle]
pub extern "C" fn pg_trajectory_from_json(json: *const c_char, out_handle: *mut *mut PgTrajectory) -> PgStatus {
    guard(|| {
        let slot = out(out_handle, "out_handle")?;
        new_trajectory(slot, serde_json::from_str(string(json, "json")?).map_err(Error::from)?);
        Ok(())
    })
}

/// Evaluate `theorem` on the trajectory. `extras` may be null.
#[no_mangle]
pub extern "C" fn pg_trajectory_certify(
    handle: *const PgTrajectory,
    theorem: PgTheorem,
    params_ptr: *const PgCatoniParams,
    extras: *const PgExtras,
    out_bound: *mut PgBoundBreakdown,
) -> PgStatus {
    guard(|| {
        let h = input(handle, "handle")?;
        // SAFETY: null or valid for reads per the contract.
        let extras = unsafe { extras.as_ref() }.map(|e| Extras::from(*e)).unwrap_or_default();
        let report = certifier::certify(&h.summary, theorem.into(), &params(params_ptr)?, &extras)?;
        *out(out_bound, "out_bound")? = report.breakdown.into();
        Ok(())
    })
}

/// Like [`pg_trajectory_certify`] but returns the full report as JSON.
/// Release the string with [`pg_string_free`].
#[no_mangle]
pub extern "C" fn pg_trajectory_report_json(
    handle: *const PgTrajectory,
    theorem: PgTheorem,
    params_ptr: *const PgCatoniParams,
    extras: *const PgExtras,
    out_json: *mut *mut c_char,
) -> PgStatus {
    guard(|| {
        let h = input(handle, "handle")?;
        let slot = out(out_json, "out_json")?;
        // SAFETY: null or valid for reads per the contract.
        let extras = unsafe { extras.as_ref() }.map(|e| Extras::from(*e)).unwrap_or_default();
        let report = certifier::certify(&h.summary, theorem.into(), &params(params_ptr)?, &extras)?;
        *slot = CString::new(report.to_json()?).map_err(|e| Error::Contract(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Number of recorded optimisation steps, or 0 for a null handle.
#[no_mangle]
pub extern "C" fn pg_trajectory_steps(handle: *const PgTrajectory) -> u64 {
    // SAFETY: null or a live handle.
    unsafe { handle.as_ref() }.map_or(0, |h| h.summary.meta.steps as u64)
}

/// # Safety
/// `handle` must be null or come from a `pg_trajectory_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pg_trajectory_free(handle: *mut PgTrajectory) {
    if !handle.is_null() {
        // SAFETY: produced by `Box::into_raw` in `new_trajectory`.
        drop(unsafe { Box::from_raw(handle) });
    }
}
