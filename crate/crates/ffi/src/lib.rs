//! C interface to `brrl-core`.
//!
//! Every function returns a [`BrrlStatus`]. On failure a description is kept
//! per thread and can be read with [`brrl_last_error_message`]. Objects are
//! handed out as opaque pointers and must be released with the matching
//! `*_free` function. Output arrays are caller-allocated.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use brrl_core::bandit::{run_brps_cmab, BanditRunConfig, LinearBanditEnv, RegretTrace, Variant};
use brrl_core::environments::{build_frozen_lake, random_mdp, FrozenLakeLayout};
use brrl_core::mdp::{evaluate_policy_exact, value_iteration, DeterministicPolicy, TabularMdp};
use brrl_core::risk::{derived_sample_size, empirical_cvar, modified_cvar, normal_cvar, RiskConfig};
use brrl_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrrlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidModel = 3,
    NonConvergence = 4,
    NumericalFailure = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

/// Sampling rule of a bandit run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrrlVariant {
    Plain = 0,
    Truncated = 1,
    /// `param` is δ.
    Inflated = 2,
    /// `param` is the sampling scale.
    FixedScale = 3,
}

/// Tabular MDP.
pub struct BrrlMdp(TabularMdp);

/// Result of a bandit run.
pub struct BrrlBanditTrace(RegretTrace);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> BrrlStatus {
    match err {
        Error::InvalidArgument(_) | Error::Config { .. } | Error::Snapshot { .. } => BrrlStatus::InvalidArgument,
        Error::InvalidModel(_) | Error::InfeasibleTransition { .. } => BrrlStatus::InvalidModel,
        Error::NonConvergence { .. } => BrrlStatus::NonConvergence,
        Error::NotPositiveDefinite => BrrlStatus::NumericalFailure,
        Error::Replication { source, .. } => status_of(source),
        Error::Io(_) => BrrlStatus::Internal,
    }
}

/// Runs `body`, translating errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), (BrrlStatus, String)>>(body: F) -> BrrlStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => BrrlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            BrrlStatus::Internal
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (BrrlStatus, String)>;
}

impl<T> IntoFfi<T> for brrl_core::Result<T> {
    fn ffi(self) -> Result<T, (BrrlStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (BrrlStatus, String) {
    (BrrlStatus::NullPointer, format!("null pointer: {what}"))
}

/// Borrows `len` elements at `p`; a null pointer is accepted only when `len`
/// is zero.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (BrrlStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (BrrlStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), (BrrlStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn brrl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

// ---------------------------------------------------------------------------
// Risk measures.

/// Empirical left-tail CVaR of `len` samples at level `alpha`.
///
/// # Safety
/// `samples` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn brrl_empirical_cvar(
    samples: *const f64,
    len: usize,
    alpha: f64,
    out: *mut f64,
) -> BrrlStatus {
    guard(|| {
        let xs = slice(samples, len, "samples")?;
        write(out, empirical_cvar(xs, alpha).ffi()?, "out")
    })
}

/// Order-statistic CVaR estimator; `len` must equal the derived sample size
/// of `alpha`.
///
/// # Safety
/// `samples` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn brrl_modified_cvar(
    samples: *const f64,
    len: usize,
    alpha: f64,
    out: *mut f64,
) -> BrrlStatus {
    guard(|| {
        let xs = slice(samples, len, "samples")?;
        let risk = RiskConfig::new(alpha).ffi()?;
        write(out, modified_cvar(xs, &risk).ffi()?, "out")
    })
}

/// Left-tail CVaR of a normal distribution.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn brrl_normal_cvar(mu: f64, sigma: f64, alpha: f64, out: *mut f64) -> BrrlStatus {
    guard(|| {
        if !(0.0..1.0).contains(&alpha) || !(sigma >= 0.0) {
            return Err((BrrlStatus::InvalidArgument, "need 0 ≤ alpha < 1 and sigma ≥ 0".into()));
        }
        write(out, normal_cvar(mu, sigma, alpha), "out")
    })
}

/// Number of posterior samples used at level `alpha`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn brrl_sample_size(alpha: f64, out: *mut usize) -> BrrlStatus {
    guard(|| {
        RiskConfig::new(alpha).ffi()?;
        write(out, derived_sample_size(alpha), "out")
    })
}

// ---------------------------------------------------------------------------
// MDPs.

fn into_handle<T>(value: T, out: *mut *mut T) -> Result<(), (BrrlStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    unsafe { out.write(Box::into_raw(Box::new(value))) };
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, (BrrlStatus, String)> {
    p.as_ref().ok_or_else(|| null("handle"))
}

/// MDP from row-major `P[s][a][s']` and `r[s][a]`.
///
/// # Safety
/// `transitions` must hold `S·A·S` doubles, `rewards` `S·A`; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn brrl_mdp_new(
    num_states: usize,
    num_actions: usize,
    transitions: *const f64,
    rewards: *const f64,
    discount: f64,
    out: *mut *mut BrrlMdp,
) -> BrrlStatus {
    guard(|| {
        let p = slice(transitions, num_states * num_actions * num_states, "transitions")?;
        let r = slice(rewards, num_states * num_actions, "rewards")?;
        let mdp = TabularMdp::new(num_states, num_actions, p.to_vec(), r.to_vec(), discount).ffi()?;
        into_handle(BrrlMdp(mdp), out)
    })
}

/// Standard 4×4 Frozen Lake with hole-exit probability `hole_exit`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn brrl_mdp_frozen_lake(hole_exit: f64, out: *mut *mut BrrlMdp) -> BrrlStatus {
    guard(|| {
        let mdp = build_frozen_lake(&FrozenLakeLayout::standard(hole_exit)).ffi()?;
        into_handle(BrrlMdp(mdp), out)
    })
}

/// Random MDP with Dirichlet(1, …, 1) rows and uniform rewards.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn brrl_mdp_random(
    num_states: usize,
    num_actions: usize,
    discount: f64,
    seed: u64,
    out: *mut *mut BrrlMdp,
) -> BrrlStatus {
    guard(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(num_states, num_actions, discount, &mut rng).ffi()?;
        into_handle(BrrlMdp(mdp), out)
    })
}

/// Releases an MDP. Null is ignored.
///
/// # Safety
/// `mdp` must come from a constructor above and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn brrl_mdp_free(mdp: *mut BrrlMdp) {
    if !mdp.is_null() {
        drop(Box::from_raw(mdp));
    }
}

/// # Safety
/// `mdp` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn brrl_mdp_shape(
    mdp: *const BrrlMdp,
    num_states: *mut usize,
    num_actions: *mut usize,
) -> BrrlStatus {
    guard(|| {
        let m = &handle(mdp)?.0;
        write(num_states, m.num_states(), "num_states")?;
        write(num_actions, m.num_actions(), "num_actions")
    })
}

/// Optimal values and a greedy policy by value iteration.
///
/// # Safety
/// `mdp` must be a live handle; `values` and `policy` must hold `S` entries.
#[no_mangle]
pub unsafe extern "C" fn brrl_mdp_value_iteration(
    mdp: *const BrrlMdp,
    tol: f64,
    max_iterations: usize,
    values: *mut f64,
    policy: *mut usize,
) -> BrrlStatus {
    guard(|| {
        let m = &handle(mdp)?.0;
        let ns = m.num_states();
        let v_out = slice_mut(values, ns, "values")?;
        let p_out = slice_mut(policy, ns, "policy")?;
        let (v, pi) = value_iteration(m, tol, max_iterations).ffi()?;
        v_out.copy_from_slice(&v);
        p_out.copy_from_slice(&pi);
        Ok(())
    })
}

/// Exact value of a deterministic policy.
///
/// # Safety
/// `mdp` must be a live handle; `policy` and `values` must hold `S` entries.
#[no_mangle]
pub unsafe extern "C" fn brrl_mdp_evaluate_policy(
    mdp: *const BrrlMdp,
    policy: *const usize,
    values: *mut f64,
) -> BrrlStatus {
    guard(|| {
        let m = &handle(mdp)?.0;
        let ns = m.num_states();
        let pi = DeterministicPolicy(slice(policy, ns, "policy")?.to_vec());
        let v_out = slice_mut(values, ns, "values")?;
        let v = evaluate_policy_exact(m, &pi).ffi()?;
        v_out.copy_from_slice(&v);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Bandits.

/// Runs BRPS-CMAB at level `alpha` (0 gives Thompson sampling) on the
/// sinusoidal `num_arms`-arm bandit for `horizon` rounds, scoring BR-Regret
/// at `br_alpha`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn brrl_bandit_run(
    num_arms: usize,
    alpha: f64,
    br_alpha: f64,
    variant: BrrlVariant,
    param: f64,
    horizon: usize,
    seed: u64,
    out: *mut *mut BrrlBanditTrace,
) -> BrrlStatus {
    guard(|| {
        if num_arms == 0 {
            return Err((BrrlStatus::InvalidArgument, "need at least one arm".into()));
        }
        let variant = match variant {
            BrrlVariant::Plain => Variant::Plain,
            BrrlVariant::Truncated => Variant::Truncated,
            BrrlVariant::Inflated => Variant::Inflated { delta: param },
            BrrlVariant::FixedScale => Variant::FixedScale { scale: param },
        };
        let mut cfg = BanditRunConfig::brps(alpha, variant, horizon, seed).ffi()?;
        cfg.br_alpha = br_alpha;
        let trace = run_brps_cmab(&LinearBanditEnv::sinusoidal(num_arms), &cfg).ffi()?;
        into_handle(BrrlBanditTrace(trace), out)
    })
}

/// Number of rounds in a trace.
///
/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn brrl_bandit_trace_len(trace: *const BrrlBanditTrace, out: *mut usize) -> BrrlStatus {
    guard(|| write(out, handle(trace)?.0.len(), "out"))
}

/// Copies the cumulative conventional regret into `out[0..len]`.
///
/// # Safety
/// `trace` must be a live handle; `out` must hold `len` doubles, where `len`
/// equals the trace length.
#[no_mangle]
pub unsafe extern "C" fn brrl_bandit_trace_regret(
    trace: *const BrrlBanditTrace,
    out: *mut f64,
    len: usize,
) -> BrrlStatus {
    guard(|| copy_series(&handle(trace)?.0.cumulative_regret, out, len))
}

/// Copies the cumulative BR-Regret into `out[0..len]`.
///
/// # Safety
/// As for [`brrl_bandit_trace_regret`].
#[no_mangle]
pub unsafe extern "C" fn brrl_bandit_trace_br_regret(
    trace: *const BrrlBanditTrace,
    out: *mut f64,
    len: usize,
) -> BrrlStatus {
    guard(|| copy_series(&handle(trace)?.0.cumulative_br_regret, out, len))
}

/// Copies the chosen arms into `out[0..len]`.
///
/// # Safety
/// As for [`brrl_bandit_trace_regret`], with `out` holding `len` integers.
#[no_mangle]
pub unsafe extern "C" fn brrl_bandit_trace_arms(
    trace: *const BrrlBanditTrace,
    out: *mut usize,
    len: usize,
) -> BrrlStatus {
    guard(|| copy_series(&handle(trace)?.0.arms, out, len))
}

unsafe fn copy_series<T: Copy>(src: &[T], out: *mut T, len: usize) -> Result<(), (BrrlStatus, String)> {
    if len != src.len() {
        return Err((
            BrrlStatus::InvalidArgument,
            format!("buffer holds {len} entries, trace has {}", src.len()),
        ));
    }
    slice_mut(out, len, "out")?.copy_from_slice(src);
    Ok(())
}

/// Releases a trace. Null is ignored.
///
/// # Safety
/// `trace` must come from [`brrl_bandit_run`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn brrl_bandit_trace_free(trace: *mut BrrlBanditTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}
