//! C interface to the `ssls` estimator.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Every fallible call returns an [`SslsStatus`];
//! on failure [`ssls_last_error_message`] describes the error. Output
//! pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use ssls::crossfit::CrossFitPlan;
use ssls::data::{Dataset, Grouping, GroupingSource, Matrix};
use ssls::estimator::{repeated_ssls, SslsConfig, SslsRun};
use ssls::inference::{infer, maxt_critical, power_min_n};
use ssls::learners::{
    KnownPropensity, LearnerConfig, PropensityKind, PropensityLearnerSpec, DEFAULT_CLIP,
};
use ssls::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SslsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidInput = 3,
    GateFailure = 4,
    NumericalFailure = 5,
    Panic = 6,
}

/// Nuisance learner choice.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SslsLearner {
    Ols = 0,
    Cart = 1,
    Gbm = 2,
    Logistic = 3,
    /// Propensity only: use the dataset's known propensity values.
    Known = 4,
}

/// Estimation options. Obtain defaults from [`ssls_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SslsOptions {
    pub learner_y: SslsLearner,
    pub learner_e: SslsLearner,
    pub folds: usize,
    pub repeats: usize,
    pub stratified: bool,
    pub seed: u64,
    pub clip: f64,
}

/// Per-group test of `tau_g = tau0_g`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SslsGroupTest {
    pub tau_hat: f64,
    pub se: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub ci_simul_lo: f64,
    pub ci_simul_hi: f64,
    pub reject_pointwise: bool,
    pub reject_simul: bool,
}

/// Opaque dataset with its grouping.
pub struct SslsDataset {
    data: Dataset,
    grouping: Grouping,
}

/// Opaque estimation result.
pub struct SslsEffects {
    run: SslsRun,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> SslsStatus {
    match e {
        e if e.is_gate_failure() => SslsStatus::GateFailure,
        Error::DegenerateGroup(_) | Error::ClusteringDegenerate(_) => SslsStatus::GateFailure,
        Error::SingularDesign | Error::SingularGram | Error::NotSpd => SslsStatus::NumericalFailure,
        Error::Config(_) | Error::Domain(_) => SslsStatus::InvalidArgument,
        _ => SslsStatus::InvalidInput,
    }
}

/// Runs `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), (SslsStatus, String)>) -> SslsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SslsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SslsStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (SslsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null_err(what: &str) -> (SslsStatus, String) {
    (SslsStatus::NullPointer, format!("{what} is null"))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn ssls_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn ssls_options_default() -> SslsOptions {
    SslsOptions {
        learner_y: SslsLearner::Gbm,
        learner_e: SslsLearner::Gbm,
        folds: 2,
        repeats: 1,
        stratified: true,
        seed: 0,
        clip: DEFAULT_CLIP,
    }
}

/// Copies the inputs into a new dataset handle.
///
/// `x` is row-major `n * p`; `groups` holds labels in `1..=n_groups`;
/// `propensity` may be null.
///
/// # Safety
/// Every non-null pointer must be valid for the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn ssls_dataset_new(
    y: *const f64,
    a: *const u8,
    x: *const f64,
    n: usize,
    p: usize,
    groups: *const usize,
    n_groups: usize,
    propensity: *const f64,
    out: *mut *mut SslsDataset,
) -> SslsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        if y.is_null() || a.is_null() || groups.is_null() || (x.is_null() && n * p > 0) {
            return Err(null_err("input array"));
        }
        let y = slice::from_raw_parts(y, n).to_vec();
        let a = slice::from_raw_parts(a, n).to_vec();
        let xs = if n * p == 0 {
            Vec::new()
        } else {
            slice::from_raw_parts(x, n * p).to_vec()
        };
        let labels = slice::from_raw_parts(groups, n).to_vec();
        let known = (!propensity.is_null()).then(|| slice::from_raw_parts(propensity, n).to_vec());
        let data = Dataset {
            y,
            a,
            x: Matrix::new(n, p, xs).map_err(lib_err)?,
            known_propensity: known,
        };
        data.validate().map_err(lib_err)?;
        let grouping = Grouping::new(labels, n_groups, GroupingSource::FixedRule).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SslsDataset { data, grouping }));
        Ok(())
    })
}

/// # Safety
/// `d` must come from [`ssls_dataset_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ssls_dataset_free(d: *mut SslsDataset) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

fn learner_config(l: SslsLearner) -> LearnerConfig {
    match l {
        SslsLearner::Ols => LearnerConfig::Ols,
        SslsLearner::Cart => LearnerConfig::cart(),
        SslsLearner::Gbm => LearnerConfig::gbm(),
        SslsLearner::Logistic => LearnerConfig::logistic(),
        SslsLearner::Known => LearnerConfig::Known,
    }
}

fn build_config(o: &SslsOptions) -> ssls::Result<SslsConfig> {
    let reg = learner_config(o.learner_y).regression_spec(None)?;
    let prop = match o.learner_e {
        SslsLearner::Known => PropensityLearnerSpec {
            kind: PropensityKind::Known(KnownPropensity::Column),
            clip: o.clip,
        },
        other => learner_config(other).propensity_spec(o.clip, None, None)?,
    };
    let mut cfg = SslsConfig::new(reg, prop);
    cfg.plan = CrossFitPlan {
        n_folds: o.folds,
        stratified: o.stratified,
        repeats: o.repeats,
        seed: o.seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Cross-fits the nuisances and estimates every group's effect.
///
/// # Safety
/// `d` must be a live dataset handle; `opts` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn ssls_estimate(
    d: *const SslsDataset,
    opts: *const SslsOptions,
    out: *mut *mut SslsEffects,
) -> SslsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let d = d.as_ref().ok_or_else(|| null_err("dataset"))?;
        let opts = opts.as_ref().copied().unwrap_or_else(|| ssls_options_default());
        let cfg = build_config(&opts).map_err(lib_err)?;
        let run = repeated_ssls(&d.data, &d.grouping, &cfg).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SslsEffects { run }));
        Ok(())
    })
}

/// # Safety
/// `e` must come from [`ssls_estimate`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ssls_effects_free(e: *mut SslsEffects) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Number of groups, or 0 for a null handle.
///
/// # Safety
/// `e` must be null or a live effects handle.
#[no_mangle]
pub unsafe extern "C" fn ssls_effects_n_groups(e: *const SslsEffects) -> usize {
    e.as_ref().map_or(0, |e| e.run.effects.n_groups())
}

/// Estimate, standard error and size of group `g` (0-based).
///
/// # Safety
/// `e` must be a live effects handle; output pointers may be null to skip.
#[no_mangle]
pub unsafe extern "C" fn ssls_effects_get(
    e: *const SslsEffects,
    g: usize,
    tau_hat: *mut f64,
    se: *mut f64,
    n_g: *mut usize,
) -> SslsStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null_err("effects"))?;
        let ge = &e.run.effects;
        if g >= ge.n_groups() {
            return Err((
                SslsStatus::InvalidArgument,
                format!("group index {g} out of range 0..{}", ge.n_groups()),
            ));
        }
        if let Some(t) = tau_hat.as_mut() {
            *t = ge.tau_hat[g];
        }
        if let Some(s) = se.as_mut() {
            *s = ge.se()[g];
        }
        if let Some(n) = n_g.as_mut() {
            *n = ge.n_g[g];
        }
        Ok(())
    })
}

/// Pointwise and simultaneous tests of `tau = tau0` at level `alpha`.
/// `tau0` and `out` hold `len` elements, which must equal the group count.
///
/// # Safety
/// Pointers must be valid for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn ssls_effects_inference(
    e: *const SslsEffects,
    tau0: *const f64,
    alpha: f64,
    out: *mut SslsGroupTest,
    len: usize,
) -> SslsStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null_err("effects"))?;
        if tau0.is_null() || out.is_null() {
            return Err(null_err("array"));
        }
        let ge = &e.run.effects;
        if len != ge.n_groups() {
            return Err((
                SslsStatus::InvalidArgument,
                format!("len {len} does not match {} groups", ge.n_groups()),
            ));
        }
        let tau0 = slice::from_raw_parts(tau0, len);
        let rep = infer(ge, tau0, alpha).map_err(lib_err)?;
        let out = slice::from_raw_parts_mut(out, len);
        for (o, t) in out.iter_mut().zip(&rep.groups) {
            *o = SslsGroupTest {
                tau_hat: t.tau_hat,
                se: t.se,
                t_stat: t.t_stat,
                p_value: t.p_value,
                ci_lo: t.ci_lo,
                ci_hi: t.ci_hi,
                ci_simul_lo: t.ci_simul_lo,
                ci_simul_hi: t.ci_simul_hi,
                reject_pointwise: t.reject_pointwise,
                reject_simul: t.reject_simul,
            };
        }
        Ok(())
    })
}

/// Serializes the estimates to a JSON string, released with
/// [`ssls_string_free`].
///
/// # Safety
/// `e` must be a live effects handle.
#[no_mangle]
pub unsafe extern "C" fn ssls_effects_to_json(e: *const SslsEffects, out: *mut *mut c_char) -> SslsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let e = e.as_ref().ok_or_else(|| null_err("effects"))?;
        let s = serde_json::to_string(&e.run.effects).map_err(|e| lib_err(e.into()))?;
        *out = CString::new(s).expect("JSON has no nul bytes").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ssls_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Simultaneous (maxT) critical value for `g` tests at level `alpha`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ssls_maxt_critical(alpha: f64, g: usize, out: *mut f64) -> SslsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null_err("out"))?;
        *out = maxt_critical(alpha, g).map_err(lib_err)?;
        Ok(())
    })
}

/// Minimum group size for standardized effect `z_tilde`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ssls_power_min_n(
    z_tilde: f64,
    alpha: f64,
    power: f64,
    out: *mut u64,
) -> SslsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null_err("out"))?;
        *out = power_min_n(z_tilde, alpha, power).map_err(lib_err)?;
        Ok(())
    })
}
