//! Groupwise SSLS: cross-fitted Robinson residuals regressed on group
//! indicators, with the diagonal plug-in variance.
//!
//! For group `g`,
//!
//! ```text
//! tau_g   = sum_g (Y - m)(A - e) / sum_g (A - e)^2
//! eps_i   = (Y_i - m_i) - (A_i - e_i) tau_g(i)
//! sigma_g = [N^-1 sum_g eps^2 (A - e)^2] / [N^-1 sum_g (A - e)^2]^2
//! ```
//!
//! and `se_g = sqrt(sigma_g / n_effective)`.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::clustering::{fit_kmeans, gate_grouping, FittedClusterer, KMeansSpec};
use crate::crossfit::{make_folds, CrossFitPlan, Folds};
use crate::data::{validate_dataset, Dataset, Grouping, Matrix};
use crate::error::{ArmScope, Error, Result};
use crate::learners::{
    fit_propensity, fit_regression, KnownPropensity, PropensityKind, PropensityLearnerSpec,
    RegressionLearnerSpec, RowFn,
};
use crate::rng::StreamRng;
use crate::transformed_ls::TransformedSample;

const DEGENERATE_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SslsConfig {
    pub regression_spec: RegressionLearnerSpec,
    pub propensity_spec: PropensityLearnerSpec,
    pub plan: CrossFitPlan,
    pub alpha: f64,
}

impl SslsConfig {
    pub fn new(regression_spec: RegressionLearnerSpec, propensity_spec: PropensityLearnerSpec) -> Self {
        SslsConfig {
            regression_spec,
            propensity_spec,
            plan: CrossFitPlan::default(),
            alpha: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0,1), got {}", self.alpha)));
        }
        self.plan.validate()?;
        self.propensity_spec.validate()
    }
}

/// Out-of-fold nuisance predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    pub m_hat: Vec<f64>,
    pub e_hat: Vec<f64>,
    pub fold_of: Vec<usize>,
    pub warnings: Vec<String>,
}

impl NuisanceFit {
    /// Mean squared out-of-fold error of the outcome regression.
    pub fn outcome_mse(&self, y: &[f64]) -> f64 {
        y.iter()
            .zip(&self.m_hat)
            .map(|(y, m)| (y - m) * (y - m))
            .sum::<f64>()
            / y.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupEffects {
    pub tau_hat: Vec<f64>,
    /// Plug-in asymptotic variance before division by `n_effective`.
    pub sigma_gg_hat: Vec<f64>,
    pub n_g: Vec<usize>,
    pub n_effective: usize,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    pub denominators: Vec<f64>,
}

impl GroupEffects {
    pub fn n_groups(&self) -> usize {
        self.tau_hat.len()
    }

    pub fn se(&self) -> Vec<f64> {
        let n = self.n_effective as f64;
        self.sigma_gg_hat.iter().map(|s| (s / n).sqrt()).collect()
    }
}

fn known_values(
    known: &KnownPropensity,
    d: &Dataset,
    grouping: Option<&Grouping>,
    spec: &PropensityLearnerSpec,
) -> Result<Vec<f64>> {
    let raw: Vec<f64> = match known {
        KnownPropensity::Column => d
            .known_propensity
            .clone()
            .ok_or_else(|| Error::Config("known propensity column not present in dataset".into()))?,
        KnownPropensity::Constant(p) => vec![*p; d.len()],
        KnownPropensity::PerGroup(ps) => {
            let g = grouping.ok_or_else(|| {
                Error::Config("per-group known propensities need a grouping".into())
            })?;
            if ps.len() != g.n_groups() {
                return Err(Error::LengthMismatch {
                    what: "per-group propensities",
                    got: ps.len(),
                    expected: g.n_groups(),
                });
            }
            (0..d.len()).map(|i| ps[g.index_of(i)]).collect()
        }
    };
    for (row, p) in raw.iter().enumerate() {
        if !(*p > 0.0 && *p < 1.0) {
            return Err(Error::PropensityOutOfRange { row });
        }
    }
    Ok(raw.into_iter().map(|p| spec.clip_value(p)).collect())
}

/// Fits both nuisances on each fold's complement and predicts on the fold.
pub fn crossfit_nuisance(
    d: &Dataset,
    grouping: Option<&Grouping>,
    cfg: &SslsConfig,
    folds: &Folds,
) -> Result<NuisanceFit> {
    d.validate()?;
    if folds.len() != d.len() {
        return Err(Error::LengthMismatch {
            what: "fold assignment",
            got: folds.len(),
            expected: d.len(),
        });
    }
    let n = d.len();
    let mut m_hat = vec![0.0; n];
    let mut e_hat = vec![0.0; n];
    let mut warnings = Vec::new();

    let known = match &cfg.propensity_spec.kind {
        PropensityKind::Known(k) => Some(known_values(k, d, grouping, &cfg.propensity_spec)?),
        _ => None,
    };

    for k in 0..folds.n_folds() {
        let train = folds.complement(k);
        let test = folds.members(k);
        let x_train = d.x.select_rows(&train);
        let y_train: Vec<f64> = train.iter().map(|&i| d.y[i]).collect();
        let m = fit_regression(&cfg.regression_spec, &x_train, &y_train)?;
        for &i in &test {
            m_hat[i] = m.predict(d.x.row(i));
        }
        if known.is_none() {
            let a_train: Vec<u8> = train.iter().map(|&i| d.a[i]).collect();
            let e = fit_propensity(&cfg.propensity_spec, &x_train, &a_train).map_err(|err| {
                match err {
                    Error::OneArmOnly(ArmScope::Sample) => Error::OneArmOnly(ArmScope::Fold(k)),
                    other => other,
                }
            })?;
            if let Some(w) = e.warning() {
                warnings.push(format!("fold {k}: {w}"));
            }
            for &i in &test {
                e_hat[i] = e.predict(d.x.row(i));
            }
        }
    }
    if let Some(kv) = known {
        e_hat = kv;
    }
    for (row, m) in m_hat.iter().enumerate() {
        if !m.is_finite() {
            return Err(Error::NonFinite { row, col: 0 });
        }
    }
    Ok(NuisanceFit {
        m_hat,
        e_hat,
        fold_of: folds.fold_of().to_vec(),
        warnings,
    })
}

fn check_nuisance(d: &Dataset, nf: &NuisanceFit) -> Result<()> {
    for (what, len) in [("m_hat", nf.m_hat.len()), ("e_hat", nf.e_hat.len())] {
        if len != d.len() {
            return Err(Error::LengthMismatch {
                what,
                got: len,
                expected: d.len(),
            });
        }
    }
    Ok(())
}

/// Closed-form groupwise estimate from out-of-fold nuisances.
pub fn estimate_ssls(d: &Dataset, g: &Grouping, nf: &NuisanceFit) -> Result<GroupEffects> {
    validate_dataset(d, g)?;
    check_nuisance(d, nf)?;
    let n = d.len();
    let groups = g.n_groups();
    if n < 2 * groups {
        return Err(Error::TooFewSamples(format!(
            "{n} observations for {groups} groups; need at least {}",
            2 * groups
        )));
    }
    let nf_ = n as f64;
    let mut num = vec![0.0; groups];
    let mut den = vec![0.0; groups];
    for i in 0..n {
        let k = g.index_of(i);
        let r = f64::from(d.a[i]) - nf.e_hat[i];
        num[k] += (d.y[i] - nf.m_hat[i]) * r;
        den[k] += r * r;
    }
    if let Some(k) = den.iter().position(|&v| !(v > DEGENERATE_DENOMINATOR)) {
        return Err(Error::DegenerateGroup(k + 1));
    }
    let tau_hat: Vec<f64> = num.iter().zip(&den).map(|(a, b)| a / b).collect();
    let mut meat = vec![0.0; groups];
    let residuals: Vec<f64> = (0..n)
        .map(|i| {
            let k = g.index_of(i);
            let r = f64::from(d.a[i]) - nf.e_hat[i];
            let eps = (d.y[i] - nf.m_hat[i]) - r * tau_hat[k];
            meat[k] += eps * eps * r * r;
            eps
        })
        .collect();
    let sigma_gg_hat = meat
        .iter()
        .zip(&den)
        .map(|(m, dn)| (m / nf_) / ((dn / nf_) * (dn / nf_)))
        .collect();
    Ok(GroupEffects {
        tau_hat,
        sigma_gg_hat,
        n_g: g.sizes(),
        n_effective: n,
        residuals,
        denominators: den,
    })
}

/// Transformed sample `Z = Y - m`, `V = (A - e) I(X)` on which the generic
/// least-squares engine reproduces [`estimate_ssls`].
pub fn robinson_sample(d: &Dataset, g: &Grouping, nf: &NuisanceFit) -> Result<TransformedSample> {
    validate_dataset(d, g)?;
    check_nuisance(d, nf)?;
    let n = d.len();
    let groups = g.n_groups();
    let z: Vec<f64> = (0..n).map(|i| d.y[i] - nf.m_hat[i]).collect();
    let mut v = Matrix::zeros(n, groups);
    for i in 0..n {
        v.set(i, g.index_of(i), f64::from(d.a[i]) - nf.e_hat[i]);
    }
    TransformedSample::new(z, v, nf.fold_of.clone())
}

/// One full cross-fitting pass with folds drawn from `rng`.
pub fn ssls_once(
    d: &Dataset,
    g: &Grouping,
    cfg: &SslsConfig,
    rng: &mut StreamRng,
) -> Result<(GroupEffects, NuisanceFit)> {
    cfg.validate()?;
    validate_dataset(d, g)?;
    let folds = make_folds(d.len(), &cfg.plan, Some(g), rng)?;
    let nf = crossfit_nuisance(d, Some(g), cfg, &folds)?;
    let ge = estimate_ssls(d, g, &nf)?;
    Ok((ge, nf))
}

/// Output of the repeated-split pipeline.
#[derive(Debug, Clone)]
pub struct SslsRun {
    /// Component-wise medians across repeats; residuals and denominators
    /// come from the first repeat.
    pub effects: GroupEffects,
    /// Nuisances of the first repeat.
    pub nuisance: NuisanceFit,
    pub per_repeat_tau: Vec<Vec<f64>>,
    pub per_repeat_sigma: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Component-wise median of `tau_hat` and `sigma_gg_hat` over runs sharing
/// the same grouping. The first run supplies everything else.
pub fn median_effects(runs: &[GroupEffects]) -> Result<GroupEffects> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Config("no runs to aggregate".into()))?;
    let groups = first.n_groups();
    let col = |f: &dyn Fn(&GroupEffects) -> f64| {
        let mut v: Vec<f64> = runs.iter().map(f).collect();
        median(&mut v)
    };
    let mut out = first.clone();
    for k in 0..groups {
        out.tau_hat[k] = col(&|r: &GroupEffects| r.tau_hat[k]);
        out.sigma_gg_hat[k] = col(&|r: &GroupEffects| r.sigma_gg_hat[k]);
    }
    Ok(out)
}

/// Runs the pipeline `cfg.plan.repeats` times; repeat `r` draws its folds
/// from the stream `(seed, r)` so the result does not depend on scheduling.
pub fn repeated_ssls(d: &Dataset, g: &Grouping, cfg: &SslsConfig) -> Result<SslsRun> {
    cfg.validate()?;
    let base = StreamRng::new(cfg.plan.seed);
    let runs: Vec<(GroupEffects, NuisanceFit)> = (0..cfg.plan.repeats)
        .into_par_iter()
        .map(|r| ssls_once(d, g, cfg, &mut base.derive(r as u64)))
        .collect::<Result<_>>()?;
    let effects: Vec<GroupEffects> = runs.iter().map(|(e, _)| e.clone()).collect();
    let mut warnings: Vec<String> = Vec::new();
    for (r, (_, nf)) in runs.iter().enumerate() {
        for w in &nf.warnings {
            warnings.push(format!("repeat {r}, {w}"));
        }
    }
    Ok(SslsRun {
        effects: median_effects(&effects)?,
        nuisance: runs.into_iter().next().map(|(_, nf)| nf).unwrap(),
        per_repeat_tau: effects.iter().map(|e| e.tau_hat.clone()).collect(),
        per_repeat_sigma: effects.iter().map(|e| e.sigma_gg_hat.clone()).collect(),
        warnings,
    })
}

/// Grouping function used by D-SSLS.
#[derive(Clone)]
pub enum ClusterSpec {
    /// A known rule returning labels in `1..=groups`; skips clustering.
    FixedRule {
        rule: Arc<RowFn<usize>>,
        groups: usize,
    },
    KMeans(KMeansSpec),
}

impl std::fmt::Debug for ClusterSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClusterSpec::FixedRule { groups, .. } => write!(f, "FixedRule({groups} groups)"),
            ClusterSpec::KMeans(s) => write!(f, "KMeans({s:?})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DsslsResult {
    pub run: SslsRun,
    /// Grouping of the estimation sample.
    pub grouping: Grouping,
    /// Rows (of the input) used to fit the grouping, ascending.
    pub clustering_rows: Vec<usize>,
    /// Rows used for nuisance fitting and estimation, ascending.
    pub estimation_rows: Vec<usize>,
    pub clusterer: Option<FittedClusterer>,
}

/// Splits rows into a clustering third and an estimation two-thirds.
pub fn three_way_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut StreamRng::new(seed));
    let cut = n / 3;
    let mut cl = perm[..cut].to_vec();
    let mut est = perm[cut..].to_vec();
    cl.sort_unstable();
    est.sort_unstable();
    (cl, est)
}

/// D-SSLS: learn the grouping on a random third, then run SSLS on the rest.
/// The clustering third is not used again.
pub fn estimate_dssls(d: &Dataset, cluster_spec: &ClusterSpec, cfg: &SslsConfig) -> Result<DsslsResult> {
    cfg.validate()?;
    d.validate()?;
    if d.len() < 3 * cfg.plan.n_folds {
        return Err(Error::TooFewSamples(format!(
            "D-SSLS needs at least {} rows, got {}",
            3 * cfg.plan.n_folds,
            d.len()
        )));
    }
    let (clustering_rows, estimation_rows) = three_way_split(d.len(), cfg.plan.seed);
    let est = d.subset(&estimation_rows);
    let (grouping, clusterer) = match cluster_spec {
        ClusterSpec::FixedRule { rule, groups } => {
            (Grouping::from_rule(&est.x, *groups, |r| rule(r))?, None)
        }
        ClusterSpec::KMeans(spec) => {
            let fc = fit_kmeans(&d.x.select_rows(&clustering_rows), spec)?;
            let g = gate_grouping(&fc, &est, spec)?;
            (g, Some(fc))
        }
    };
    let run = repeated_ssls(&est, &grouping, cfg)?;
    Ok(DsslsResult {
        run,
        grouping,
        clustering_rows,
        estimation_rows,
        clusterer,
    })
}
