//! Monte-Carlo studies. Every replication draws from its own stream derived
//! from `(seed, cell, rep)`, and results are aggregated in replication order,
//! so output does not depend on the number of worker threads.

use std::time::Instant;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::KMeansSpec;
use crate::crossfit::CrossFitPlan;
use crate::diagnostics::{
    flag_regions, flagged_fraction, residual_series, ResidualSeries, DEFAULT_BANDWIDTH,
    DEFAULT_GRID, DEFAULT_MULTIPLIER,
};
use crate::error::{Error, Result};
use crate::estimator::{
    crossfit_nuisance, estimate_dssls, estimate_ssls, repeated_ssls, ClusterSpec, GroupEffects,
    SslsConfig,
};
use crate::inference::{infer, maxt_critical};
use crate::learners::{
    KnownPropensity, LearnerConfig, OracleFn, PropensityKind, PropensityLearnerSpec,
    RegressionLearnerSpec, DEFAULT_CLIP,
};
use crate::rng::StreamRng;
use crate::simulation::dgp::*;

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let y = v - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

fn mean(v: &[f64]) -> f64 {
    let mut k = KahanSum::default();
    v.iter().for_each(|&x| k.add(x));
    k.value() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    let mut k = KahanSum::default();
    v.iter().for_each(|&x| k.add((x - m) * (x - m)));
    (k.value() / (v.len() as f64 - 1.0)).sqrt()
}

/// Nuisance learners for one study arm: the same method for both the
/// outcome regression and the propensity score. Linear outcome learners are
/// paired with logistic propensities.
pub fn learner_pair(
    learner: &LearnerConfig,
    m_oracle: OracleFn,
    e_oracle: OracleFn,
) -> Result<(RegressionLearnerSpec, PropensityLearnerSpec)> {
    let reg = learner.regression_spec(Some(m_oracle))?;
    let prop = match learner {
        LearnerConfig::Ols | LearnerConfig::Ridge { .. } => PropensityLearnerSpec::logistic_default(),
        other => other.propensity_spec(DEFAULT_CLIP, None, Some(e_oracle))?,
    };
    Ok((reg, prop))
}

fn check_reps(reps: usize) -> Result<()> {
    if reps < 2 {
        return Err(Error::Config(format!("a study needs at least 2 reps, got {reps}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Table1Config {
    pub n: usize,
    pub reps: usize,
    pub sigma_a: Vec<f64>,
    pub sigma_y: Vec<f64>,
    pub learners: Vec<LearnerConfig>,
    pub tau: Vec<f64>,
    pub alpha: f64,
    pub plan: CrossFitPlan,
    pub seed: u64,
}

impl Default for Table1Config {
    fn default() -> Self {
        Table1Config {
            n: 1000,
            reps: 500,
            sigma_a: vec![0.0],
            sigma_y: vec![0.0],
            learners: vec![LearnerConfig::Oracle],
            tau: vec![1.0, 2.0, 3.0, 4.0],
            alpha: 0.05,
            plan: CrossFitPlan::default(),
            seed: 1,
        }
    }
}

/// One cell of the Table 1 layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyCell {
    pub learner: String,
    pub sigma_a: f64,
    pub sigma_y: f64,
    pub reps: usize,
    /// Replications where estimation failed; excluded from the summaries.
    pub failures: usize,
    pub bias: Vec<f64>,
    pub ese: Vec<f64>,
    pub ase: Vec<f64>,
    pub ese_ase: Vec<f64>,
    /// Fraction of replications where all simultaneous intervals cover.
    pub coverage: f64,
    #[serde(skip)]
    pub runtime_secs: f64,
}

struct RepOutcome {
    tau_hat: Vec<f64>,
    se: Vec<f64>,
    covered: bool,
}

fn summarize(
    learner: String,
    sigma_a: f64,
    sigma_y: f64,
    tau: &[f64],
    reps: usize,
    outcomes: Vec<Option<RepOutcome>>,
    runtime_secs: f64,
) -> StudyCell {
    let ok: Vec<RepOutcome> = outcomes.into_iter().flatten().collect();
    let failures = reps - ok.len();
    let g = tau.len();
    let mut bias = vec![f64::NAN; g];
    let mut ese = vec![f64::NAN; g];
    let mut ase = vec![f64::NAN; g];
    let mut ratio = vec![f64::NAN; g];
    let mut coverage = f64::NAN;
    if ok.len() >= 2 {
        for k in 0..g {
            let est: Vec<f64> = ok.iter().map(|o| o.tau_hat[k]).collect();
            let ses: Vec<f64> = ok.iter().map(|o| o.se[k]).collect();
            bias[k] = mean(&est) - tau[k];
            ese[k] = sd(&est);
            ase[k] = mean(&ses);
            ratio[k] = ese[k] / ase[k];
        }
        coverage = ok.iter().filter(|o| o.covered).count() as f64 / ok.len() as f64;
    }
    StudyCell {
        learner,
        sigma_a,
        sigma_y,
        reps,
        failures,
        bias,
        ese,
        ase,
        ese_ase: ratio,
        coverage,
        runtime_secs,
    }
}

fn rep_outcome(ge: &GroupEffects, tau: &[f64], alpha: f64) -> Result<RepOutcome> {
    let rep = infer(ge, tau, alpha)?;
    let covered = rep
        .groups
        .iter()
        .all(|t| t.ci_simul_lo <= t.tau0 && t.tau0 <= t.ci_simul_hi);
    Ok(RepOutcome {
        tau_hat: ge.tau_hat.clone(),
        se: ge.se(),
        covered,
    })
}

/// Bias, ESE, ASE and simultaneous coverage for every
/// (learner, sigma_A, sigma_Y) cell. All learners in a cell see the same
/// datasets.
pub fn run_table1_study(cfg: &Table1Config) -> Result<Vec<StudyCell>> {
    check_reps(cfg.reps)?;
    cfg.plan.validate()?;
    let base = StreamRng::new(cfg.seed);
    let mut cells = Vec::new();
    let mut grid = Vec::new();
    for &sa in &cfg.sigma_a {
        for &sy in &cfg.sigma_y {
            grid.push((sa, sy));
        }
    }
    // validate learners once before the expensive part
    for l in &cfg.learners {
        learner_pair(l, dgp1_outcome_oracle(cfg.tau.clone()), dgp1_propensity_oracle())?;
    }
    for (ci, &(sa, sy)) in grid.iter().enumerate() {
        let start = Instant::now();
        let per_rep: Vec<Vec<Option<RepOutcome>>> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                let mut rng = base.derive_path(&[ci as u64, rep as u64]);
                let data_seed = rng.next_u64();
                let fold_seed = rng.next_u64();
                let draw = draw_dgp1_with(
                    &Dgp1Config {
                        n: cfg.n,
                        sigma_a: sa,
                        sigma_y: sy,
                        tau: cfg.tau.clone(),
                        seed: data_seed,
                    },
                    &mut StreamRng::new(data_seed),
                );
                cfg.learners
                    .iter()
                    .map(|l| {
                        let draw = draw.as_ref().ok()?;
                        let (reg, prop) = learner_pair(
                            l,
                            dgp1_outcome_oracle(cfg.tau.clone()),
                            dgp1_propensity_oracle(),
                        )
                        .ok()?;
                        let mut sc = SslsConfig::new(reg, prop);
                        sc.plan = CrossFitPlan {
                            seed: fold_seed,
                            ..cfg.plan.clone()
                        };
                        sc.alpha = cfg.alpha;
                        let run = repeated_ssls(&draw.data, &draw.grouping, &sc).ok()?;
                        rep_outcome(&run.effects, &cfg.tau, cfg.alpha).ok()
                    })
                    .collect()
            })
            .collect();
        let elapsed = start.elapsed().as_secs_f64();
        let mut per_learner: Vec<Vec<Option<RepOutcome>>> =
            (0..cfg.learners.len()).map(|_| Vec::with_capacity(cfg.reps)).collect();
        for rep in per_rep {
            for (li, o) in rep.into_iter().enumerate() {
                per_learner[li].push(o);
            }
        }
        for (li, outcomes) in per_learner.into_iter().enumerate() {
            cells.push(summarize(
                cfg.learners[li].name().to_string(),
                sa,
                sy,
                &cfg.tau,
                cfg.reps,
                outcomes,
                elapsed / cfg.learners.len() as f64,
            ));
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerConfig {
    pub n: usize,
    pub tau0: Vec<f64>,
    pub distances: Vec<f64>,
    pub reps: usize,
    pub alpha: f64,
    pub learner: LearnerConfig,
    pub plan: CrossFitPlan,
    pub seed: u64,
}

/// `k / 25` for `k = 0, 5, ..., 50`.
pub fn default_distances() -> Vec<f64> {
    (0..=10).map(|k| (5 * k) as f64 / 25.0).collect()
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            n: 1000,
            tau0: vec![1.0, 2.0, 3.0, 4.0],
            distances: default_distances(),
            reps: 200,
            alpha: 0.05,
            learner: LearnerConfig::Oracle,
            plan: CrossFitPlan::default(),
            seed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerPoint {
    pub distance: f64,
    pub reps: usize,
    pub failures: usize,
    pub rejections: usize,
    pub power: f64,
}

/// Direction drawn uniformly on the unit sphere.
fn unit_direction(g: usize, rng: &mut StreamRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..g).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Rejection rate of the maxT test of `tau = tau0` at each distance of the
/// true effect vector from `tau0`.
pub fn run_power_study(cfg: &PowerConfig) -> Result<Vec<PowerPoint>> {
    check_reps(cfg.reps)?;
    if cfg.tau0.len() != 4 {
        return Err(Error::Config("power study uses the 4-group design".into()));
    }
    learner_pair(&cfg.learner, dgp1_outcome_oracle(cfg.tau0.clone()), dgp1_propensity_oracle())?;
    let q = maxt_critical(cfg.alpha, cfg.tau0.len())?;
    let base = StreamRng::new(cfg.seed);
    cfg.distances
        .iter()
        .enumerate()
        .map(|(di, &dist)| {
            let results: Vec<Option<bool>> = (0..cfg.reps)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = base.derive_path(&[di as u64, rep as u64]);
                    let u = unit_direction(cfg.tau0.len(), &mut rng);
                    let tau_a: Vec<f64> =
                        cfg.tau0.iter().zip(&u).map(|(t, d)| t + dist * d).collect();
                    let data_seed = rng.next_u64();
                    let fold_seed = rng.next_u64();
                    let draw = draw_dgp1_with(
                        &Dgp1Config {
                            n: cfg.n,
                            tau: tau_a.clone(),
                            seed: data_seed,
                            ..Dgp1Config::default()
                        },
                        &mut StreamRng::new(data_seed),
                    )
                    .ok()?;
                    let (reg, prop) = learner_pair(
                        &cfg.learner,
                        dgp1_outcome_oracle(tau_a),
                        dgp1_propensity_oracle(),
                    )
                    .ok()?;
                    let mut sc = SslsConfig::new(reg, prop);
                    sc.plan = CrossFitPlan {
                        seed: fold_seed,
                        ..cfg.plan.clone()
                    };
                    let run = repeated_ssls(&draw.data, &draw.grouping, &sc).ok()?;
                    let rep = infer(&run.effects, &cfg.tau0, cfg.alpha).ok()?;
                    Some(rep.groups.iter().any(|t| t.t_stat.abs() > q))
                })
                .collect();
            let ok: Vec<bool> = results.iter().flatten().copied().collect();
            let rejections = ok.iter().filter(|&&r| r).count();
            Ok(PowerPoint {
                distance: dist,
                reps: cfg.reps,
                failures: cfg.reps - ok.len(),
                rejections,
                power: rejections as f64 / ok.len().max(1) as f64,
            })
        })
        .collect()
}

/// Largest total decrease of a sequence, i.e. the worst violation of
/// monotone non-decrease measured against the running maximum.
pub fn isotonic_violation(values: &[f64]) -> f64 {
    let mut running = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &v in values {
        running = running.max(v);
        worst = worst.max(running - v);
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Theorem5Config {
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub tau: Vec<f64>,
    pub group_propensity: Vec<f64>,
    pub constant_propensity: bool,
    pub delta_scale: f64,
    pub seed: u64,
}

impl Default for Theorem5Config {
    fn default() -> Self {
        Theorem5Config {
            n_grid: vec![1000, 5000],
            reps: 500,
            tau: vec![1.0, 2.0, 3.0, 4.0],
            group_propensity: vec![0.35, 0.5, 0.6, 0.7],
            constant_propensity: true,
            delta_scale: 1.0,
            seed: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasRow {
    pub n: usize,
    pub group: usize,
    pub reps: usize,
    pub bias: f64,
    /// Monte-Carlo standard error of the bias.
    pub mc_se: f64,
}

impl BiasRow {
    pub fn z(&self) -> f64 {
        self.bias / self.mc_se
    }
}

/// Bias of each group's estimate when the effect varies within groups with
/// mean zero. Uses the true outcome regression and the true propensity
/// (passed as known per-group values when it is constant within groups).
pub fn run_theorem5_study(cfg: &Theorem5Config) -> Result<Vec<BiasRow>> {
    check_reps(cfg.reps)?;
    let base = StreamRng::new(cfg.seed);
    let mut rows = Vec::new();
    for (ni, &n) in cfg.n_grid.iter().enumerate() {
        let hc = HeteroConfig {
            n,
            tau: cfg.tau.clone(),
            group_propensity: cfg.group_propensity.clone(),
            constant_propensity: cfg.constant_propensity,
            delta_scale: cfg.delta_scale,
        };
        let est: Vec<Option<Vec<f64>>> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                let mut rng = base.derive_path(&[ni as u64, rep as u64]);
                let fold_seed = rng.next_u64();
                let draw = draw_hetero(&hc, &mut rng).ok()?;
                let reg = RegressionLearnerSpec::Oracle(hetero_outcome_oracle(&hc));
                let prop = if cfg.constant_propensity {
                    PropensityLearnerSpec::new(PropensityKind::Known(KnownPropensity::PerGroup(
                        cfg.group_propensity.clone(),
                    )))
                } else {
                    PropensityLearnerSpec::new(PropensityKind::Oracle(OracleFn::new(
                        hetero_varying_propensity,
                    )))
                };
                let mut sc = SslsConfig::new(reg, prop);
                sc.plan.seed = fold_seed;
                let folds = crate::crossfit::make_crossfit_plan(n, &sc.plan, None).ok()?;
                let nf = crossfit_nuisance(&draw.data, Some(&draw.grouping), &sc, &folds).ok()?;
                Some(estimate_ssls(&draw.data, &draw.grouping, &nf).ok()?.tau_hat)
            })
            .collect();
        let ok: Vec<Vec<f64>> = est.into_iter().flatten().collect();
        for g in 0..cfg.tau.len() {
            let v: Vec<f64> = ok.iter().map(|t| t[g]).collect();
            rows.push(BiasRow {
                n,
                group: g + 1,
                reps: v.len(),
                bias: mean(&v) - cfg.tau[g],
                mc_se: sd(&v) / (v.len() as f64).sqrt(),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticConfig {
    pub n: usize,
    pub reps: usize,
    pub bandwidth: f64,
    pub grid: usize,
    pub multiplier: f64,
    pub learner: LearnerConfig,
    pub plan: CrossFitPlan,
    pub seed: u64,
}

impl Default for DiagnosticConfig {
    fn default() -> Self {
        DiagnosticConfig {
            n: 10_000,
            reps: 50,
            bandwidth: DEFAULT_BANDWIDTH,
            grid: DEFAULT_GRID,
            multiplier: DEFAULT_MULTIPLIER,
            learner: LearnerConfig::gbm(),
            plan: CrossFitPlan::default(),
            seed: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRep {
    pub rep: usize,
    /// Pooled (both arms) fraction of grid points flagged under the true grouping.
    pub correct_fraction: f64,
    pub misspecified_fraction: f64,
    /// Whether a flagged region under the misspecified grouping meets (0.25, 0.75).
    pub misspecified_overlap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticSummary {
    pub reps: Vec<DiagnosticRep>,
    pub failures: usize,
    /// Share of replications flagging less than 5% of the grid under the true grouping.
    pub correct_clean_rate: f64,
    /// Share of replications whose misspecified flags meet (0.25, 0.75).
    pub misspecified_detect_rate: f64,
}

/// Residual series under the true and the misspecified grouping for one
/// replication; both share the same nuisance fits.
pub fn diagnostic_replication(
    cfg: &DiagnosticConfig,
    rng: &mut StreamRng,
) -> Result<(Vec<ResidualSeries>, Vec<ResidualSeries>)> {
    let fold_seed = rng.next_u64();
    let draw = draw_diag_both(cfg.n, rng)?;
    let never = || OracleFn::new(|_| f64::NAN);
    let (reg, prop) = learner_pair(&cfg.learner, never(), never())?;
    let mut sc = SslsConfig::new(reg, prop);
    sc.plan = CrossFitPlan {
        seed: fold_seed,
        stratified: false,
        ..cfg.plan.clone()
    };
    let folds = crate::crossfit::make_crossfit_plan(cfg.n, &sc.plan, None)?;
    let nf = crossfit_nuisance(&draw.data, None, &sc, &folds)?;
    let ge_m = estimate_ssls(&draw.data, &draw.grouping_m, &nf)?;
    let ge_w = estimate_ssls(&draw.data, &draw.grouping_w, &nf)?;
    let s_m = residual_series(&ge_m, &draw.data, &draw.grouping_m, 0, cfg.bandwidth, cfg.grid)?;
    let s_w = residual_series(&ge_w, &draw.data, &draw.grouping_w, 0, cfg.bandwidth, cfg.grid)?;
    Ok((s_m, s_w))
}

pub fn run_diagnostic_study(cfg: &DiagnosticConfig) -> Result<DiagnosticSummary> {
    if cfg.reps < 1 {
        return Err(Error::Config("diagnostic study needs at least 1 rep".into()));
    }
    let base = StreamRng::new(cfg.seed);
    let results: Vec<Option<DiagnosticRep>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let (s_m, s_w) = diagnostic_replication(cfg, &mut base.derive(rep as u64)).ok()?;
            let overlap = s_w.iter().any(|s| {
                flag_regions(s, cfg.multiplier)
                    .iter()
                    .any(|r| r.lo < 0.75 && r.hi > 0.25)
            });
            Some(DiagnosticRep {
                rep,
                correct_fraction: flagged_fraction(&s_m, cfg.multiplier),
                misspecified_fraction: flagged_fraction(&s_w, cfg.multiplier),
                misspecified_overlap: overlap,
            })
        })
        .collect();
    let ok: Vec<DiagnosticRep> = results.into_iter().flatten().collect();
    let failures = cfg.reps - ok.len();
    let denom = ok.len().max(1) as f64;
    Ok(DiagnosticSummary {
        correct_clean_rate: ok.iter().filter(|r| r.correct_fraction < 0.05).count() as f64 / denom,
        misspecified_detect_rate: ok.iter().filter(|r| r.misspecified_overlap).count() as f64
            / denom,
        reps: ok,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DsslsStudyConfig {
    pub n: usize,
    pub reps: usize,
    pub separation: f64,
    pub tau: Vec<f64>,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for DsslsStudyConfig {
    fn default() -> Self {
        DsslsStudyConfig {
            n: 1500,
            reps: 300,
            separation: 10.0,
            tau: vec![1.0, 2.0],
            alpha: 0.05,
            seed: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DsslsStudyResult {
    pub reps: usize,
    pub failures: usize,
    /// Share of replications where every simultaneous interval covers the
    /// effect of the true group it was matched to.
    pub coverage: f64,
    /// Mean share of estimation rows whose learned group matches the truth.
    pub mean_agreement: f64,
    /// Mean ratio of D-SSLS to full-sample SSLS standard errors.
    pub se_ratio: f64,
}

/// Coverage of D-SSLS intervals on a two-blob design with oracle nuisances
/// and k-means grouping.
pub fn run_dssls_study(cfg: &DsslsStudyConfig) -> Result<DsslsStudyResult> {
    check_reps(cfg.reps)?;
    let base = StreamRng::new(cfg.seed);
    let bc = BlobConfig {
        n: cfg.n,
        separation: cfg.separation,
        tau: cfg.tau.clone(),
    };
    let results: Vec<Option<(bool, f64, f64)>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = base.derive(rep as u64);
            let seed = rng.next_u64();
            let draw = draw_blobs(&bc, &mut rng).ok()?;
            let mut sc = SslsConfig::new(
                RegressionLearnerSpec::Oracle(blob_outcome_oracle(cfg.tau.clone())),
                PropensityLearnerSpec::new(PropensityKind::Oracle(blob_propensity_oracle())),
            );
            sc.plan.seed = seed;
            sc.alpha = cfg.alpha;
            let spec = KMeansSpec {
                groups: 2,
                seed,
                ..KMeansSpec::default()
            };
            let res = estimate_dssls(&draw.data, &ClusterSpec::KMeans(spec), &sc).ok()?;
            // match learned labels to true groups by majority
            let truth: Vec<usize> = res
                .estimation_rows
                .iter()
                .map(|&i| draw.grouping.labels()[i])
                .collect();
            let mut counts = [[0usize; 2]; 2];
            for (l, t) in res.grouping.labels().iter().zip(&truth) {
                counts[l - 1][t - 1] += 1;
            }
            let map: Vec<usize> = (0..2)
                .map(|l| if counts[l][0] >= counts[l][1] { 0 } else { 1 })
                .collect();
            let agree = (0..2).map(|l| counts[l][map[l]]).sum::<usize>() as f64 / truth.len() as f64;
            let target: Vec<f64> = map.iter().map(|&t| cfg.tau[t]).collect();
            let covered = map[0] != map[1] && {
                let r = infer(&res.run.effects, &target, cfg.alpha).ok()?;
                r.groups
                    .iter()
                    .all(|t| t.ci_simul_lo <= t.tau0 && t.tau0 <= t.ci_simul_hi)
            };
            let full = repeated_ssls(&draw.data, &draw.grouping, &sc).ok()?;
            let se_d = res.run.effects.se();
            let se_f = full.effects.se();
            let ratio = (0..2).map(|l| se_d[l] / se_f[map[l]]).sum::<f64>() / 2.0;
            Some((covered, agree, ratio))
        })
        .collect();
    let ok: Vec<(bool, f64, f64)> = results.into_iter().flatten().collect();
    let denom = ok.len().max(1) as f64;
    Ok(DsslsStudyResult {
        reps: cfg.reps,
        failures: cfg.reps - ok.len(),
        coverage: ok.iter().filter(|r| r.0).count() as f64 / denom,
        mean_agreement: ok.iter().map(|r| r.1).sum::<f64>() / denom,
        se_ratio: ok.iter().map(|r| r.2).sum::<f64>() / denom,
    })
}
