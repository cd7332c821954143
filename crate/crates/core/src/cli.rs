//! Command-line front end.
//!
//! Settings resolve as command-line flag, then `--config` JSON file, then
//! built-in default. Exit codes: 0 success, 1 internal error, 2 input or
//! configuration error, 3 statistical gate failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::clustering::{default_min_group_size, KMeansSpec};
use crate::crossfit::CrossFitPlan;
use crate::data::{Dataset, Grouping};
use crate::diagnostics::{
    flagged_fraction, residual_series, DEFAULT_BANDWIDTH, DEFAULT_GRID, DEFAULT_MULTIPLIER,
};
use crate::error::{ArmScope, Error, Result};
use crate::estimator::{estimate_dssls, repeated_ssls, ClusterSpec, SslsConfig, SslsRun};
use crate::inference::{all_pairwise, glh_test, infer, power_min_n};
use crate::io::{read_contrast, read_dataset, ColumnSpec, LoadedData, PropensitySource};
use crate::learners::{KnownPropensity, LearnerConfig, PropensityKind, PropensityLearnerSpec, DEFAULT_CLIP};
use crate::report::{
    arm_flags, group_rows, write_groups_csv, write_json, write_residuals_raw,
    write_residuals_smooth, write_series_raw, Cell, EstimateReport, Table,
};
use crate::rng::StreamRng;
use crate::simulation::studies::*;

#[derive(Debug, Parser)]
#[command(name = "ssls", version, about = "Groupwise treatment effects by sample-splitting least squares")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON file with default settings; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for output artifacts (created if missing).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for repeats and simulation replications.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate groupwise effects for a given grouping column.
    Estimate(EstimateArgs),
    /// Learn a grouping by k-means on a held-out third, then estimate.
    Discover(DiscoverArgs),
    /// Run a Monte-Carlo study.
    Simulate(SimulateArgs),
    /// Export residual diagnostics for a given grouping.
    Diagnose(DiagnoseArgs),
    /// Minimum group size for a target standardized effect.
    Power(PowerArgs),
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long)]
    pub treatment: Option<String>,
    #[arg(long)]
    pub group: Option<String>,
    /// Comma-separated covariate columns (default: all unbound columns).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Known propensity: a column name or a constant in (0, 1).
    #[arg(long)]
    pub propensity: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct FitArgs {
    /// Outcome learner, `kind[:key=value,...]` (ols, ridge, cart, gbm).
    #[arg(long)]
    pub learner_y: Option<String>,
    /// Propensity learner, `kind[:key=value,...]` (logistic, cart, gbm).
    #[arg(long)]
    pub learner_e: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub stratified: Option<bool>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Propensity clipping level.
    #[arg(long)]
    pub clip: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct DiagArgs {
    /// Covariate the residuals are plotted against (default: first covariate).
    #[arg(long)]
    pub diag_covariate: Option<String>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub multiplier: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub diag: DiagArgs,
    /// CSV with one hypothesis per row: G coefficients then m0.
    #[arg(long)]
    pub contrast: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Number of groups to learn.
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub min_group_size: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub diag: DiagArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Table1,
    Power,
    Theorem5,
    Diagnostic,
    Dssls,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub study: Study,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Nuisance learner; repeat for several (table1 only).
    #[arg(long = "learners", alias = "learner-y")]
    pub learners: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub sigma_a: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub sigma_y: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub distances: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    /// Use the covariate-dependent propensity (theorem5 only).
    #[arg(long)]
    pub negative_control: bool,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    /// Standardized effect size.
    #[arg(long)]
    pub ztilde: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub power: Option<f64>,
}

/// A number or a string in the config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum NumOrStr {
    Num(f64),
    Str(String),
}

/// A learner given either as `kind[:opts]` or as a full object.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum LearnerField {
    Name(String),
    Full(LearnerConfig),
}

impl LearnerField {
    fn resolve(self) -> Result<LearnerConfig> {
        match self {
            LearnerField::Name(s) => LearnerConfig::parse(&s),
            LearnerField::Full(l) => Ok(l),
        }
    }
}

/// Settings accepted from `--config`. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data: Option<PathBuf>,
    outcome: Option<String>,
    treatment: Option<String>,
    group: Option<String>,
    covariates: Option<Vec<String>>,
    propensity: Option<NumOrStr>,
    learner_y: Option<LearnerField>,
    learner_e: Option<LearnerField>,
    folds: Option<usize>,
    repeats: Option<usize>,
    stratified: Option<bool>,
    alpha: Option<f64>,
    seed: Option<u64>,
    clip: Option<f64>,
    out_dir: Option<PathBuf>,
    workers: Option<usize>,
    diag_covariate: Option<String>,
    bandwidth: Option<f64>,
    grid: Option<usize>,
    multiplier: Option<f64>,
    contrast: Option<PathBuf>,
    groups: Option<usize>,
    min_group_size: Option<usize>,
    restarts: Option<usize>,
    max_iter: Option<usize>,
    reps: Option<usize>,
    n: Option<usize>,
    learners: Option<Vec<LearnerField>>,
    sigma_a: Option<Vec<f64>>,
    sigma_y: Option<Vec<f64>>,
    distances: Option<Vec<f64>>,
    n_grid: Option<Vec<usize>>,
    negative_control: Option<bool>,
    ztilde: Option<f64>,
    power: Option<f64>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config '{}': {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("invalid config '{}': {e}", p.display())))
        }
    }
}

fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T> {
    flag.or(file)
        .ok_or_else(|| Error::Config(format!("--{name} is required")))
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        e if e.is_gate_failure() => 3,
        Error::ClusteringDegenerate(_) | Error::DegenerateGroup(_) => 3,
        Error::SingularDesign | Error::SingularGram | Error::NotSpd => 1,
        Error::OneArmOnly(ArmScope::Fold(_)) => 1,
        _ => 2,
    }
}

/// Fully resolved settings for the data-driven subcommands; serialized into
/// the report so a run can be repeated from its output.
#[derive(Debug, Clone, Serialize)]
struct FitSettings {
    data: PathBuf,
    outcome: String,
    treatment: String,
    group: Option<String>,
    covariates: Vec<String>,
    propensity: Option<PropensitySource>,
    learner_y: LearnerConfig,
    learner_e: Option<LearnerConfig>,
    plan: CrossFitPlan,
    alpha: f64,
    clip: f64,
}

fn resolve_fit(data: DataArgs, fit: FitArgs, file: &FileConfig) -> Result<FitSettings> {
    let propensity = match (data.propensity, file.propensity.clone()) {
        (Some(s), _) => Some(PropensitySource::parse(&s)),
        (None, Some(NumOrStr::Num(v))) => Some(PropensitySource::Constant(v)),
        (None, Some(NumOrStr::Str(s))) => Some(PropensitySource::parse(&s)),
        (None, None) => None,
    };
    let learner = |flag: Option<String>, file: Option<LearnerField>| -> Result<Option<LearnerConfig>> {
        match (flag, file) {
            (Some(s), _) => LearnerConfig::parse(&s).map(Some),
            (None, Some(f)) => f.resolve().map(Some),
            (None, None) => Ok(None),
        }
    };
    let learner_y = learner(fit.learner_y, file.learner_y.clone())?.unwrap_or_else(LearnerConfig::gbm);
    let learner_e = if propensity.is_some() {
        None
    } else {
        Some(learner(fit.learner_e, file.learner_e.clone())?.unwrap_or_else(LearnerConfig::gbm))
    };
    let plan = CrossFitPlan {
        n_folds: fit.folds.or(file.folds).unwrap_or(2),
        stratified: fit.stratified.or(file.stratified).unwrap_or(true),
        repeats: fit.repeats.or(file.repeats).unwrap_or(1),
        seed: fit.seed.or(file.seed).unwrap_or(0),
    };
    plan.validate()?;
    let alpha = fit.alpha.or(file.alpha).unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must be in (0, 1), got {alpha}")));
    }
    Ok(FitSettings {
        data: required(data.data, file.data.clone(), "data")?,
        outcome: required(data.outcome, file.outcome.clone(), "outcome")?,
        treatment: required(data.treatment, file.treatment.clone(), "treatment")?,
        group: data.group.or(file.group.clone()),
        covariates: data.covariates.or(file.covariates.clone()).unwrap_or_default(),
        propensity,
        learner_y,
        learner_e,
        plan,
        alpha,
        clip: fit.clip.or(file.clip).unwrap_or(DEFAULT_CLIP),
    })
}

impl FitSettings {
    fn columns(&self, with_group: bool) -> ColumnSpec {
        ColumnSpec {
            outcome: self.outcome.clone(),
            treatment: self.treatment.clone(),
            group: if with_group { self.group.clone() } else { None },
            covariates: self.covariates.clone(),
            propensity: self.propensity.clone(),
        }
    }

    fn ssls_config(&self, loaded: &LoadedData) -> Result<SslsConfig> {
        let reg = self.learner_y.regression_spec(None)?;
        let prop = match (&self.learner_e, &loaded.constant_propensity) {
            (Some(l), _) => l.propensity_spec(self.clip, None, None)?,
            (None, Some(c)) => {
                if !(*c > 0.0 && *c < 1.0) {
                    return Err(Error::Config(format!("constant propensity must be in (0, 1), got {c}")));
                }
                PropensityLearnerSpec {
                    kind: PropensityKind::Known(KnownPropensity::Constant(*c)),
                    clip: self.clip,
                }
            }
            (None, None) => PropensityLearnerSpec {
                kind: PropensityKind::Known(KnownPropensity::Column),
                clip: self.clip,
            },
        };
        prop.validate()?;
        let mut cfg = SslsConfig::new(reg, prop);
        cfg.plan = self.plan.clone();
        cfg.alpha = self.alpha;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize)]
struct DiagSettings {
    covariate: String,
    bandwidth: f64,
    grid: usize,
    multiplier: f64,
}

fn resolve_diag(diag: DiagArgs, file: &FileConfig, loaded: &LoadedData) -> Result<(DiagSettings, usize)> {
    let covariate = diag
        .diag_covariate
        .or(file.diag_covariate.clone())
        .unwrap_or_else(|| loaded.covariate_names[0].clone());
    let index = loaded
        .covariate_names
        .iter()
        .position(|c| *c == covariate)
        .ok_or_else(|| Error::Config(format!("diagnostic covariate '{covariate}' is not a covariate")))?;
    Ok((
        DiagSettings {
            covariate,
            bandwidth: diag.bandwidth.or(file.bandwidth).unwrap_or(DEFAULT_BANDWIDTH),
            grid: diag.grid.or(file.grid).unwrap_or(DEFAULT_GRID),
            multiplier: diag.multiplier.or(file.multiplier).unwrap_or(DEFAULT_MULTIPLIER),
        },
        index,
    ))
}

fn out_dir(cli_dir: Option<PathBuf>, file: &FileConfig) -> Result<PathBuf> {
    let dir = cli_dir.or(file.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_grouped(fs_: &FitSettings) -> Result<(LoadedData, Grouping)> {
    if fs_.group.is_none() {
        return Err(Error::Config("--group is required".into()));
    }
    let loaded = read_dataset(&fs_.data, &fs_.columns(true))?;
    let g = loaded.grouping.clone().expect("group column requested");
    Ok((loaded, g))
}

/// Writes the residual CSVs for one run on `(d, g)`.
fn write_diagnostics(
    dir: &Path,
    ds: &DiagSettings,
    cov: usize,
    row_ids: &[usize],
    d: &Dataset,
    g: &Grouping,
    run: &SslsRun,
) -> Result<Vec<crate::diagnostics::ResidualSeries>> {
    write_residuals_raw(&dir.join("residuals_raw.csv"), row_ids, d, g, cov, &run.effects, &run.nuisance)?;
    let series = residual_series(&run.effects, d, g, cov, ds.bandwidth, ds.grid)?;
    write_residuals_smooth(&dir.join("residuals_smooth.csv"), &series, ds.multiplier)?;
    Ok(series)
}

fn cmd_estimate(args: EstimateArgs, file: &FileConfig, dir: &Path) -> Result<()> {
    let contrast_path = args.contrast.or(file.contrast.clone());
    let fs_ = resolve_fit(args.data, args.fit, file)?;
    let (loaded, g) = load_grouped(&fs_)?;
    let (ds, cov) = resolve_diag(args.diag, file, &loaded)?;
    let cfg = fs_.ssls_config(&loaded)?;
    let d = &loaded.dataset;
    let run = repeated_ssls(d, &g, &cfg)?;
    let tau0 = vec![0.0; g.n_groups()];
    let inf = infer(&run.effects, &tau0, fs_.alpha)?;
    let glh = match contrast_path {
        Some(p) => Some(glh_test(&run.effects, &read_contrast(&p, g.n_groups())?, fs_.alpha)?),
        None => None,
    };
    let rows = group_rows(&run.effects, &inf, g.labels(), &loaded.group_labels);
    let settings = serde_json::json!({ "fit": fs_, "diagnostic": ds, "group_values": loaded.group_labels });
    let report = EstimateReport::new(
        "estimate",
        settings,
        d.len(),
        &run,
        &inf,
        rows.clone(),
        all_pairwise(&run.effects, fs_.alpha)?,
        glh,
        &d.y,
    );
    let ids: Vec<usize> = (0..d.len()).collect();
    write_diagnostics(dir, &ds, cov, &ids, d, &g, &run)?;
    write_groups_csv(&dir.join("groups.csv"), &rows)?;
    write_json(&dir.join("report.json"), &report)
}

fn cmd_diagnose(args: DiagnoseArgs, file: &FileConfig, dir: &Path) -> Result<()> {
    let fs_ = resolve_fit(args.data, args.fit, file)?;
    let (loaded, g) = load_grouped(&fs_)?;
    let (ds, cov) = resolve_diag(args.diag, file, &loaded)?;
    let cfg = fs_.ssls_config(&loaded)?;
    let d = &loaded.dataset;
    let run = repeated_ssls(d, &g, &cfg)?;
    let ids: Vec<usize> = (0..d.len()).collect();
    let series = write_diagnostics(dir, &ds, cov, &ids, d, &g, &run)?;
    let report = serde_json::json!({
        "command": "diagnose",
        "settings": { "fit": fs_, "diagnostic": ds },
        "flagged_fraction": flagged_fraction(&series, ds.multiplier),
        "flags": arm_flags(&series, ds.multiplier),
    });
    write_json(&dir.join("report.json"), &report)
}

fn cmd_discover(args: DiscoverArgs, file: &FileConfig, dir: &Path) -> Result<()> {
    let fs_ = resolve_fit(args.data, args.fit, file)?;
    let loaded = read_dataset(&fs_.data, &fs_.columns(false))?;
    let spec = KMeansSpec {
        groups: args.groups.or(file.groups).unwrap_or(2),
        max_iter: args.max_iter.or(file.max_iter).unwrap_or(100),
        n_restarts: args.restarts.or(file.restarts).unwrap_or(10),
        min_group_size: args
            .min_group_size
            .or(file.min_group_size)
            .unwrap_or_else(default_min_group_size),
        seed: fs_.plan.seed,
    };
    spec.validate()?;
    let cfg = fs_.ssls_config(&loaded)?;
    let d = &loaded.dataset;
    let res = estimate_dssls(d, &ClusterSpec::KMeans(spec.clone()), &cfg)?;
    let fc = res.clusterer.as_ref().expect("k-means grouping");
    let est = d.subset(&res.estimation_rows);
    let groups = res.grouping.n_groups();
    let inf = infer(&res.run.effects, &vec![0.0; groups], fs_.alpha)?;
    let rows = group_rows(&res.run.effects, &inf, res.grouping.labels(), &[]);

    let mut t = Table::create(&dir.join("grouping.csv"), &["row", "group", "role"])?;
    let mut est_pos = 0;
    for i in 0..d.len() {
        let (label, role) = if res.estimation_rows.get(est_pos) == Some(&i) {
            est_pos += 1;
            (res.grouping.labels()[est_pos - 1], "estimation")
        } else {
            (fc.assign(d.x.row(i)), "clustering")
        };
        t.row(&[Cell::U(i), Cell::U(label), Cell::S(role)])?;
    }
    t.finish()?;

    let mut header = vec!["group"];
    header.extend(loaded.covariate_names.iter().map(String::as_str));
    let mut t = Table::create(&dir.join("centroids.csv"), &header)?;
    for (k, c) in fc.centroids_raw().iter().enumerate() {
        let mut cells = vec![Cell::U(k + 1)];
        cells.extend(c.iter().map(|v| Cell::F(*v)));
        t.row(&cells)?;
    }
    t.finish()?;

    let ds = DiagSettings {
        covariate: loaded.covariate_names[0].clone(),
        bandwidth: DEFAULT_BANDWIDTH,
        grid: DEFAULT_GRID,
        multiplier: DEFAULT_MULTIPLIER,
    };
    write_diagnostics(dir, &ds, 0, &res.estimation_rows, &est, &res.grouping, &res.run)?;
    write_groups_csv(&dir.join("groups.csv"), &rows)?;
    let settings = serde_json::json!({ "fit": fs_, "kmeans": spec });
    let mut report = serde_json::to_value(EstimateReport::new(
        "discover",
        settings,
        d.len(),
        &res.run,
        &inf,
        rows,
        all_pairwise(&res.run.effects, fs_.alpha)?,
        None,
        &est.y,
    ))?;
    report["clustering"] = serde_json::json!({
        "clustering_rows": res.clustering_rows.len(),
        "estimation_rows": res.estimation_rows.len(),
        "inertia": fc.inertia,
        "centroids": fc.centroids_raw(),
        "covariates": loaded.covariate_names,
    });
    write_json(&dir.join("report.json"), &report)
}

fn cmd_power(args: PowerArgs, file: &FileConfig) -> Result<()> {
    let z = required(args.ztilde, file.ztilde, "ztilde")?;
    let alpha = args.alpha.or(file.alpha).unwrap_or(0.05);
    let power = args.power.or(file.power).unwrap_or(0.8);
    let n = power_min_n(z, alpha, power)?;
    println!("{n}");
    eprintln!("minimum group size for z_tilde = {z}, alpha = {alpha}, power = {power}");
    Ok(())
}

fn simulate_learners(flags: Vec<String>, file: &FileConfig, default: LearnerConfig) -> Result<Vec<LearnerConfig>> {
    if !flags.is_empty() {
        return flags.iter().map(|s| LearnerConfig::parse(s)).collect();
    }
    match &file.learners {
        Some(v) => v.iter().cloned().map(LearnerField::resolve).collect(),
        None => Ok(vec![default]),
    }
}

fn single_learner(v: Vec<LearnerConfig>) -> Result<LearnerConfig> {
    match <[LearnerConfig; 1]>::try_from(v) {
        Ok([l]) => Ok(l),
        Err(_) => Err(Error::Config("this study takes a single learner".into())),
    }
}

fn plan_from(args: &SimulateArgs, file: &FileConfig, seed: u64) -> Result<CrossFitPlan> {
    let plan = CrossFitPlan {
        n_folds: args.folds.or(file.folds).unwrap_or(2),
        stratified: file.stratified.unwrap_or(false),
        repeats: args.repeats.or(file.repeats).unwrap_or(1),
        seed,
    };
    plan.validate()?;
    Ok(plan)
}

fn cmd_simulate(args: SimulateArgs, file: &FileConfig, dir: &Path) -> Result<()> {
    let start = Instant::now();
    let alpha = args.alpha.or(file.alpha).unwrap_or(0.05);
    let learners = simulate_learners(args.learners.clone(), file, LearnerConfig::Oracle)?;
    let study = args.study;
    let report = match study {
        Study::Table1 => {
            let d = Table1Config::default();
            let seed = args.seed.or(file.seed).unwrap_or(d.seed);
            let cfg = Table1Config {
                n: args.n.or(file.n).unwrap_or(d.n),
                reps: args.reps.or(file.reps).unwrap_or(d.reps),
                sigma_a: args.sigma_a.clone().or(file.sigma_a.clone()).unwrap_or(d.sigma_a),
                sigma_y: args.sigma_y.clone().or(file.sigma_y.clone()).unwrap_or(d.sigma_y),
                learners,
                tau: d.tau,
                alpha,
                plan: plan_from(&args, file, 0)?,
                seed,
            };
            let cells = run_table1_study(&cfg)?;
            write_table1(&dir.join("table1.csv"), &cells)?;
            serde_json::json!({ "study": study, "settings": cfg, "cells": cells })
        }
        Study::Power => {
            let d = PowerConfig::default();
            let cfg = PowerConfig {
                n: args.n.or(file.n).unwrap_or(d.n),
                reps: args.reps.or(file.reps).unwrap_or(d.reps),
                distances: args.distances.clone().or(file.distances.clone()).unwrap_or(d.distances),
                learner: single_learner(learners)?,
                alpha,
                plan: plan_from(&args, file, 0)?,
                seed: args.seed.or(file.seed).unwrap_or(d.seed),
                tau0: d.tau0,
            };
            let pts = run_power_study(&cfg)?;
            let mut t = Table::create(&dir.join("power.csv"), &["distance", "power", "rejections", "reps", "failures"])?;
            for p in &pts {
                t.row(&[Cell::F(p.distance), Cell::F(p.power), Cell::U(p.rejections), Cell::U(p.reps), Cell::U(p.failures)])?;
            }
            t.finish()?;
            serde_json::json!({ "study": study, "settings": cfg, "points": pts })
        }
        Study::Theorem5 => {
            let d = Theorem5Config::default();
            let negative = args.negative_control || file.negative_control.unwrap_or(false);
            let cfg = Theorem5Config {
                n_grid: args.n_grid.clone().or(file.n_grid.clone()).unwrap_or(d.n_grid),
                reps: args.reps.or(file.reps).unwrap_or(d.reps),
                constant_propensity: !negative,
                seed: args.seed.or(file.seed).unwrap_or(d.seed),
                ..d
            };
            let rows = run_theorem5_study(&cfg)?;
            let mut t = Table::create(&dir.join("theorem5.csv"), &["n", "group", "reps", "bias", "mc_se", "bias_over_mc_se"])?;
            for r in &rows {
                t.row(&[Cell::U(r.n), Cell::U(r.group), Cell::U(r.reps), Cell::F(r.bias), Cell::F(r.mc_se), Cell::F(r.z())])?;
            }
            t.finish()?;
            serde_json::json!({ "study": study, "settings": cfg, "rows": rows })
        }
        Study::Diagnostic => {
            let d = DiagnosticConfig::default();
            let cfg = DiagnosticConfig {
                n: args.n.or(file.n).unwrap_or(d.n),
                reps: args.reps.or(file.reps).unwrap_or(d.reps),
                bandwidth: file.bandwidth.unwrap_or(d.bandwidth),
                grid: file.grid.unwrap_or(d.grid),
                multiplier: file.multiplier.unwrap_or(d.multiplier),
                learner: single_learner(simulate_learners(args.learners.clone(), file, LearnerConfig::gbm())?)?,
                plan: plan_from(&args, file, 0)?,
                seed: args.seed.or(file.seed).unwrap_or(d.seed),
            };
            let summary = run_diagnostic_study(&cfg)?;
            // the example series is replication 0 of the study
            let (s_m, s_w) = diagnostic_replication(&cfg, &mut StreamRng::new(cfg.seed).derive(0))?;
            for (name, series) in [("correct", &s_m), ("misspecified", &s_w)] {
                for s in series.iter() {
                    let arm = if s.arm == 0 { "control" } else { "treated" };
                    write_series_raw(&dir.join(format!("residuals_{name}_{arm}.csv")), std::slice::from_ref(s))?;
                }
                write_residuals_smooth(&dir.join(format!("residuals_{name}_smooth.csv")), series, cfg.multiplier)?;
            }
            let mut t = Table::create(
                &dir.join("diagnostic_summary.csv"),
                &["rep", "correct_fraction", "misspecified_fraction", "misspecified_overlap"],
            )?;
            for r in &summary.reps {
                t.row(&[Cell::U(r.rep), Cell::F(r.correct_fraction), Cell::F(r.misspecified_fraction), Cell::B(r.misspecified_overlap)])?;
            }
            t.finish()?;
            serde_json::json!({ "study": study, "settings": cfg, "summary": summary })
        }
        Study::Dssls => {
            let d = DsslsStudyConfig::default();
            let cfg = DsslsStudyConfig {
                n: args.n.or(file.n).unwrap_or(d.n),
                reps: args.reps.or(file.reps).unwrap_or(d.reps),
                alpha,
                seed: args.seed.or(file.seed).unwrap_or(d.seed),
                ..d
            };
            let r = run_dssls_study(&cfg)?;
            let mut t = Table::create(&dir.join("dssls.csv"), &["reps", "failures", "coverage", "mean_agreement", "se_ratio"])?;
            t.row(&[Cell::U(r.reps), Cell::U(r.failures), Cell::F(r.coverage), Cell::F(r.mean_agreement), Cell::F(r.se_ratio)])?;
            t.finish()?;
            serde_json::json!({ "study": study, "settings": cfg, "result": r })
        }
    };
    write_json(&dir.join("report.json"), &report)?;
    eprintln!("{study:?} study finished in {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn write_table1(path: &Path, cells: &[StudyCell]) -> Result<()> {
    let g = cells.first().map_or(0, |c| c.bias.len());
    let mut header: Vec<String> = ["learner", "sigma_a", "sigma_y", "reps", "failures"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for stat in ["bias", "ese", "ase", "ese_ase"] {
        header.extend((1..=g).map(|k| format!("{stat}_{k}")));
    }
    header.push("coverage".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::create(path, &header_refs)?;
    for c in cells {
        let mut row = vec![
            Cell::S(&c.learner),
            Cell::F(c.sigma_a),
            Cell::F(c.sigma_y),
            Cell::U(c.reps),
            Cell::U(c.failures),
        ];
        for stat in [&c.bias, &c.ese, &c.ase, &c.ese_ase] {
            row.extend(stat.iter().map(|v| Cell::F(*v)));
        }
        row.push(Cell::F(c.coverage));
        t.row(&row)?;
    }
    t.finish()
}

fn run(cli: Cli) -> Result<()> {
    let file = load_config(cli.config.as_deref())?;
    let workers = cli.workers.or(file.workers);
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        // a pool may already exist when called in-process more than once
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    match cli.command {
        Command::Power(a) => cmd_power(a, &file),
        Command::Estimate(a) => cmd_estimate(a, &file, &out_dir(cli.out_dir, &file)?),
        Command::Diagnose(a) => cmd_diagnose(a, &file, &out_dir(cli.out_dir, &file)?),
        Command::Discover(a) => cmd_discover(a, &file, &out_dir(cli.out_dir, &file)?),
        Command::Simulate(a) => cmd_simulate(a, &file, &out_dir(cli.out_dir, &file)?),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
