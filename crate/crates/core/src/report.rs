//! Serialized artifacts: the JSON report and the flat CSV tables.
//!
//! JSON keeps full precision; CSV values use six significant digits. Nothing
//! written here depends on wall-clock time.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::data::{Dataset, Grouping};
use crate::diagnostics::{flag_regions, FlaggedRegion, ResidualSeries};
use crate::error::Result;
use crate::estimator::{GroupEffects, NuisanceFit, SslsRun};
use crate::inference::{GlhResult, InferenceReport, PairwiseTest};
use crate::io::{sig6, GroupLabel};

/// One group's estimate, intervals and tests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRow {
    pub group: usize,
    /// Original value of the group column, when groups were read from data.
    pub value: Option<String>,
    pub n_g: usize,
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
    pub residual_mean: f64,
    pub residual_sd: f64,
}

pub fn group_rows(
    ge: &GroupEffects,
    inf: &InferenceReport,
    group_of: &[usize],
    labels: &[GroupLabel],
) -> Vec<GroupRow> {
    let g = ge.n_groups();
    let mut sum = vec![0.0; g];
    let mut sq = vec![0.0; g];
    let mut cnt = vec![0usize; g];
    for (r, &l) in ge.residuals.iter().zip(group_of) {
        sum[l - 1] += r;
        cnt[l - 1] += 1;
    }
    for (r, &l) in ge.residuals.iter().zip(group_of) {
        let m = sum[l - 1] / cnt[l - 1] as f64;
        sq[l - 1] += (r - m) * (r - m);
    }
    inf.groups
        .iter()
        .enumerate()
        .map(|(k, t)| GroupRow {
            group: t.group,
            value: labels.iter().find(|l| l.label == t.group).map(|l| l.value.clone()),
            n_g: ge.n_g[k],
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
            residual_mean: sum[k] / cnt[k].max(1) as f64,
            residual_sd: if cnt[k] > 1 {
                (sq[k] / (cnt[k] - 1) as f64).sqrt()
            } else {
                0.0
            },
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub command: String,
    /// Resolved settings the run used.
    pub settings: serde_json::Value,
    pub n: usize,
    pub n_effective: usize,
    pub groups: usize,
    pub alpha: f64,
    pub z_crit: f64,
    pub q_crit: f64,
    pub effects: Vec<GroupRow>,
    pub pairwise: Vec<PairwiseTest>,
    pub glh: Option<GlhResult>,
    pub outcome_mse: f64,
    pub per_repeat_tau: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl EstimateReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        command: &str,
        settings: serde_json::Value,
        n: usize,
        run: &SslsRun,
        inf: &InferenceReport,
        effects: Vec<GroupRow>,
        pairwise: Vec<PairwiseTest>,
        glh: Option<GlhResult>,
        y: &[f64],
    ) -> Self {
        EstimateReport {
            command: command.to_string(),
            settings,
            n,
            n_effective: run.effects.n_effective,
            groups: run.effects.n_groups(),
            alpha: inf.alpha,
            z_crit: inf.z_crit,
            q_crit: inf.q_crit,
            effects,
            pairwise,
            glh,
            outcome_mse: run.nuisance.outcome_mse(y),
            per_repeat_tau: run.per_repeat_tau.clone(),
            warnings: run.warnings.clone(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// CSV writer that formats every float with [`sig6`].
pub struct Table {
    w: csv::Writer<File>,
}

pub enum Cell<'a> {
    F(f64),
    U(usize),
    B(bool),
    S(&'a str),
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header)?;
        Ok(Table { w })
    }

    pub fn row(&mut self, cells: &[Cell]) -> Result<()> {
        let rec: Vec<String> = cells
            .iter()
            .map(|c| match c {
                Cell::F(v) => sig6(*v),
                Cell::U(v) => v.to_string(),
                Cell::B(v) => v.to_string(),
                Cell::S(s) => s.to_string(),
            })
            .collect();
        self.w.write_record(&rec)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

pub fn write_groups_csv(path: &Path, rows: &[GroupRow]) -> Result<()> {
    let mut t = Table::create(
        path,
        &[
            "group", "value", "n_g", "tau_hat", "se", "t_stat", "p_value", "ci_lo", "ci_hi",
            "ci_simul_lo", "ci_simul_hi", "reject_pointwise", "reject_simul",
        ],
    )?;
    for r in rows {
        t.row(&[
            Cell::U(r.group),
            Cell::S(r.value.as_deref().unwrap_or("")),
            Cell::U(r.n_g),
            Cell::F(r.tau_hat),
            Cell::F(r.se),
            Cell::F(r.t_stat),
            Cell::F(r.p_value),
            Cell::F(r.ci_lo),
            Cell::F(r.ci_hi),
            Cell::F(r.ci_simul_lo),
            Cell::F(r.ci_simul_hi),
            Cell::B(r.reject_pointwise),
            Cell::B(r.reject_simul),
        ])?;
    }
    t.finish()
}

/// Raw residuals with the nuisance predictions that produced them, one row
/// per observation of the estimation sample. `row_ids` maps back to input
/// rows.
pub fn write_residuals_raw(
    path: &Path,
    row_ids: &[usize],
    d: &Dataset,
    g: &Grouping,
    covariate: usize,
    ge: &GroupEffects,
    nf: &NuisanceFit,
) -> Result<()> {
    let mut t = Table::create(path, &["row", "x", "residual", "arm", "group", "m_hat", "e_hat"])?;
    for i in 0..d.len() {
        t.row(&[
            Cell::U(row_ids[i]),
            Cell::F(d.x.get(i, covariate)),
            Cell::F(ge.residuals[i]),
            Cell::U(d.a[i] as usize),
            Cell::U(g.labels()[i]),
            Cell::F(nf.m_hat[i]),
            Cell::F(nf.e_hat[i]),
        ])?;
    }
    t.finish()
}

/// Residual series points, `(x, residual, arm, group)`.
pub fn write_series_raw(path: &Path, series: &[ResidualSeries]) -> Result<()> {
    let mut t = Table::create(path, &["x", "residual", "arm", "group"])?;
    for s in series {
        for i in 0..s.x.len() {
            t.row(&[
                Cell::F(s.x[i]),
                Cell::F(s.residuals[i]),
                Cell::U(s.arm as usize),
                Cell::U(s.groups[i]),
            ])?;
        }
    }
    t.finish()
}

/// Smoothed curves: one row per arm and grid point. Grid points without
/// kernel support have an empty curve value.
pub fn write_residuals_smooth(path: &Path, series: &[ResidualSeries], multiplier: f64) -> Result<()> {
    let mut t = Table::create(path, &["x_grid", "curve", "arm", "local_n", "flagged"])?;
    for s in series {
        let mask = s.flag_mask(multiplier);
        for i in 0..s.grid.len() {
            let curve = s.smooth[i].map(sig6).unwrap_or_default();
            t.row(&[
                Cell::F(s.grid[i]),
                Cell::S(&curve),
                Cell::U(s.arm as usize),
                Cell::F(s.local_n[i]),
                Cell::B(mask[i]),
            ])?;
        }
    }
    t.finish()
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmFlags {
    pub arm: u8,
    pub regions: Vec<FlaggedRegion>,
}

pub fn arm_flags(series: &[ResidualSeries], multiplier: f64) -> Vec<ArmFlags> {
    series
        .iter()
        .map(|s| ArmFlags {
            arm: s.arm,
            regions: flag_regions(s, multiplier),
        })
        .collect()
}
