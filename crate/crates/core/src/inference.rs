//! Tests and intervals for groupwise effects.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::distributions::{chisq_cdf, chisq_quantile, normal_quantile, normal_sf};
use crate::error::{Error, Result};
use crate::estimator::GroupEffects;
use crate::linalg::symmetric_pinv;

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must be in (0,1), got {alpha}")));
    }
    Ok(())
}

/// Two-sided critical value for the maximum of `g` independent standard
/// normals at familywise level `alpha` (the Sidak / maxT value).
pub fn maxt_critical(alpha: f64, g: usize) -> Result<f64> {
    check_alpha(alpha)?;
    if g == 0 {
        return Err(Error::Domain("number of tests must be at least 1".into()));
    }
    // 1 - (1 - alpha)^(1/g), computed without cancellation
    let per_test = -((-alpha).ln_1p() / g as f64).exp_m1();
    normal_quantile(1.0 - per_test / 2.0)
}

/// Smallest group size giving power `power` at level `alpha` for a
/// standardized effect `z_tilde`.
pub fn power_min_n(z_tilde: f64, alpha: f64, power: f64) -> Result<u64> {
    check_alpha(alpha)?;
    if !(z_tilde > 0.0 && z_tilde.is_finite()) {
        return Err(Error::Domain(format!("z_tilde must be positive, got {z_tilde}")));
    }
    if !(power > 0.0 && power < 1.0) {
        return Err(Error::Domain(format!("power must be in (0,1), got {power}")));
    }
    let s = normal_quantile(power)? + normal_quantile(1.0 - alpha / 2.0)?;
    Ok(((s * s) / (z_tilde * z_tilde)).ceil() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupTest {
    /// 1-based group label.
    pub group: usize,
    pub tau_hat: f64,
    pub tau0: f64,
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

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceReport {
    pub groups: Vec<GroupTest>,
    pub z_crit: f64,
    pub q_crit: f64,
    pub alpha: f64,
}

/// Pointwise t-tests of `tau_g = tau0_g` with `1 - alpha` intervals. The
/// simultaneous fields are filled with the pointwise values.
pub fn pointwise_tests(ge: &GroupEffects, tau0: &[f64], alpha: f64) -> Result<InferenceReport> {
    check_alpha(alpha)?;
    if tau0.len() != ge.n_groups() {
        return Err(Error::LengthMismatch {
            what: "null effects",
            got: tau0.len(),
            expected: ge.n_groups(),
        });
    }
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let groups = ge
        .se()
        .into_iter()
        .enumerate()
        .map(|(k, se)| {
            let tau = ge.tau_hat[k];
            let t = (tau - tau0[k]) / se;
            GroupTest {
                group: k + 1,
                tau_hat: tau,
                tau0: tau0[k],
                se,
                t_stat: t,
                p_value: (2.0 * normal_sf(t.abs())).min(1.0),
                ci_lo: tau - z * se,
                ci_hi: tau + z * se,
                ci_simul_lo: tau - z * se,
                ci_simul_hi: tau + z * se,
                reject_pointwise: t.abs() > z,
                reject_simul: t.abs() > z,
            }
        })
        .collect();
    Ok(InferenceReport {
        groups,
        z_crit: z,
        q_crit: z,
        alpha,
    })
}

/// Replaces the simultaneous fields with maxT intervals over all groups.
pub fn simultaneous_cis(report: &mut InferenceReport) -> Result<()> {
    let q = maxt_critical(report.alpha, report.groups.len())?;
    report.q_crit = q;
    for gt in &mut report.groups {
        gt.ci_simul_lo = gt.tau_hat - q * gt.se;
        gt.ci_simul_hi = gt.tau_hat + q * gt.se;
        gt.reject_simul = gt.t_stat.abs() > q;
    }
    Ok(())
}

/// Pointwise and simultaneous inference in one report.
pub fn infer(ge: &GroupEffects, tau0: &[f64], alpha: f64) -> Result<InferenceReport> {
    let mut r = pointwise_tests(ge, tau0, alpha)?;
    simultaneous_cis(&mut r)?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseTest {
    pub group: usize,
    pub group2: usize,
    pub diff: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    /// Critical value for the simultaneous decision.
    pub q_crit: f64,
    pub reject_pointwise: bool,
    pub reject_simul: bool,
}

/// Unequal-variance comparison of two groups (0-based indices). The
/// simultaneous decision treats `n_pairs` comparisons as the family.
pub fn pairwise_test(
    ge: &GroupEffects,
    g: usize,
    g2: usize,
    alpha: f64,
    n_pairs: usize,
) -> Result<PairwiseTest> {
    check_alpha(alpha)?;
    let groups = ge.n_groups();
    if g >= groups || g2 >= groups {
        return Err(Error::Domain(format!("group index out of range 0..{groups}")));
    }
    if g == g2 {
        return Err(Error::Domain("pairwise test needs two distinct groups".into()));
    }
    let n = ge.n_effective as f64;
    let diff = ge.tau_hat[g] - ge.tau_hat[g2];
    let se = (ge.sigma_gg_hat[g] / n + ge.sigma_gg_hat[g2] / n).sqrt();
    let z = diff / se;
    let zc = normal_quantile(1.0 - alpha / 2.0)?;
    let q = maxt_critical(alpha, n_pairs)?;
    Ok(PairwiseTest {
        group: g + 1,
        group2: g2 + 1,
        diff,
        se,
        z,
        p_value: (2.0 * normal_sf(z.abs())).min(1.0),
        q_crit: q,
        reject_pointwise: z.abs() > zc,
        reject_simul: z.abs() > q,
    })
}

/// All `G(G-1)/2` comparisons with the full set as the family.
pub fn all_pairwise(ge: &GroupEffects, alpha: f64) -> Result<Vec<PairwiseTest>> {
    let g = ge.n_groups();
    let pairs = g * (g.saturating_sub(1)) / 2;
    let mut out = Vec::with_capacity(pairs);
    for i in 0..g {
        for j in i + 1..g {
            out.push(pairwise_test(ge, i, j, alpha, pairs)?);
        }
    }
    Ok(out)
}

/// Linear hypothesis `K tau = m0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Contrast {
    pub k: DMatrix<f64>,
    pub m0: DVector<f64>,
}

impl Contrast {
    pub fn new(k: DMatrix<f64>, m0: DVector<f64>) -> Result<Self> {
        if k.nrows() == 0 {
            return Err(Error::Config("contrast needs at least one row".into()));
        }
        if m0.len() != k.nrows() {
            return Err(Error::LengthMismatch {
                what: "contrast right-hand side",
                got: m0.len(),
                expected: k.nrows(),
            });
        }
        for r in 0..k.nrows() {
            if k.row(r).iter().all(|&v| v == 0.0) {
                return Err(Error::Config(format!("contrast row {} is all zero", r + 1)));
            }
        }
        Ok(Contrast { k, m0 })
    }

    /// Rows `e_1 - e_2, e_1 - e_3, ..., e_{G-1} - e_G`.
    pub fn all_pairs(groups: usize) -> Result<Self> {
        let pairs = groups * groups.saturating_sub(1) / 2;
        let mut k = DMatrix::zeros(pairs, groups);
        let mut r = 0;
        for i in 0..groups {
            for j in i + 1..groups {
                k[(r, i)] = 1.0;
                k[(r, j)] = -1.0;
                r += 1;
            }
        }
        Contrast::new(k, DVector::zeros(pairs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlhResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub critical: f64,
    pub reject: bool,
}

/// Chi-square (Hotelling) test of a general linear hypothesis using the
/// diagonal plug-in covariance.
pub fn glh_test(ge: &GroupEffects, c: &Contrast, alpha: f64) -> Result<GlhResult> {
    check_alpha(alpha)?;
    let g = ge.n_groups();
    if c.k.ncols() != g {
        return Err(Error::LengthMismatch {
            what: "contrast columns",
            got: c.k.ncols(),
            expected: g,
        });
    }
    let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&ge.sigma_gg_hat));
    let ksk = &c.k * sigma * c.k.transpose();
    let l = c.k.nrows();
    let mut dinv = DVector::zeros(l);
    for r in 0..l {
        let v = ksk[(r, r)];
        if !(v > 0.0) {
            return Err(Error::ZeroVarianceContrast(r + 1));
        }
        dinv[r] = 1.0 / v.sqrt();
    }
    let tau = DVector::from_column_slice(&ge.tau_hat);
    let diff = &c.k * tau - &c.m0;
    let q = DVector::from_fn(l, |r, _| (ge.n_effective as f64).sqrt() * dinv[r] * diff[r]);
    let rmat = DMatrix::from_fn(l, l, |i, j| dinv[i] * ksk[(i, j)] * dinv[j]);
    let (pinv, rank) = symmetric_pinv(&rmat, 1e-10);
    let statistic = (q.transpose() * pinv * &q)[(0, 0)].max(0.0);
    let p_value = 1.0 - chisq_cdf(statistic, rank)?;
    let critical = chisq_quantile(1.0 - alpha, rank)?;
    Ok(GlhResult {
        statistic,
        df: rank,
        p_value,
        critical,
        reject: statistic > critical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::normal_cdf;

    fn effects(tau: Vec<f64>, sigma: Vec<f64>, n: usize) -> GroupEffects {
        let g = tau.len();
        GroupEffects {
            tau_hat: tau,
            sigma_gg_hat: sigma,
            n_g: vec![n / g; g],
            n_effective: n,
            residuals: vec![],
            denominators: vec![1.0; g],
        }
    }

    /// Bisection on the CDF, independent of the quantile routine.
    fn quantile_oracle(p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0, 40.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if normal_cdf(mid) < p {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn maxt_values() {
        assert!((maxt_critical(0.05, 1).unwrap() - 1.959964).abs() < 1e-6);
        assert!((maxt_critical(0.05, 45).unwrap() - 3.254).abs() < 1e-3);
        // the Sidak value; 2.4977 would be the Bonferroni cut-off 0.05 / 8
        assert!((maxt_critical(0.05, 4).unwrap() - 2.4909).abs() < 1e-3);
        let direct = quantile_oracle(1.0 - (1.0 - 0.95f64.powf(0.25)) / 2.0);
        assert!((maxt_critical(0.05, 4).unwrap() - direct).abs() < 1e-9);
        assert!(maxt_critical(0.0, 3).is_err());
        assert!(maxt_critical(0.05, 0).is_err());
    }

    #[test]
    fn maxt_monotone() {
        let mut prev = 0.0;
        for g in 1..200 {
            let q = maxt_critical(0.05, g).unwrap();
            assert!(q > prev);
            prev = q;
        }
        assert!(maxt_critical(0.01, 5).unwrap() > maxt_critical(0.05, 5).unwrap());
    }

    #[test]
    fn pointwise_examples() {
        let r = infer(&effects(vec![0.5], vec![1.0], 10), &[0.5], 0.05).unwrap();
        assert_eq!(r.groups[0].t_stat, 0.0);
        assert_eq!(r.groups[0].p_value, 1.0);
        // SE^2 = sigma/n = 0.25
        let r = infer(&effects(vec![1.0], vec![0.25], 1), &[0.0], 0.05).unwrap();
        assert!((r.groups[0].t_stat - 2.0).abs() < 1e-15);
        assert!((r.groups[0].p_value - 2.0 * (1.0 - normal_cdf(2.0))).abs() < 1e-12);
        assert!((r.groups[0].p_value - 0.0455).abs() < 1e-4);
        // one group: simultaneous equals pointwise
        assert_eq!(r.groups[0].ci_lo, r.groups[0].ci_simul_lo);
    }

    #[test]
    fn simultaneous_reject_at_reported_margin() {
        // T = 3.264 against the 45-group critical value
        let mut tau = vec![0.0; 45];
        tau[0] = 3.264;
        let r = infer(&effects(tau, vec![1.0; 45], 1), &[0.0; 45], 0.05).unwrap();
        assert!(r.groups[0].reject_simul);
        assert!(!r.groups[1].reject_simul);
    }

    #[test]
    fn simultaneous_width_ratio() {
        let r = infer(&effects(vec![1.0, 2.0, 3.0, 4.0], vec![1.0; 4], 100), &[0.0; 4], 0.05).unwrap();
        for g in &r.groups {
            let ratio = (g.ci_simul_hi - g.ci_simul_lo) / (g.ci_hi - g.ci_lo);
            assert!((ratio - maxt_critical(0.05, 4).unwrap() / 1.959964).abs() < 1e-6);
            assert!(g.ci_simul_lo <= g.ci_lo && g.ci_simul_hi >= g.ci_hi);
        }
    }

    #[test]
    fn pairwise_examples() {
        let ge = effects(vec![1.0, 2.0, 3.0, 3.0], vec![0.25; 4], 1);
        let p = pairwise_test(&ge, 0, 1, 0.05, 1).unwrap();
        assert!((p.z + std::f64::consts::SQRT_2).abs() < 1e-5);
        assert_eq!(pairwise_test(&ge, 2, 3, 0.05, 1).unwrap().z, 0.0);
        let all = all_pairwise(&ge, 0.05).unwrap();
        assert_eq!(all.len(), 6);
        assert_eq!(all[0].q_crit, maxt_critical(0.05, 6).unwrap());
        assert!(pairwise_test(&ge, 1, 1, 0.05, 1).is_err());
    }

    #[test]
    fn glh_examples() {
        let ge = effects(vec![1.0, 2.0], vec![1.0, 1.0], 1);
        let id = Contrast::new(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 2.0])).unwrap();
        let r = glh_test(&ge, &id, 0.05).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-15);

        let c = Contrast::new(DMatrix::identity(2, 2), DVector::from_vec(vec![0.0, 1.0])).unwrap();
        let r = glh_test(&ge, &c, 0.05).unwrap();
        assert!((r.statistic - 2.0).abs() < 1e-12);
        assert_eq!(r.df, 2);
    }

    #[test]
    fn glh_single_row_is_squared_t() {
        let ge = effects(vec![0.3, -1.2, 2.0], vec![0.7, 1.9, 0.4], 50);
        let t = infer(&ge, &[0.1, 0.0, 2.5], 0.05).unwrap();
        for g in 0..3 {
            let mut k = DMatrix::zeros(1, 3);
            k[(0, g)] = 1.0;
            let m0 = [0.1, 0.0, 2.5][g];
            let c = Contrast::new(k, DVector::from_vec(vec![m0])).unwrap();
            let r = glh_test(&ge, &c, 0.05).unwrap();
            assert!((r.statistic - t.groups[g].t_stat.powi(2)).abs() < 1e-9);
            assert_eq!(r.df, 1);
        }
    }

    #[test]
    fn glh_rank_deficient_pairs() {
        // all pairwise differences of 4 groups span a 3-dimensional space
        let ge = effects(vec![0.0; 4], vec![1.0, 2.0, 3.0, 4.0], 10);
        let r = glh_test(&ge, &Contrast::all_pairs(4).unwrap(), 0.05).unwrap();
        assert_eq!(r.df, 3);
        assert!(Contrast::new(DMatrix::zeros(1, 4), DVector::zeros(1)).is_err());
        let z = effects(vec![0.0; 2], vec![0.0, 1.0], 10);
        let mut k = DMatrix::zeros(1, 2);
        k[(0, 0)] = 1.0;
        assert!(matches!(
            glh_test(&z, &Contrast::new(k, DVector::zeros(1)).unwrap(), 0.05),
            Err(Error::ZeroVarianceContrast(1))
        ));
    }

    #[test]
    fn power_examples() {
        assert_eq!(power_min_n(1.0, 0.05, 0.8).unwrap(), 8);
        assert_eq!(power_min_n(2.8016, 0.05, 0.8).unwrap(), 1);
        assert_eq!(power_min_n(0.1, 0.05, 0.8).unwrap(), 785);
        let s = quantile_oracle(0.8) + quantile_oracle(0.975);
        assert!((s - 2.8016).abs() < 1e-4);
        assert!(power_min_n(0.0, 0.05, 0.8).is_err());
    }
}
