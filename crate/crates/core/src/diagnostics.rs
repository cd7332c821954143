//! Residual diagnostics: per-arm residuals against one covariate with a
//! Gaussian-kernel Nadaraya-Watson trend, and the grid regions where the
//! trend departs from zero by more than its local noise level.
//!
//! Under a correctly specified grouping the SSLS residuals have mean zero
//! given the covariates within each arm; a misspecified grouping shows up as
//! arm-specific off-centering.

use serde::Serialize;

use crate::data::{Dataset, Grouping};
use crate::error::{Error, Result};
use crate::estimator::GroupEffects;

/// Weights beyond this many bandwidths are below `exp(-50)` and skipped.
const KERNEL_REACH: f64 = 10.0;

pub const DEFAULT_BANDWIDTH: f64 = 0.05;
pub const DEFAULT_GRID: usize = 200;
pub const DEFAULT_MULTIPLIER: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualSeries {
    pub arm: u8,
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    /// 1-based group labels.
    pub groups: Vec<usize>,
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    /// Smoothed mean at each grid point; `None` where no weight reaches it.
    pub smooth: Vec<Option<f64>>,
    /// Kish effective sample size `(sum w)^2 / sum w^2` at each grid point.
    pub local_n: Vec<f64>,
}

/// Equispaced grid over `[lo, hi]`.
pub fn equispaced(lo: f64, hi: f64, size: usize) -> Vec<f64> {
    if size == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (size - 1) as f64;
    (0..size)
        .map(|i| if i + 1 == size { hi } else { lo + step * i as f64 })
        .collect()
}

/// Nadaraya-Watson smooth of `(x, r)` at each grid point. Returns the
/// smoothed values and the effective local sample sizes.
pub fn nw_smooth(x: &[f64], r: &[f64], grid: &[f64], h: f64) -> (Vec<Option<f64>>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let rs: Vec<f64> = idx.iter().map(|&i| r[i]).collect();
    let mut smooth = Vec::with_capacity(grid.len());
    let mut local_n = Vec::with_capacity(grid.len());
    for &g in grid {
        let lo = xs.partition_point(|&v| v < g - KERNEL_REACH * h);
        let hi = xs.partition_point(|&v| v <= g + KERNEL_REACH * h);
        let (mut sw, mut swr, mut sw2) = (0.0, 0.0, 0.0);
        for j in lo..hi {
            let u = (xs[j] - g) / h;
            let w = (-0.5 * u * u).exp();
            sw += w;
            swr += w * rs[j];
            sw2 += w * w;
        }
        if sw > 0.0 {
            smooth.push(Some(swr / sw));
            local_n.push(sw * sw / sw2);
        } else {
            smooth.push(None);
            local_n.push(0.0);
        }
    }
    (smooth, local_n)
}

/// Per-arm residual series (arm 0 first) against covariate
/// `covariate_index`, smoothed on a grid spanning the covariate's observed
/// range in the whole sample.
pub fn residual_series(
    ge: &GroupEffects,
    d: &Dataset,
    g: &Grouping,
    covariate_index: usize,
    h: f64,
    grid_size: usize,
) -> Result<Vec<ResidualSeries>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
    }
    if grid_size == 0 {
        return Err(Error::Config("grid size must be at least 1".into()));
    }
    if covariate_index >= d.x.ncols() {
        return Err(Error::Config(format!(
            "covariate index {covariate_index} out of range (dataset has {} covariates)",
            d.x.ncols()
        )));
    }
    for (what, len) in [("residuals", ge.residuals.len()), ("group labels", g.len())] {
        if len != d.len() {
            return Err(Error::LengthMismatch {
                what,
                got: len,
                expected: d.len(),
            });
        }
    }
    let col = d.x.col(covariate_index);
    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let grid = equispaced(lo, hi, grid_size);
    let mut out = Vec::with_capacity(2);
    for arm in [0u8, 1] {
        let rows: Vec<usize> = (0..d.len()).filter(|&i| d.a[i] == arm).collect();
        if rows.is_empty() {
            return Err(Error::EmptyArm(arm));
        }
        let x: Vec<f64> = rows.iter().map(|&i| col[i]).collect();
        let residuals: Vec<f64> = rows.iter().map(|&i| ge.residuals[i]).collect();
        let (smooth, local_n) = nw_smooth(&x, &residuals, &grid, h);
        out.push(ResidualSeries {
            arm,
            x,
            residuals,
            groups: rows.iter().map(|&i| g.labels()[i]).collect(),
            bandwidth: h,
            grid: grid.clone(),
            smooth,
            local_n,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlaggedRegion {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl ResidualSeries {
    /// Sample standard deviation of the arm's residuals.
    pub fn pooled_sd(&self) -> f64 {
        let n = self.residuals.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.residuals.iter().sum::<f64>() / n as f64;
        let ss: f64 = self.residuals.iter().map(|r| (r - mean) * (r - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    }

    /// Grid points whose smoothed mean exceeds
    /// `multiplier * pooled_sd / sqrt(local_n)` in absolute value.
    pub fn flag_mask(&self, multiplier: f64) -> Vec<bool> {
        let sd = self.pooled_sd();
        self.smooth
            .iter()
            .zip(&self.local_n)
            .map(|(s, &n)| match s {
                Some(v) => v.abs() > multiplier * sd / n.sqrt(),
                None => false,
            })
            .collect()
    }
}

/// Maximal runs of flagged grid points, as closed grid intervals.
pub fn flag_regions(rs: &ResidualSeries, multiplier: f64) -> Vec<FlaggedRegion> {
    let mask = rs.flag_mask(multiplier);
    let mut out = Vec::new();
    let mut start = None;
    for i in 0..=mask.len() {
        let on = i < mask.len() && mask[i];
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(FlaggedRegion {
                    lo: rs.grid[s],
                    hi: rs.grid[i - 1],
                    points: i - s,
                });
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Fraction of grid points flagged, pooled over the given series.
pub fn flagged_fraction(series: &[ResidualSeries], multiplier: f64) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for rs in series {
        let m = rs.flag_mask(multiplier);
        hit += m.iter().filter(|&&b| b).count();
        total += m.len();
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{GroupingSource, Matrix};
    use crate::rng::StreamRng;
    use proptest::prelude::*;

    fn effects_with(residuals: Vec<f64>) -> GroupEffects {
        GroupEffects {
            tau_hat: vec![0.0],
            sigma_gg_hat: vec![1.0],
            n_g: vec![residuals.len()],
            n_effective: residuals.len(),
            residuals,
            denominators: vec![1.0],
        }
    }

    fn setup(resid: impl Fn(usize) -> f64) -> (GroupEffects, Dataset, Grouping) {
        let n = 200;
        let mut rng = StreamRng::new(1);
        let x: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let a: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let d = Dataset::from_real_treatment(vec![0.0; n], &a, Matrix::column(x)).unwrap();
        let g = Grouping::new(vec![1; n], 1, GroupingSource::FixedRule).unwrap();
        (effects_with((0..n).map(resid).collect()), d, g)
    }

    #[test]
    fn zero_residuals_zero_curve_no_flags() {
        let (ge, d, g) = setup(|_| 0.0);
        for rs in residual_series(&ge, &d, &g, 0, 0.05, 50).unwrap() {
            assert!(rs.smooth.iter().all(|s| *s == Some(0.0)));
            assert!(flag_regions(&rs, 2.0).is_empty());
        }
    }

    #[test]
    fn constant_residuals_constant_curve() {
        let (ge, d, g) = setup(|_| 0.7);
        for rs in residual_series(&ge, &d, &g, 0, 0.05, 50).unwrap() {
            for s in &rs.smooth {
                assert!((s.unwrap() - 0.7).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tiny_bandwidth_recovers_point() {
        let x = vec![0.0, 0.25, 0.5, 0.75, 1.0];
        let r = vec![3.0, -1.0, 2.0, 0.5, -4.0];
        let (s, _) = nw_smooth(&x, &r, &equispaced(0.0, 1.0, 5), 1e-6);
        for i in 0..5 {
            assert_eq!(s[i], Some(r[i]));
        }
    }

    #[test]
    fn empty_arm_rejected() {
        let n = 10;
        let d = Dataset::from_real_treatment(vec![0.0; n], &[1.0; 10], Matrix::column(vec![0.5; n]))
            .unwrap();
        let g = Grouping::new(vec![1; n], 1, GroupingSource::FixedRule).unwrap();
        assert!(matches!(
            residual_series(&effects_with(vec![0.0; n]), &d, &g, 0, 0.05, 10),
            Err(Error::EmptyArm(0))
        ));
    }

    #[test]
    fn regions_are_maximal_runs() {
        // residuals positive only for x > 0.6
        let (ge, d, g) = setup(|_| 0.0);
        let resid: Vec<f64> = (0..200).map(|i| if d.x.get(i, 0) > 0.6 { 5.0 } else { 0.0 }).collect();
        let ge = GroupEffects {
            residuals: resid,
            ..ge
        };
        let rs = &residual_series(&ge, &d, &g, 0, 0.02, 100).unwrap()[1];
        let regions = flag_regions(rs, 2.0);
        assert_eq!(regions.len(), 1);
        assert!(regions[0].lo > 0.5 && regions[0].lo < 0.65);
        assert_eq!(regions[0].hi, *rs.grid.last().unwrap());
    }

    proptest! {
        #[test]
        fn smoother_is_shift_equivariant(
            pts in proptest::collection::vec((0.0f64..1.0, -5.0f64..5.0), 3..60),
            c in -10.0f64..10.0,
            h in 0.01f64..0.5,
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let r: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let rc: Vec<f64> = r.iter().map(|v| v + c).collect();
            let grid = equispaced(0.0, 1.0, 25);
            let (s, _) = nw_smooth(&x, &r, &grid, h);
            let (sc, _) = nw_smooth(&x, &rc, &grid, h);
            // the weights themselves sum to one: smoothing ones gives one
            let (ones, _) = nw_smooth(&x, &vec![1.0; x.len()], &grid, h);
            for i in 0..grid.len() {
                if let (Some(a), Some(b)) = (s[i], sc[i]) {
                    prop_assert!((b - a - c).abs() < 1e-9);
                    prop_assert!((ones[i].unwrap() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
