//! Data-generating processes for the simulation studies.

use rand_distr::{Bernoulli, Distribution, StandardNormal};

use crate::data::{Dataset, Grouping, GroupingSource, Matrix};
use crate::error::{Error, Result};
use crate::learners::OracleFn;
use crate::rng::StreamRng;

pub fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

fn bernoulli(p: f64, rng: &mut StreamRng) -> bool {
    Bernoulli::new(p).expect("probability in [0,1]").sample(rng)
}

/// `E[X1 | X1 >= 0] = sqrt(2 / pi)` for a standard normal.
pub const HALF_NORMAL_MEAN: f64 = 0.797_884_560_802_865_4;

#[derive(Debug, Clone, PartialEq)]
pub struct Dgp1Config {
    pub n: usize,
    pub sigma_a: f64,
    pub sigma_y: f64,
    pub tau: Vec<f64>,
    pub seed: u64,
}

impl Default for Dgp1Config {
    fn default() -> Self {
        Dgp1Config {
            n: 1000,
            sigma_a: 0.0,
            sigma_y: 0.0,
            tau: vec![1.0, 2.0, 3.0, 4.0],
            seed: 0,
        }
    }
}

impl Dgp1Config {
    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(Error::Config(format!("DGP needs N >= 8, got {}", self.n)));
        }
        if self.tau.len() != 4 {
            return Err(Error::Config("DGP has exactly 4 groups".into()));
        }
        if !(self.sigma_a >= 0.0 && self.sigma_y >= 0.0) {
            return Err(Error::Config("random-effect SDs must be non-negative".into()));
        }
        Ok(())
    }
}

/// `M(X) = 1 + I(X5 = 1) + 2 I(X1 >= 0)`.
pub fn dgp1_group(row: &[f64]) -> usize {
    1 + (row[4] == 1.0) as usize + 2 * (row[0] >= 0.0) as usize
}

/// Linear index of the treatment model without the random effect.
pub fn dgp1_index(row: &[f64]) -> f64 {
    0.5 + 0.5 * row[0] + 0.5 * row[1] - 0.5 * row[2] - row[3] + row[4]
}

/// Control-arm mean without the random effect.
pub fn dgp1_baseline(row: &[f64]) -> f64 {
    5.0 + row[0] * row[0] - 2.0 * row[0] * row[1] - 2.0 * row[2] - 2.0 * row[3] + 4.0 * row[4]
}

/// True propensity with the random effects switched off.
pub fn dgp1_propensity_oracle() -> OracleFn {
    OracleFn::new(|r| logistic(dgp1_index(r)))
}

/// True `E(Y | X)` with the random effects switched off.
pub fn dgp1_outcome_oracle(tau: Vec<f64>) -> OracleFn {
    OracleFn::new(move |r| dgp1_baseline(r) + logistic(dgp1_index(r)) * tau[dgp1_group(r) - 1])
}

#[derive(Debug, Clone)]
pub struct Dgp1Truth {
    pub tau: Vec<f64>,
    pub nu: Vec<f64>,
    pub xi: Vec<f64>,
    /// Propensity including the group random effect.
    pub e_true: Vec<f64>,
    /// `E(Y | X, group effects)`.
    pub m_true: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Dgp1Draw {
    pub data: Dataset,
    pub grouping: Grouping,
    pub truth: Dgp1Truth,
}

pub fn draw_dgp1(cfg: &Dgp1Config) -> Result<Dgp1Draw> {
    draw_dgp1_with(cfg, &mut StreamRng::new(cfg.seed))
}

pub fn draw_dgp1_with(cfg: &Dgp1Config, rng: &mut StreamRng) -> Result<Dgp1Draw> {
    cfg.validate()?;
    let mut nu = vec![0.0; 4];
    let mut xi = vec![0.0; 4];
    for g in 0..4 {
        let z = normal(rng);
        if cfg.sigma_a > 0.0 {
            nu[g] = cfg.sigma_a * z;
        }
    }
    for g in 0..4 {
        let z = normal(rng);
        if cfg.sigma_y > 0.0 {
            xi[g] = cfg.sigma_y * z;
        }
    }
    let n = cfg.n;
    let mut x = Matrix::zeros(n, 5);
    let mut y = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut e_true = Vec::with_capacity(n);
    let mut m_true = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let row = [
            normal(rng),
            normal(rng),
            bernoulli(0.5, rng) as u8 as f64,
            bernoulli(0.5, rng) as u8 as f64,
            bernoulli(0.5, rng) as u8 as f64,
        ];
        for (c, v) in row.iter().enumerate() {
            x.set(i, c, *v);
        }
        let g = dgp1_group(&row);
        let e = logistic(dgp1_index(&row) + nu[g - 1]);
        let ai = bernoulli(e, rng) as u8;
        let base = dgp1_baseline(&row) + xi[g - 1];
        y.push(base + cfg.tau[g - 1] * f64::from(ai) + normal(rng));
        a.push(ai);
        e_true.push(e);
        m_true.push(base + e * cfg.tau[g - 1]);
        labels.push(g);
    }
    let grouping = Grouping::new(labels, 4, GroupingSource::FixedRule)?;
    Ok(Dgp1Draw {
        data: Dataset {
            y,
            a,
            x,
            known_propensity: None,
        },
        grouping,
        truth: Dgp1Truth {
            tau: cfg.tau.clone(),
            nu,
            xi,
            e_true,
            m_true,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpDiagConfig {
    pub n: usize,
    pub use_misspecified_m: bool,
    pub seed: u64,
}

impl Default for DgpDiagConfig {
    fn default() -> Self {
        DgpDiagConfig {
            n: 10_000,
            use_misspecified_m: false,
            seed: 0,
        }
    }
}

/// True grouping `1 + I(X > 0.5)`.
pub fn diag_group(x: f64) -> usize {
    1 + (x > 0.5) as usize
}

/// Misspecified grouping `1 + I(X > 0.25) + I(X > 0.75)`.
pub fn diag_group_w(x: f64) -> usize {
    1 + (x > 0.25) as usize + (x > 0.75) as usize
}

#[derive(Debug, Clone)]
pub struct DiagDraw {
    pub data: Dataset,
    pub grouping_m: Grouping,
    pub grouping_w: Grouping,
}

pub fn draw_diag_both(n: usize, rng: &mut StreamRng) -> Result<DiagDraw> {
    if n < 4 {
        return Err(Error::Config(format!("diagnostic DGP needs N >= 4, got {n}")));
    }
    let mut xs = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.uniform();
        let ai = bernoulli(0.5, rng) as u8;
        let tau = diag_group(x) as f64;
        y.push(tau * f64::from(ai) + x * x + 0.1 * normal(rng));
        a.push(ai);
        xs.push(x);
    }
    let m: Vec<usize> = xs.iter().map(|&x| diag_group(x)).collect();
    let w: Vec<usize> = xs.iter().map(|&x| diag_group_w(x)).collect();
    Ok(DiagDraw {
        data: Dataset {
            y,
            a,
            x: Matrix::column(xs),
            known_propensity: None,
        },
        grouping_m: Grouping::new(m, 2, GroupingSource::FixedRule)?,
        grouping_w: Grouping::new(w, 3, GroupingSource::FixedRule)?,
    })
}

pub fn draw_dgp_diag(cfg: &DgpDiagConfig) -> Result<(Dataset, Grouping)> {
    let d = draw_diag_both(cfg.n, &mut StreamRng::new(cfg.seed))?;
    let g = if cfg.use_misspecified_m {
        d.grouping_w
    } else {
        d.grouping_m
    };
    Ok((d.data, g))
}

/// Within-group effect heterogeneity with constant or covariate-dependent
/// propensity, on the four-group covariate design.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroConfig {
    pub n: usize,
    pub tau: Vec<f64>,
    /// Per-group treatment probabilities used when `constant_propensity`.
    pub group_propensity: Vec<f64>,
    pub constant_propensity: bool,
    /// Scale of `delta(X) = X1 - E[X1 | group]`.
    pub delta_scale: f64,
}

impl Default for HeteroConfig {
    fn default() -> Self {
        HeteroConfig {
            n: 5000,
            tau: vec![1.0, 2.0, 3.0, 4.0],
            group_propensity: vec![0.35, 0.5, 0.6, 0.7],
            constant_propensity: true,
            delta_scale: 1.0,
        }
    }
}

/// `delta(X) = X1 - E[X1 | M(X)]`, mean zero within each group.
pub fn hetero_delta(row: &[f64]) -> f64 {
    if row[0] >= 0.0 {
        row[0] - HALF_NORMAL_MEAN
    } else {
        row[0] + HALF_NORMAL_MEAN
    }
}

/// Covariate-dependent propensity of the negative control.
pub fn hetero_varying_propensity(row: &[f64]) -> f64 {
    logistic(0.5 + row[0])
}

/// True `E[Y | X]` of the heterogeneity design.
pub fn hetero_outcome_oracle(cfg: &HeteroConfig) -> OracleFn {
    let cfg = cfg.clone();
    OracleFn::new(move |row| {
        let g = dgp1_group(row);
        let e = if cfg.constant_propensity {
            cfg.group_propensity[g - 1]
        } else {
            hetero_varying_propensity(row)
        };
        dgp1_baseline(row) + e * (cfg.tau[g - 1] + cfg.delta_scale * hetero_delta(row))
    })
}

#[derive(Debug, Clone)]
pub struct HeteroDraw {
    pub data: Dataset,
    pub grouping: Grouping,
    pub m_true: Vec<f64>,
    pub e_true: Vec<f64>,
}

pub fn draw_hetero(cfg: &HeteroConfig, rng: &mut StreamRng) -> Result<HeteroDraw> {
    if cfg.tau.len() != 4 || cfg.group_propensity.len() != 4 {
        return Err(Error::Config("heterogeneity DGP has exactly 4 groups".into()));
    }
    let n = cfg.n;
    let mut x = Matrix::zeros(n, 5);
    let (mut y, mut a, mut m_true, mut e_true, mut labels) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let row = [
            normal(rng),
            normal(rng),
            bernoulli(0.5, rng) as u8 as f64,
            bernoulli(0.5, rng) as u8 as f64,
            bernoulli(0.5, rng) as u8 as f64,
        ];
        for (c, v) in row.iter().enumerate() {
            x.set(i, c, *v);
        }
        let g = dgp1_group(&row);
        let e = if cfg.constant_propensity {
            cfg.group_propensity[g - 1]
        } else {
            hetero_varying_propensity(&row)
        };
        let effect = cfg.tau[g - 1] + cfg.delta_scale * hetero_delta(&row);
        let ai = bernoulli(e, rng) as u8;
        let base = dgp1_baseline(&row);
        y.push(base + effect * f64::from(ai) + normal(rng));
        a.push(ai);
        m_true.push(base + e * effect);
        e_true.push(e);
        labels.push(g);
    }
    Ok(HeteroDraw {
        data: Dataset {
            y,
            a,
            x,
            known_propensity: None,
        },
        grouping: Grouping::new(labels, 4, GroupingSource::FixedRule)?,
        m_true,
        e_true,
    })
}

/// Two Gaussian blobs along the first covariate, `separation` apart in
/// units of the blob SD, with group `1 + I(X1 > 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobConfig {
    pub n: usize,
    pub separation: f64,
    pub tau: Vec<f64>,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig {
            n: 1500,
            separation: 10.0,
            tau: vec![1.0, 2.0],
        }
    }
}

pub fn blob_group(row: &[f64]) -> usize {
    1 + (row[0] > 0.0) as usize
}

pub fn blob_propensity(row: &[f64]) -> f64 {
    logistic(0.5 * row[1])
}

pub fn blob_baseline(row: &[f64]) -> f64 {
    0.5 * row[0] + row[1] * row[1]
}

#[derive(Debug, Clone)]
pub struct BlobDraw {
    pub data: Dataset,
    /// Labels under the true rule.
    pub grouping: Grouping,
}

pub fn draw_blobs(cfg: &BlobConfig, rng: &mut StreamRng) -> Result<BlobDraw> {
    if cfg.tau.len() != 2 {
        return Err(Error::Config("blob DGP has exactly 2 groups".into()));
    }
    let n = cfg.n;
    let half = cfg.separation / 2.0;
    let mut x = Matrix::zeros(n, 2);
    let (mut y, mut a, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let centre = if bernoulli(0.5, rng) { half } else { -half };
        let row = [centre + normal(rng), normal(rng)];
        x.set(i, 0, row[0]);
        x.set(i, 1, row[1]);
        let g = blob_group(&row);
        let ai = bernoulli(blob_propensity(&row), rng) as u8;
        y.push(blob_baseline(&row) + cfg.tau[g - 1] * f64::from(ai) + normal(rng));
        a.push(ai);
        labels.push(g);
    }
    Ok(BlobDraw {
        data: Dataset {
            y,
            a,
            x,
            known_propensity: None,
        },
        grouping: Grouping::new(labels, 2, GroupingSource::FixedRule)?,
    })
}

pub fn blob_outcome_oracle(tau: Vec<f64>) -> OracleFn {
    OracleFn::new(move |r| blob_baseline(r) + blob_propensity(r) * tau[blob_group(r) - 1])
}

pub fn blob_propensity_oracle() -> OracleFn {
    OracleFn::new(blob_propensity)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_effects_off_are_exact_zero() {
        let d = draw_dgp1(&Dgp1Config {
            seed: 3,
            ..Dgp1Config::default()
        })
        .unwrap();
        assert!(d.truth.nu.iter().all(|&v| v == 0.0));
        assert!(d.truth.xi.iter().all(|&v| v == 0.0));
        let d = draw_dgp1(&Dgp1Config {
            seed: 3,
            sigma_a: 1.0,
            sigma_y: 2.0,
            ..Dgp1Config::default()
        })
        .unwrap();
        assert!(d.truth.nu.iter().all(|&v| v != 0.0));
    }

    #[test]
    fn group_rule_and_truth_record() {
        let d = draw_dgp1(&Dgp1Config {
            seed: 1,
            ..Dgp1Config::default()
        })
        .unwrap();
        let oracle_m = dgp1_outcome_oracle(vec![1.0, 2.0, 3.0, 4.0]);
        for i in 0..d.data.len() {
            let row = d.data.x.row(i);
            assert_eq!(d.grouping.labels()[i], dgp1_group(row));
            assert!((oracle_m.eval(row) - d.truth.m_true[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn diag_rules() {
        assert_eq!(diag_group(0.4), 1);
        assert_eq!(diag_group(0.6), 2);
        assert_eq!(diag_group_w(0.1), 1);
        assert_eq!(diag_group_w(0.5), 2);
        assert_eq!(diag_group_w(0.9), 3);
    }

    #[test]
    fn hetero_delta_mean_zero_within_group() {
        let mut rng = StreamRng::new(2);
        let d = draw_hetero(
            &HeteroConfig {
                n: 40_000,
                ..HeteroConfig::default()
            },
            &mut rng,
        )
        .unwrap();
        for members in d.grouping.members() {
            let s: Vec<f64> = members.iter().map(|&i| hetero_delta(d.data.x.row(i))).collect();
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s.len() as f64).sqrt();
            assert!(mean.abs() < 4.0 * sd / (s.len() as f64).sqrt());
        }
    }
}
