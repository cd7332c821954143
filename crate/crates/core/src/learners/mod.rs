//! Nuisance learners for the outcome regression `E(Y|X)` and the propensity
//! score `e(X)`.

pub mod gbm;
pub mod linear;
pub mod logistic;
pub mod tree;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::Matrix;
use crate::error::{ArmScope, Error, Result};

pub use gbm::{GbmModel, GbmParams};
pub use linear::LinearModel;
pub use logistic::LogisticModel;
pub use tree::{RegressionTree, TreeParams};

pub const DEFAULT_CLIP: f64 = 0.01;

/// A known function of the covariate row, used in oracle mode.
#[derive(Clone)]
pub struct OracleFn(pub Arc<RowFn<f64>>);

/// Thread-safe function of a covariate row.
pub type RowFn<T> = dyn Fn(&[f64]) -> T + Send + Sync;

impl OracleFn {
    pub fn new<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        OracleFn(Arc::new(f))
    }

    pub fn eval(&self, row: &[f64]) -> f64 {
        (self.0)(row)
    }
}

impl fmt::Debug for OracleFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("OracleFn")
    }
}

#[derive(Debug, Clone)]
pub enum RegressionLearnerSpec {
    Ols,
    Ridge { lambda: f64 },
    Cart(TreeParams),
    Gbm(GbmParams),
    Oracle(OracleFn),
}

impl RegressionLearnerSpec {
    pub fn cart_default() -> Self {
        RegressionLearnerSpec::Cart(TreeParams {
            max_depth: 6,
            min_leaf: 10,
        })
    }

    pub fn gbm_default() -> Self {
        RegressionLearnerSpec::Gbm(GbmParams::default())
    }

    fn validate(&self) -> Result<()> {
        match self {
            RegressionLearnerSpec::Ridge { lambda } if !(*lambda >= 0.0) => {
                Err(Error::Config(format!("ridge lambda must be >= 0, got {lambda}")))
            }
            RegressionLearnerSpec::Gbm(p) if !(p.shrinkage > 0.0 && p.shrinkage <= 1.0) => Err(
                Error::Config(format!("GBM shrinkage must be in (0,1], got {}", p.shrinkage)),
            ),
            RegressionLearnerSpec::Cart(p) if p.min_leaf == 0 => {
                Err(Error::Config("min_leaf must be at least 1".into()))
            }
            RegressionLearnerSpec::Gbm(p) if p.min_leaf == 0 => {
                Err(Error::Config("min_leaf must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    fn min_rows(&self) -> usize {
        match self {
            RegressionLearnerSpec::Cart(p) => 2 * p.min_leaf,
            RegressionLearnerSpec::Gbm(p) => 2 * p.min_leaf,
            _ => 2,
        }
    }
}

/// Where known propensities come from.
#[derive(Debug, Clone, PartialEq)]
pub enum KnownPropensity {
    /// The dataset's known-propensity column.
    Column,
    /// One value for every observation.
    Constant(f64),
    /// One value per group, indexed by 0-based group.
    PerGroup(Vec<f64>),
}

#[derive(Debug, Clone)]
pub enum PropensityKind {
    Logistic { max_iter: usize, tol: f64 },
    Cart(TreeParams),
    Gbm(GbmParams),
    Known(KnownPropensity),
    Oracle(OracleFn),
}

#[derive(Debug, Clone)]
pub struct PropensityLearnerSpec {
    pub kind: PropensityKind,
    pub clip: f64,
}

impl PropensityLearnerSpec {
    pub fn new(kind: PropensityKind) -> Self {
        PropensityLearnerSpec {
            kind,
            clip: DEFAULT_CLIP,
        }
    }

    pub fn logistic_default() -> Self {
        Self::new(PropensityKind::Logistic {
            max_iter: 100,
            tol: 1e-8,
        })
    }

    pub fn gbm_default() -> Self {
        Self::new(PropensityKind::Gbm(GbmParams::default()))
    }

    pub fn cart_default() -> Self {
        Self::new(PropensityKind::Cart(TreeParams {
            max_depth: 6,
            min_leaf: 10,
        }))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 0.5) {
            return Err(Error::Config(format!(
                "propensity clip must be in (0, 0.5), got {}",
                self.clip
            )));
        }
        if let PropensityKind::Gbm(p) = &self.kind {
            if !(p.shrinkage > 0.0 && p.shrinkage <= 1.0) {
                return Err(Error::Config("GBM shrinkage must be in (0,1]".into()));
            }
        }
        Ok(())
    }

    pub fn clip_value(&self, p: f64) -> f64 {
        p.clamp(self.clip, 1.0 - self.clip)
    }

    pub fn needs_both_arms(&self) -> bool {
        !matches!(self.kind, PropensityKind::Known(_) | PropensityKind::Oracle(_))
    }
}

/// Fitted nuisance model; `predict` is deterministic.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Constant(f64),
    Linear(LinearModel),
    Tree(RegressionTree),
    Boosted(GbmModel),
    Logistic(LogisticModel),
    Oracle(OracleFn),
    /// Probability model clipped into `[clip, 1 - clip]`.
    Clipped { inner: Box<FittedModel>, clip: f64 },
}

impl FittedModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            FittedModel::Constant(c) => *c,
            FittedModel::Linear(m) => m.predict(row),
            FittedModel::Tree(t) => t.predict(row),
            FittedModel::Boosted(g) => g.predict(row),
            FittedModel::Logistic(l) => l.predict(row),
            FittedModel::Oracle(f) => f.eval(row),
            FittedModel::Clipped { inner, clip } => inner.predict(row).clamp(*clip, 1.0 - *clip),
        }
    }

    pub fn predict_all(&self, x: &Matrix) -> Vec<f64> {
        (0..x.nrows()).map(|i| self.predict(x.row(i))).collect()
    }

    /// Non-fatal fitting problems worth surfacing to the user.
    pub fn warning(&self) -> Option<String> {
        match self {
            FittedModel::Logistic(l) if !l.converged => Some(format!(
                "logistic fit did not converge after {} iterations (gradient norm {:.3e})",
                l.iterations, l.grad_norm
            )),
            FittedModel::Clipped { inner, .. } => inner.warning(),
            _ => None,
        }
    }
}

fn check_shape(x: &Matrix, n: usize, what: &'static str) -> Result<()> {
    if x.nrows() != n {
        return Err(Error::LengthMismatch {
            what,
            got: n,
            expected: x.nrows(),
        });
    }
    Ok(())
}

pub fn fit_regression(spec: &RegressionLearnerSpec, x: &Matrix, y: &[f64]) -> Result<FittedModel> {
    spec.validate()?;
    check_shape(x, y.len(), "regression target")?;
    if let RegressionLearnerSpec::Oracle(f) = spec {
        return Ok(FittedModel::Oracle(f.clone()));
    }
    if y.len() < spec.min_rows() {
        return Err(Error::TooFewSamples(format!(
            "regression learner needs at least {} rows, got {}",
            spec.min_rows(),
            y.len()
        )));
    }
    Ok(match spec {
        RegressionLearnerSpec::Ols => FittedModel::Linear(linear::fit_linear(x, y, 0.0)?),
        RegressionLearnerSpec::Ridge { lambda } => {
            FittedModel::Linear(linear::fit_linear(x, y, *lambda)?)
        }
        RegressionLearnerSpec::Cart(p) => {
            let (t, _) = tree::build_tree(x, y, &tree::Presorted::new(x), *p);
            FittedModel::Tree(t)
        }
        RegressionLearnerSpec::Gbm(p) => FittedModel::Boosted(gbm::fit_gbm(x, y, *p)),
        RegressionLearnerSpec::Oracle(_) => unreachable!(),
    })
}

/// Fits a propensity model. `Known` sources that need per-row or per-group
/// information are resolved by the cross-fitting layer; only a constant can
/// be served here.
pub fn fit_propensity(spec: &PropensityLearnerSpec, x: &Matrix, a: &[u8]) -> Result<FittedModel> {
    spec.validate()?;
    check_shape(x, a.len(), "treatment")?;
    let clipped = |m: FittedModel| FittedModel::Clipped {
        inner: Box::new(m),
        clip: spec.clip,
    };
    match &spec.kind {
        PropensityKind::Known(KnownPropensity::Constant(p)) => {
            if !(*p > 0.0 && *p < 1.0) {
                return Err(Error::Config(format!("known propensity {p} outside (0,1)")));
            }
            return Ok(clipped(FittedModel::Constant(*p)));
        }
        PropensityKind::Known(_) => {
            return Err(Error::Config(
                "column or per-group known propensities are applied during cross-fitting".into(),
            ))
        }
        PropensityKind::Oracle(f) => return Ok(clipped(FittedModel::Oracle(f.clone()))),
        _ => {}
    }
    let treated = a.iter().filter(|&&v| v == 1).count();
    if treated == 0 || treated == a.len() {
        return Err(Error::OneArmOnly(ArmScope::Sample));
    }
    let af: Vec<f64> = a.iter().map(|&v| f64::from(v)).collect();
    let inner = match &spec.kind {
        PropensityKind::Logistic { max_iter, tol } => {
            FittedModel::Logistic(logistic::fit_logistic(x, &af, *max_iter, *tol)?)
        }
        PropensityKind::Cart(p) => {
            fit_regression(&RegressionLearnerSpec::Cart(*p), x, &af)?
        }
        PropensityKind::Gbm(p) => fit_regression(&RegressionLearnerSpec::Gbm(*p), x, &af)?,
        PropensityKind::Known(_) | PropensityKind::Oracle(_) => unreachable!(),
    };
    Ok(clipped(inner))
}

fn default_lambda() -> f64 {
    1.0
}
fn default_cart_depth() -> usize {
    6
}
fn default_gbm_depth() -> usize {
    2
}
fn default_min_leaf() -> usize {
    10
}
fn default_n_trees() -> usize {
    100
}
fn default_shrinkage() -> f64 {
    0.1
}
fn default_max_iter() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-8
}

/// Declarative learner choice as written in config files and on the command
/// line (`kind[:key=value,...]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerConfig {
    Ols,
    Ridge {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    Cart {
        #[serde(default = "default_cart_depth")]
        max_depth: usize,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
    },
    Gbm {
        #[serde(default = "default_n_trees")]
        n_trees: usize,
        #[serde(default = "default_gbm_depth")]
        max_depth: usize,
        #[serde(default = "default_shrinkage")]
        shrinkage: f64,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
    },
    Logistic {
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    Known,
    Oracle,
}

impl LearnerConfig {
    pub fn gbm() -> Self {
        LearnerConfig::Gbm {
            n_trees: default_n_trees(),
            max_depth: default_gbm_depth(),
            shrinkage: default_shrinkage(),
            min_leaf: default_min_leaf(),
        }
    }

    pub fn cart() -> Self {
        LearnerConfig::Cart {
            max_depth: default_cart_depth(),
            min_leaf: default_min_leaf(),
        }
    }

    pub fn logistic() -> Self {
        LearnerConfig::Logistic {
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerConfig::Ols => "ols",
            LearnerConfig::Ridge { .. } => "ridge",
            LearnerConfig::Cart { .. } => "cart",
            LearnerConfig::Gbm { .. } => "gbm",
            LearnerConfig::Logistic { .. } => "logistic",
            LearnerConfig::Known => "known",
            LearnerConfig::Oracle => "oracle",
        }
    }

    /// Parses `kind` or `kind:key=value,key=value`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, rest) = match s.split_once(':') {
            Some((k, r)) => (k.trim(), Some(r)),
            None => (s.trim(), None),
        };
        let mut obj = Map::new();
        obj.insert("kind".into(), Value::String(kind.to_ascii_lowercase()));
        if let Some(rest) = rest {
            for kv in rest.split(',').filter(|p| !p.trim().is_empty()) {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("learner option '{kv}' is not key=value")))?;
                let v = v.trim();
                let val = if let Ok(i) = v.parse::<u64>() {
                    Value::from(i)
                } else if let Ok(f) = v.parse::<f64>() {
                    Value::from(f)
                } else {
                    Value::String(v.to_string())
                };
                obj.insert(k.trim().to_string(), val);
            }
        }
        serde_json::from_value(Value::Object(obj))
            .map_err(|e| Error::Config(format!("invalid learner '{s}': {e}")))
    }

    pub fn regression_spec(&self, oracle: Option<OracleFn>) -> Result<RegressionLearnerSpec> {
        Ok(match self {
            LearnerConfig::Ols => RegressionLearnerSpec::Ols,
            LearnerConfig::Ridge { lambda } => RegressionLearnerSpec::Ridge { lambda: *lambda },
            LearnerConfig::Cart {
                max_depth,
                min_leaf,
            } => RegressionLearnerSpec::Cart(TreeParams {
                max_depth: *max_depth,
                min_leaf: *min_leaf,
            }),
            LearnerConfig::Gbm {
                n_trees,
                max_depth,
                shrinkage,
                min_leaf,
            } => RegressionLearnerSpec::Gbm(GbmParams {
                n_trees: *n_trees,
                max_depth: *max_depth,
                shrinkage: *shrinkage,
                min_leaf: *min_leaf,
            }),
            LearnerConfig::Oracle => RegressionLearnerSpec::Oracle(oracle.ok_or_else(|| {
                Error::Config("oracle regression needs a known outcome function".into())
            })?),
            other => {
                return Err(Error::Config(format!(
                    "'{}' is not an outcome-regression learner",
                    other.name()
                )))
            }
        })
    }

    pub fn propensity_spec(
        &self,
        clip: f64,
        known: Option<KnownPropensity>,
        oracle: Option<OracleFn>,
    ) -> Result<PropensityLearnerSpec> {
        let kind = match self {
            LearnerConfig::Logistic { max_iter, tol } => PropensityKind::Logistic {
                max_iter: *max_iter,
                tol: *tol,
            },
            LearnerConfig::Cart {
                max_depth,
                min_leaf,
            } => PropensityKind::Cart(TreeParams {
                max_depth: *max_depth,
                min_leaf: *min_leaf,
            }),
            LearnerConfig::Gbm {
                n_trees,
                max_depth,
                shrinkage,
                min_leaf,
            } => PropensityKind::Gbm(GbmParams {
                n_trees: *n_trees,
                max_depth: *max_depth,
                shrinkage: *shrinkage,
                min_leaf: *min_leaf,
            }),
            LearnerConfig::Known => PropensityKind::Known(known.ok_or_else(|| {
                Error::Config("known propensity requested but none supplied".into())
            })?),
            LearnerConfig::Oracle => PropensityKind::Oracle(oracle.ok_or_else(|| {
                Error::Config("oracle propensity needs a known propensity function".into())
            })?),
            other => {
                return Err(Error::Config(format!(
                    "'{}' is not a propensity learner",
                    other.name()
                )))
            }
        };
        let spec = PropensityLearnerSpec { kind, clip };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    #[test]
    fn known_constant_passthrough() {
        let spec = PropensityLearnerSpec::new(PropensityKind::Known(KnownPropensity::Constant(0.9)));
        let m = fit_propensity(&spec, &Matrix::zeros(3, 1), &[1, 1, 1]).unwrap();
        assert_eq!(m.predict(&[123.0]), 0.9);
    }

    #[test]
    fn one_arm_rejected_for_fitted_propensity() {
        let spec = PropensityLearnerSpec::logistic_default();
        let err = fit_propensity(&spec, &Matrix::column(vec![0.0, 1.0, 2.0]), &[1, 1, 1]).unwrap_err();
        assert!(matches!(err, Error::OneArmOnly(ArmScope::Sample)));
    }

    #[test]
    fn predictions_clipped() {
        let x = Matrix::column((0..60).map(|i| i as f64).collect());
        let a: Vec<u8> = (0..60).map(|i| (i >= 30) as u8).collect();
        for spec in [
            PropensityLearnerSpec::cart_default(),
            PropensityLearnerSpec::gbm_default(),
            PropensityLearnerSpec::logistic_default(),
        ] {
            let m = fit_propensity(&spec, &x, &a).unwrap();
            for i in 0..60 {
                let p = m.predict(x.row(i));
                assert!((0.01..=0.99).contains(&p), "{p}");
            }
        }
    }

    #[test]
    fn cart_step_fit() {
        let x = Matrix::column(vec![-1.0, -1.0, 1.0, 1.0]);
        let spec = RegressionLearnerSpec::Cart(TreeParams {
            max_depth: 1,
            min_leaf: 1,
        });
        let m = fit_regression(&spec, &x, &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(m.predict(&[-0.5]), 0.0);
        assert_eq!(m.predict(&[0.5]), 1.0);
    }

    #[test]
    fn too_few_rows_for_tree() {
        let x = Matrix::column(vec![0.0; 5]);
        let err = fit_regression(&RegressionLearnerSpec::cart_default(), &x, &[0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::TooFewSamples(_)));
    }

    #[test]
    fn bad_shrinkage_rejected() {
        let spec = RegressionLearnerSpec::Gbm(GbmParams {
            shrinkage: 1.5,
            ..GbmParams::default()
        });
        assert!(matches!(
            fit_regression(&spec, &Matrix::zeros(40, 1), &[0.0; 40]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn oracle_regression_evaluates_function() {
        let f = OracleFn::new(|r| 3.0 * r[0]);
        let m = fit_regression(&RegressionLearnerSpec::Oracle(f), &Matrix::zeros(2, 1), &[0.0, 0.0]).unwrap();
        assert_eq!(m.predict(&[2.0]), 6.0);
    }

    #[test]
    fn parse_learner_strings() {
        assert_eq!(LearnerConfig::parse("gbm").unwrap(), LearnerConfig::gbm());
        assert_eq!(
            LearnerConfig::parse("gbm:n_trees=50,shrinkage=0.05").unwrap(),
            LearnerConfig::Gbm {
                n_trees: 50,
                max_depth: 2,
                shrinkage: 0.05,
                min_leaf: 10
            }
        );
        assert_eq!(
            LearnerConfig::parse("ridge:lambda=0.5").unwrap(),
            LearnerConfig::Ridge { lambda: 0.5 }
        );
        assert!(LearnerConfig::parse("gbm:depth=3").is_err());
        assert!(LearnerConfig::parse("nnet").is_err());
        assert!(LearnerConfig::Ols.propensity_spec(0.01, None, None).is_err());
        assert!(LearnerConfig::logistic().regression_spec(None).is_err());
    }

    #[test]
    fn gbm_beats_mean_on_structured_target() {
        let mut rng = StreamRng::new(21);
        let rows: Vec<Vec<f64>> = (0..1000)
            .map(|_| vec![rng.uniform() * 4.0 - 2.0, rng.uniform() * 4.0 - 2.0])
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| r[0] * r[0] - 2.0 * r[0] * r[1] + rng.uniform())
            .collect();
        let m = fit_regression(&RegressionLearnerSpec::gbm_default(), &x, &y).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
        let mse = (0..1000)
            .map(|i| (y[i] - m.predict(x.row(i))).powi(2))
            .sum::<f64>()
            / 1000.0;
        assert!(mse < var);
    }
}
