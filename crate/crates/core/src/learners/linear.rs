use nalgebra::{DMatrix, DVector};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;

/// Fitted affine predictor `intercept + coef' x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }
}

/// Least squares with an unpenalized intercept and ridge penalty `lambda`
/// on the slopes. `lambda == 0` is ordinary least squares.
pub fn fit_linear(x: &Matrix, y: &[f64], lambda: f64) -> Result<LinearModel> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::LengthMismatch {
            what: "regression target",
            got: y.len(),
            expected: n,
        });
    }
    if n < 2 {
        return Err(Error::TooFewSamples(format!("linear fit needs 2 rows, got {n}")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("ridge penalty must be >= 0, got {lambda}")));
    }
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    if p == 0 {
        return Ok(LinearModel {
            intercept: y_mean,
            coef: Vec::new(),
        });
    }
    let x_mean: Vec<f64> = (0..p)
        .map(|c| (0..n).map(|r| x.get(r, c)).sum::<f64>() / nf)
        .collect();

    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for r in 0..n {
        let row = x.row(r);
        let yc = y[r] - y_mean;
        for i in 0..p {
            let xi = row[i] - x_mean[i];
            xty[i] += xi * yc;
            for j in 0..=i {
                xtx[(i, j)] += xi * (row[j] - x_mean[j]);
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            xtx[(j, i)] = xtx[(i, j)];
        }
    }

    if lambda == 0.0 {
        let (eig, _) = symmetric_eigen(&xtx);
        let max = eig.iter().cloned().fold(0.0f64, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(max > 0.0) || min <= 1e-12 * max {
            return Err(Error::SingularDesign);
        }
    }
    for i in 0..p {
        xtx[(i, i)] += lambda;
    }
    let beta = xtx.cholesky().ok_or(Error::SingularDesign)?.solve(&xty);
    let coef: Vec<f64> = beta.iter().cloned().collect();
    let intercept = y_mean - coef.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
    Ok(LinearModel { intercept, coef })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    #[test]
    fn exact_line() {
        let x = Matrix::column(vec![-1.0, 0.0, 1.0, 2.0, 3.5]);
        let y: Vec<f64> = x.col(0).iter().map(|v| 2.0 * v).collect();
        let m = fit_linear(&x, &y, 0.0).unwrap();
        assert!((m.coef[0] - 2.0).abs() < 1e-12);
        assert!(m.intercept.abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_is_singular() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        assert!(matches!(
            fit_linear(&x, &[1.0, 2.0, 3.0], 0.0),
            Err(Error::SingularDesign)
        ));
        // a ridge penalty makes it solvable
        assert!(fit_linear(&x, &[1.0, 2.0, 3.0], 1.0).is_ok());
    }

    #[test]
    fn no_covariates_gives_mean() {
        let m = fit_linear(&Matrix::zeros(4, 0), &[1.0, 2.0, 3.0, 6.0], 0.0).unwrap();
        assert_eq!(m.intercept, 3.0);
    }

    #[test]
    fn normal_equation_residual_and_ridge_limit() {
        let mut rng = StreamRng::new(2);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| rng.uniform() * 2.0 - 1.0).collect())
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| 1.0 + r[0] - 3.0 * r[2] + rng.uniform() - 0.5)
            .collect();
        let ols = fit_linear(&x, &y, 0.0).unwrap();
        // X'(y - Xb) = 0 with intercept column
        let resid: Vec<f64> = (0..50).map(|i| y[i] - ols.predict(x.row(i))).collect();
        let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(resid.iter().sum::<f64>().abs() < 1e-8 * scale * 50.0);
        for c in 0..3 {
            let s: f64 = (0..50).map(|i| x.get(i, c) * resid[i]).sum();
            assert!(s.abs() < 1e-8 * scale * 50.0);
        }
        let ridge = fit_linear(&x, &y, 1e-10).unwrap();
        for c in 0..3 {
            assert!((ridge.coef[c] - ols.coef[c]).abs() < 1e-6);
        }
        assert!((ridge.intercept - ols.intercept).abs() < 1e-6);
    }
}
