use nalgebra::{DMatrix, DVector};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::linalg::cholesky_spd;

/// Logistic regression fitted by Newton's method with step halving.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    /// Intercept first, then one slope per covariate.
    pub coef: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Euclidean norm of the mean-score gradient at the returned iterate.
    pub grad_norm: f64,
    /// Mean log-likelihood after the start point and every accepted step.
    pub loglik_trace: Vec<f64>,
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl LogisticModel {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.coef[0] + self.coef[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(row))
    }
}

fn eta(coef: &DVector<f64>, row: &[f64]) -> f64 {
    coef[0] + row.iter().enumerate().map(|(j, x)| coef[j + 1] * x).sum::<f64>()
}

fn mean_loglik(x: &Matrix, a: &[f64], coef: &DVector<f64>) -> f64 {
    let n = x.nrows();
    (0..n)
        .map(|i| {
            let t = eta(coef, x.row(i));
            a[i] * t - softplus(t)
        })
        .sum::<f64>()
        / n as f64
}

pub fn fit_logistic(x: &Matrix, a: &[f64], max_iter: usize, tol: f64) -> Result<LogisticModel> {
    let n = x.nrows();
    if a.len() != n {
        return Err(Error::LengthMismatch {
            what: "treatment",
            got: a.len(),
            expected: n,
        });
    }
    if n < 2 {
        return Err(Error::TooFewSamples(format!("logistic fit needs 2 rows, got {n}")));
    }
    let d = x.ncols() + 1;
    let nf = n as f64;
    let mut coef = DVector::<f64>::zeros(d);
    // start at the intercept-only MLE
    let mean_a = a.iter().sum::<f64>() / nf;
    coef[0] = (mean_a / (1.0 - mean_a)).ln();
    if !coef[0].is_finite() {
        coef[0] = 0.0;
    }
    let mut ll = mean_loglik(x, a, &coef);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;

    for it in 0..=max_iter {
        let mut grad = DVector::<f64>::zeros(d);
        let mut hess = DMatrix::<f64>::zeros(d, d);
        for i in 0..n {
            let row = x.row(i);
            let p = sigmoid(eta(&coef, row));
            let w = p * (1.0 - p);
            let r = a[i] - p;
            grad[0] += r;
            hess[(0, 0)] += w;
            for j in 0..row.len() {
                grad[j + 1] += r * row[j];
                hess[(j + 1, 0)] += w * row[j];
                for k in 0..=j {
                    hess[(j + 1, k + 1)] += w * row[j] * row[k];
                }
            }
        }
        for j in 0..d {
            for k in 0..j {
                hess[(k, j)] = hess[(j, k)];
            }
        }
        grad /= nf;
        hess /= nf;
        grad_norm = grad.norm();
        iterations = it;
        if grad_norm <= tol {
            converged = true;
            break;
        }
        if it == max_iter {
            break;
        }
        let step = match cholesky_spd(&hess) {
            Ok(c) => c.solve(&grad),
            Err(_) => break,
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &coef + &step * scale;
            let cand_ll = mean_loglik(x, a, &cand);
            if cand_ll >= ll {
                coef = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(ll);
    }

    Ok(LogisticModel {
        coef: coef.iter().cloned().collect(),
        converged,
        iterations,
        grad_norm,
        loglik_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_independent_gives_intercept_only() {
        // within each covariate level half the units are treated
        let x = Matrix::column(vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0]);
        let a = vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let m = fit_logistic(&x, &a, 100, 1e-10).unwrap();
        assert!(m.converged);
        for i in 0..10 {
            assert!((m.predict(x.row(i)) - 0.5).abs() < 1e-6);
        }
        assert!(m.coef[1].abs() < 1e-6);
    }

    #[test]
    fn separation_reports_non_convergence() {
        let x = Matrix::column(vec![-2.0, -1.0, 1.0, 2.0]);
        let a = vec![0.0, 0.0, 1.0, 1.0];
        let m = fit_logistic(&x, &a, 25, 1e-12).unwrap();
        assert!(!m.converged);
        assert!(m.predict(&[2.0]) > 0.99);
    }

    #[test]
    fn loglik_non_decreasing() {
        let x = Matrix::from_rows(
            &(0..40)
                .map(|i| vec![(i as f64 * 0.37).sin(), (i % 3) as f64])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let a: Vec<f64> = (0..40).map(|i| ((i * 7 + 3) % 5 < 2) as u8 as f64).collect();
        let m = fit_logistic(&x, &a, 100, 1e-12).unwrap();
        for w in m.loglik_trace.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }
}
