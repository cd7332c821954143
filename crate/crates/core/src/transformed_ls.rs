//! Least squares on cross-fitted transformed variables with a sandwich
//! variance estimate.
//!
//! Given transformed responses `z_i` and regressors `v_i`,
//!
//! ```text
//! beta  = (sum v v')^-1 (sum v z)
//! gram  = N^-1 sum v v'
//! meat  = N^-1 sum e^2 v v',      e_i = z_i - v_i' beta
//! sigma = gram^-1 meat gram^-1
//! ```
//!
//! The same estimate serves both the correctly specified and the
//! sub-optimal-transformation settings; only the interpretation differs.

use nalgebra::{DMatrix, DVector};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::linalg::{linear_solve_spd, linear_solve_spd_vec, symmetric_eigen};

#[derive(Debug, Clone)]
pub struct TransformedSample {
    pub z_hat: Vec<f64>,
    pub v_hat: Matrix,
    pub fold_of: Vec<usize>,
}

impl TransformedSample {
    pub fn new(z_hat: Vec<f64>, v_hat: Matrix, fold_of: Vec<usize>) -> Result<Self> {
        let n = z_hat.len();
        if v_hat.nrows() != n {
            return Err(Error::LengthMismatch {
                what: "transformed regressors",
                got: v_hat.nrows(),
                expected: n,
            });
        }
        if fold_of.len() != n {
            return Err(Error::LengthMismatch {
                what: "fold assignment",
                got: fold_of.len(),
                expected: n,
            });
        }
        for (row, z) in z_hat.iter().enumerate() {
            if !z.is_finite() {
                return Err(Error::NonFinite { row, col: 0 });
            }
        }
        for row in 0..n {
            if let Some(c) = v_hat.row(row).iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row, col: c + 1 });
            }
        }
        Ok(TransformedSample {
            z_hat,
            v_hat,
            fold_of,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LsEstimate {
    pub beta_hat: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    pub residuals: Vec<f64>,
}

pub fn solve_transformed_ls(t: &TransformedSample) -> Result<LsEstimate> {
    let n = t.z_hat.len();
    let d = t.v_hat.ncols();
    if n == 0 || d == 0 {
        return Err(Error::TooFewSamples("empty transformed sample".into()));
    }
    let nf = n as f64;

    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut cross = DVector::<f64>::zeros(d);
    for i in 0..n {
        let v = t.v_hat.row(i);
        for r in 0..d {
            cross[r] += v[r] * t.z_hat[i];
            for c in 0..=r {
                gram[(r, c)] += v[r] * v[c];
            }
        }
    }
    for r in 0..d {
        for c in 0..r {
            gram[(c, r)] = gram[(r, c)];
        }
    }
    gram /= nf;
    cross /= nf;

    let trace = gram.trace();
    let (eig, _) = symmetric_eigen(&gram);
    let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(trace > 0.0) || min_eig <= 1e-10 * trace / d as f64 {
        return Err(Error::SingularGram);
    }

    let beta_hat = linear_solve_spd_vec(&gram, &cross).map_err(|_| Error::SingularGram)?;

    let residuals: Vec<f64> = (0..n)
        .map(|i| {
            let v = t.v_hat.row(i);
            t.z_hat[i] - (0..d).map(|r| v[r] * beta_hat[r]).sum::<f64>()
        })
        .collect();

    let mut meat = DMatrix::<f64>::zeros(d, d);
    for (i, e) in residuals.iter().enumerate() {
        let v = t.v_hat.row(i);
        let e2 = e * e;
        for r in 0..d {
            for c in 0..=r {
                meat[(r, c)] += e2 * v[r] * v[c];
            }
        }
    }
    for r in 0..d {
        for c in 0..r {
            meat[(c, r)] = meat[(r, c)];
        }
    }
    meat /= nf;

    // gram^-1 meat gram^-1 via two solves
    let left = linear_solve_spd(&gram, &meat).map_err(|_| Error::SingularGram)?;
    let sigma = linear_solve_spd(&gram, &left.transpose()).map_err(|_| Error::SingularGram)?;
    let sigma_hat = (&sigma + sigma.transpose()) * 0.5;

    Ok(LsEstimate {
        beta_hat,
        sigma_hat,
        gram,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use proptest::prelude::*;

    fn sample(z: Vec<f64>, rows: Vec<Vec<f64>>) -> TransformedSample {
        let n = z.len();
        TransformedSample::new(z, Matrix::from_rows(&rows).unwrap(), vec![0; n]).unwrap()
    }

    #[test]
    fn exact_fit() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0, i as f64 * 0.5 - 1.0]).collect();
        let z: Vec<f64> = rows.iter().map(|r| r[0] + 2.0 * r[1]).collect();
        let est = solve_transformed_ls(&sample(z, rows)).unwrap();
        assert!((est.beta_hat[0] - 1.0).abs() < 1e-12);
        assert!((est.beta_hat[1] - 2.0).abs() < 1e-12);
        assert!(est.residuals.iter().all(|e| e.abs() < 1e-12));
        assert!(est.sigma_hat.amax() < 1e-20);
    }

    #[test]
    fn intercept_only() {
        let z = vec![1.0, 2.0, 4.0, 7.0];
        let est = solve_transformed_ls(&sample(z.clone(), vec![vec![1.0]; 4])).unwrap();
        let mean = 3.5;
        assert!((est.beta_hat[0] - mean).abs() < 1e-14);
        let ms = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!((est.sigma_hat[(0, 0)] - ms).abs() < 1e-12);
    }

    /// Normal equations solved by explicit 3x3 cofactor inversion.
    fn brute_force_beta(z: &[f64], rows: &[Vec<f64>]) -> [f64; 3] {
        let mut m = [[0.0; 3]; 3];
        let mut b = [0.0; 3];
        for (zi, v) in z.iter().zip(rows) {
            for r in 0..3 {
                b[r] += v[r] * zi;
                for c in 0..3 {
                    m[r][c] += v[r] * v[c];
                }
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        let mut inv = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
                let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
                inv[r][c] = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
            }
        }
        let mut beta = [0.0; 3];
        for r in 0..3 {
            beta[r] = (0..3).map(|c| inv[r][c] * b[c]).sum();
        }
        beta
    }

    #[test]
    fn random_instance_matches_cofactor_solve() {
        let mut rng = StreamRng::new(5);
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..20)
                .map(|_| (0..3).map(|_| rng.uniform() * 4.0 - 2.0).collect())
                .collect();
            let z: Vec<f64> = (0..20).map(|_| rng.uniform() * 10.0 - 5.0).collect();
            let est = solve_transformed_ls(&sample(z.clone(), rows.clone())).unwrap();
            let bf = brute_force_beta(&z, &rows);
            for r in 0..3 {
                assert!((est.beta_hat[r] - bf[r]).abs() < 1e-10);
            }
        }
    }

    /// Textbook HC0 estimator: (X'X)^-1 X' diag(e^2) X (X'X)^-1 scaled by N.
    #[test]
    fn matches_textbook_hc0() {
        let mut rng = StreamRng::new(9);
        let n = 40;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![1.0, rng.uniform() * 3.0, rng.uniform() - 0.5])
            .collect();
        let z: Vec<f64> = rows
            .iter()
            .map(|r| 0.5 + r[1] - 2.0 * r[2] + (rng.uniform() - 0.5) * r[1])
            .collect();
        let est = solve_transformed_ls(&sample(z.clone(), rows.clone())).unwrap();

        let x = DMatrix::from_fn(n, 3, |i, j| rows[i][j]);
        let y = DVector::from_vec(z);
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        let beta = &xtx_inv * x.transpose() * &y;
        let e = &y - &x * &beta;
        let mut omega = DMatrix::zeros(n, n);
        for i in 0..n {
            omega[(i, i)] = e[i] * e[i];
        }
        let hc0 = &xtx_inv * x.transpose() * omega * &x * &xtx_inv;
        let scaled = hc0 * n as f64;
        for r in 0..3 {
            assert!((est.beta_hat[r] - beta[r]).abs() < 1e-10);
            for c in 0..3 {
                assert!((est.sigma_hat[(r, c)] - scaled[(r, c)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_gram() {
        let rows = vec![vec![1.0, 2.0]; 5];
        let err = solve_transformed_ls(&sample(vec![1.0; 5], rows)).unwrap_err();
        assert!(matches!(err, Error::SingularGram));
    }

    proptest! {
        #[test]
        fn invariants(seed in any::<u64>(), scale in 0.1f64..10.0, col in 0usize..3) {
            let mut rng = StreamRng::new(seed);
            let n = 30;
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.uniform() * 2.0 - 1.0).collect())
                .collect();
            let z: Vec<f64> = (0..n).map(|_| rng.uniform() * 4.0 - 2.0).collect();
            let est = solve_transformed_ls(&sample(z.clone(), rows.clone())).unwrap();

            // residual orthogonality
            let zscale = z.iter().map(|v| v.abs()).fold(0.0, f64::max);
            for r in 0..3 {
                let s: f64 = rows.iter().zip(&est.residuals).map(|(v, e)| v[r] * e).sum();
                prop_assert!(s.abs() <= 1e-8 * n as f64 * zscale);
            }
            // sandwich PSD
            let (eig, _) = symmetric_eigen(&est.sigma_hat);
            prop_assert!(eig.iter().all(|&l| l >= -1e-10));

            // column scaling equivariance
            let scaled: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r[col] *= scale;
                    r
                })
                .collect();
            let est2 = solve_transformed_ls(&sample(z.clone(), scaled.clone())).unwrap();
            prop_assert!((est2.beta_hat[col] * scale - est.beta_hat[col]).abs() < 1e-9);
            for i in 0..n {
                let f1: f64 = (0..3).map(|r| rows[i][r] * est.beta_hat[r]).sum();
                let f2: f64 = (0..3).map(|r| scaled[i][r] * est2.beta_hat[r]).sum();
                prop_assert!((f1 - f2).abs() < 1e-9);
            }
        }
    }
}
