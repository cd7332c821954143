//! Small dense symmetric systems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= 1e-10 * scale))
}

/// Cholesky factor of a symmetric positive definite matrix. If the plain
/// factorization fails, retries once with `1e-12 * trace * I` added.
pub fn cholesky_spd(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if !m.is_square() || !is_symmetric(m) {
        return Err(Error::NotSpd);
    }
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let jitter = 1e-12 * m.trace().abs();
    let mut shifted = m.clone();
    for i in 0..m.nrows() {
        shifted[(i, i)] += jitter;
    }
    shifted.cholesky().ok_or(Error::NotSpd)
}

/// Solves `m x = b` for SPD `m`; `b` may hold several right-hand sides.
pub fn linear_solve_spd(m: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != m.nrows() {
        return Err(Error::LengthMismatch {
            what: "right-hand side",
            got: b.nrows(),
            expected: m.nrows(),
        });
    }
    let chol = cholesky_spd(m)?;
    Ok(chol.solve(b))
}

pub fn linear_solve_spd_vec(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = cholesky_spd(m)?;
    Ok(chol.solve(b))
}

/// Eigenvalues and eigenvectors of a symmetric matrix.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let e = m.clone().symmetric_eigen();
    (e.eigenvalues, e.eigenvectors)
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix and its numerical rank.
/// Eigenvalues at or below `rel_tol * max_eigenvalue` are treated as zero.
pub fn symmetric_pinv(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let (vals, vecs) = symmetric_eigen(m);
    let max = vals.iter().cloned().fold(0.0f64, f64::max);
    let n = m.nrows();
    let mut pinv = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (k, &lambda) in vals.iter().enumerate() {
        if max > 0.0 && lambda > rel_tol * max {
            rank += 1;
            let v = vecs.column(k);
            pinv += (v * v.transpose()) / lambda;
        }
    }
    (pinv, rank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    #[test]
    fn identity_and_diagonal() {
        let i = DMatrix::<f64>::identity(3, 3);
        let b = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 3.0]);
        assert_eq!(linear_solve_spd(&i, &b).unwrap(), b);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let x = linear_solve_spd_vec(&d, &DVector::from_vec(vec![2.0, 4.0])).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_spd_residual() {
        let mut rng = StreamRng::new(11);
        for _ in 0..20 {
            let a = DMatrix::from_fn(5, 5, |_, _| rng.uniform() * 2.0 - 1.0);
            let m = a.transpose() * &a + DMatrix::identity(5, 5);
            let b = DMatrix::from_fn(5, 2, |_, _| rng.uniform());
            let x = linear_solve_spd(&m, &b).unwrap();
            let r = (&m * &x - &b).norm();
            assert!(r <= 1e-8 * b.norm(), "residual {r}");
        }
    }

    #[test]
    fn rejects_non_spd() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(linear_solve_spd_vec(&m, &DVector::zeros(2)), Err(Error::NotSpd)));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(cholesky_spd(&asym), Err(Error::NotSpd)));
    }

    #[test]
    fn pinv_of_rank_one() {
        let v = DVector::from_vec(vec![1.0, 1.0]);
        let m = &v * v.transpose();
        let (p, rank) = symmetric_pinv(&m, 1e-10);
        assert_eq!(rank, 1);
        // pinv(v v') = v v' / |v|^4
        assert!((p[(0, 0)] - 0.25).abs() < 1e-12 && (p[(0, 1)] - 0.25).abs() < 1e-12);
    }
}
