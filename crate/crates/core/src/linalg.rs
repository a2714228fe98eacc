//! Small dense helpers on top of nalgebra for the symmetric matrices used throughout.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest condition number accepted when inverting a metric tensor.
pub const MAX_CONDITION: f64 = 1e12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix in ascending order, with matching eigenvector columns.
pub fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Checks that a symmetric matrix is positive definite with condition number below
/// [`MAX_CONDITION`]; `what` names the matrix in the error.
pub fn check_positive_definite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateMetric(format!("{what} has non-finite entries")));
    }
    let ev = sym_eigenvalues(m);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if hi <= 0.0 || lo < hi / MAX_CONDITION {
        return Err(Error::DegenerateMetric(format!(
            "{what}: eigenvalues in [{lo:e}, {hi:e}] (condition guard {MAX_CONDITION:e})"
        )));
    }
    Ok(())
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky factor,
/// guarded by [`check_positive_definite`].
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    check_positive_definite(m, what)?;
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateMetric(format!("{what}: Cholesky factorization failed")))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Solves `m x = b` for symmetric positive-definite `m` (same guard as [`spd_inverse`]).
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    check_positive_definite(m, what)?;
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateMetric(format!("{what}: Cholesky factorization failed")))?;
    Ok(chol.solve(b))
}

/// Eigenvalues (ascending) of the symmetric-definite pencil `a v = λ b v`.
///
/// With `b = R Rᵀ` (Cholesky), the pencil is similar to the symmetric matrix
/// `R⁻¹ a R⁻ᵀ`, which is what gets diagonalized.
pub fn generalized_sym_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_positive_definite(b, "generalized eigenproblem right-hand matrix")?;
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateMetric("Cholesky factorization failed".into()))?;
    let r = chol.l();
    let a_sym = symmetrize(a);
    // Y = R⁻¹ A, then C = R⁻¹ Yᵀ = R⁻¹ A R⁻ᵀ.
    let y = r
        .solve_lower_triangular(&a_sym)
        .ok_or_else(|| Error::DegenerateMetric("triangular solve failed".into()))?;
    let c = r
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::DegenerateMetric("triangular solve failed".into()))?;
    Ok(sym_eigenvalues(&symmetrize(&c)))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generalized_matches_direct_product() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, -1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.7]);
        let gen = generalized_sym_eigenvalues(&a, &b).unwrap();
        let direct = b.clone().try_inverse().unwrap() * &a;
        let mut ev: Vec<f64> = direct
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .collect();
        ev.sort_by(f64::total_cmp);
        for (x, y) in gen.iter().zip(&ev) {
            assert!((x - y).abs() < 1e-12, "{gen:?} vs {ev:?}");
        }
    }

    #[test]
    fn ill_conditioned_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14]);
        assert!(matches!(spd_inverse(&m, "m"), Err(Error::DegenerateMetric(_))));
    }

    #[test]
    fn eigen_sorted_ascending() {
        let m = DMatrix::from_row_slice(3, 3, &[3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        let (v, vecs) = sym_eigen(&m);
        assert_eq!(v, vec![1.0, 2.0, 3.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-15);
    }
}
