//! Small dense helpers shared by the recursions.

use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Replace `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetrized(mut m: Matrix) -> Matrix {
    symmetrize(&mut m);
    m
}

/// Largest `|m_ij - m_ji|`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut vals: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    vals
}

pub fn min_eigenvalue(m: &Matrix) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Spectral condition number of a symmetric matrix; infinite when it is not
/// positive definite.
pub fn sym_condition(m: &Matrix) -> f64 {
    let vals = sym_eigenvalues(m);
    match (vals.first(), vals.last()) {
        (Some(&lo), Some(&hi)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Rebuild a symmetric matrix with its negative eigenvalues set to zero.
pub fn clamp_psd(m: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    symmetrized(v * Matrix::from_diagonal(&vals) * v.transpose())
}

/// Symmetric square root `S^{1/2}` of a PSD matrix, used to color white noise.
/// Works for singular covariances (zero modes map to zero).
pub fn psd_sqrt(m: &Matrix) -> Matrix {
    if m.nrows() == 0 {
        return m.clone();
    }
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|v| libm::sqrt(v.max(0.0)));
    let v = &eig.eigenvectors;
    v * Matrix::from_diagonal(&vals) * v.transpose()
}

pub fn trace_product(a: &Matrix, b: &Matrix) -> f64 {
    // tr(AB) = Σ_ij a_ij b_ji
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

pub fn cholesky(m: &Matrix) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

/// `A^0, A^1, ..., A^count` for a square `A`.
pub fn powers(a: &Matrix, count: usize) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(count + 1);
    out.push(Matrix::identity(a.nrows(), a.ncols()));
    for k in 1..=count {
        let next = a * &out[k - 1];
        out.push(next);
    }
    out
}

/// `‖A‖_F`.
pub fn frobenius(m: &Matrix) -> f64 {
    libm::sqrt(m.iter().map(|v| v * v).sum())
}

/// `‖A‖_∞` (maximum absolute row sum).
pub fn inf_norm(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Pairwise summation; the result depends only on the order of `values`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        n if n <= 8 => values.iter().sum(),
        n => {
            let (lo, hi) = values.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_sqrt_squares_back() {
        let m = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = psd_sqrt(&m);
        assert!((&s * &s - &m).abs().max() < 1e-12);
    }

    #[test]
    fn psd_sqrt_of_zero_is_zero() {
        let s = psd_sqrt(&Matrix::zeros(3, 3));
        assert_eq!(s, Matrix::zeros(3, 3));
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let v: Vec<f64> = (1..=100).map(|k| k as f64).collect();
        assert_eq!(pairwise_sum(&v), 5050.0);
    }

    #[test]
    fn condition_of_singular_is_infinite() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(sym_condition(&m) > 1e12);
    }
}
