//! Small dense helpers shared by the solvers. Dimensions here are tiny
//! (`n` is typically 2), so everything is plain `DMatrix`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Builds a matrix from row-major nested vectors, checking the shape.
pub fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::invalid(format!("{name}: expected {nrows}x{ncols} matrix")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Row-major nested vectors, the inverse of [`from_rows`].
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `Tr[a * b]` without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// `m ⊗ I_n`.
pub fn kron_identity(m: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows() * n, m.ncols() * n, |i, j| if i % n == j % n { m[(i / n, j / n)] } else { 0.0 })
}

/// Matrix exponential (scaling and squaring with Padé approximants).
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().exp()
}

/// `∫₀^τ e^{Aξ} Q e^{Aᵀξ} dξ` together with `e^{Aτ}`, via Van Loan's block
/// exponential.
pub fn van_loan(a: &DMatrix<f64>, q: &DMatrix<f64>, tau: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&(-a * tau));
    h.view_mut((0, n), (n, n)).copy_from(&(q * tau));
    h.view_mut((n, n), (n, n)).copy_from(&(a.transpose() * tau));
    let e = h.exp();
    let f12 = e.view((0, n), (n, n)).into_owned();
    let f22 = e.view((n, n), (n, n)).into_owned();
    let mut sigma = f22.transpose() * f12;
    symmetrize(&mut sigma);
    (sigma, f22.transpose())
}

/// Linear interpolation weights for `t` on a uniform grid: `(k, w)` such that
/// the value is `(1 - w) * v[k] + w * v[k + 1]`. Clamps to the grid ends.
pub fn grid_bracket(t: f64, step: f64, intervals: usize) -> (usize, f64) {
    let x = (t / step).clamp(0.0, intervals as f64);
    let k = (x.floor() as usize).min(intervals.saturating_sub(1));
    (k, x - k as f64)
}

pub fn lerp_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, w: f64) -> DMatrix<f64> {
    if w == 0.0 {
        return a.clone();
    }
    a * (1.0 - w) + b * w
}

pub fn lerp_vector(a: &DVector<f64>, b: &DVector<f64>, w: f64) -> DVector<f64> {
    if w == 0.0 {
        return a.clone();
    }
    a * (1.0 - w) + b * w
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues().min()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn van_loan_scalar_matches_closed_form() {
        let a = DMatrix::from_element(1, 1, -0.7);
        let q = DMatrix::from_element(1, 1, 2.5);
        let (sigma, phi) = van_loan(&a, &q, 1.3);
        let expected = 2.5 / (2.0 * -0.7) * ((2.0 * -0.7 * 1.3_f64).exp() - 1.0);
        assert!((sigma[(0, 0)] - expected).abs() < 1e-13);
        assert!((phi[(0, 0)] - (-0.7 * 1.3_f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn kron_identity_places_blocks() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let k = kron_identity(&m, 2);
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(1, 1)], 1.0);
        assert_eq!(k[(0, 1)], 0.0);
        assert_eq!(k[(0, 2)], 2.0);
        assert_eq!(k[(3, 1)], 3.0);
        assert_eq!(k[(3, 3)], 4.0);
    }

    #[test]
    fn bracket_clamps_to_last_interval() {
        assert_eq!(grid_bracket(10.0, 0.5, 20), (19, 1.0));
        assert_eq!(grid_bracket(-1.0, 0.5, 20), (0, 0.0));
        let (k, w) = grid_bracket(1.25, 0.5, 20);
        assert_eq!(k, 2);
        assert!((w - 0.5).abs() < 1e-15);
    }
}
