//! Dense kernels shared by the model and estimator code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const CONDITION_WARNING: f64 = 1e12;

/// Inverse via LU with partial pivoting. Logs a warning when the 1-norm
/// condition number exceeds 1e12.
pub fn invert(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::InvalidParameter(format!(
            "cannot invert a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let inv = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::InvalidModel("matrix is singular".into()))?;
    let cond = one_norm(m) * one_norm(&inv);
    if !cond.is_finite() || cond > CONDITION_WARNING {
        log::warn!("ill-conditioned inverse: 1-norm condition number {cond:.3e}");
    }
    Ok(inv)
}

pub fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Thin SVD with singular values in descending order.
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn svd(m: &DMatrix<f64>) -> Svd {
    let svd = m.clone().svd(true, true);
    let mut u = svd.u.expect("u requested");
    let mut v_t = svd.v_t.expect("v_t requested");
    let mut s = svd.singular_values;
    // nalgebra sorts already; enforce it so callers can rely on the order.
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    if order.iter().enumerate().any(|(k, &o)| k != o) {
        let u0 = u.clone();
        let v0 = v_t.clone();
        let s0 = s.clone();
        for (k, &o) in order.iter().enumerate() {
            u.set_column(k, &u0.column(o));
            v_t.set_row(k, &v0.row(o));
            s[k] = s0[o];
        }
    }
    Svd {
        u,
        singular_values: s,
        v_t,
    }
}

/// Minimum-norm least-squares solution of `a x = b` through the
/// pseudoinverse. Singular values below `rcond * sigma_max` are dropped.
/// Returns the solution and the numerical rank used.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> (DVector<f64>, usize) {
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return (DVector::zeros(n), 0);
    }
    let Svd {
        u,
        singular_values: s,
        v_t,
    } = svd(a);
    let cutoff = rcond * s.get(0).copied().unwrap_or(0.0);
    let utb = u.transpose() * b;
    let mut x = DVector::zeros(n);
    let mut rank = 0;
    for k in 0..s.len() {
        if s[k] > cutoff && s[k] > 0.0 {
            rank += 1;
            let coef = utb[k] / s[k];
            x += v_t.row(k).transpose() * coef;
        }
    }
    (x, rank)
}

/// Moore-Penrose pseudoinverse with the same relative cutoff as
/// [`lstsq_min_norm`]. Returns the pseudoinverse and the rank used.
pub fn pseudoinverse(a: &DMatrix<f64>, rcond: f64) -> (DMatrix<f64>, usize) {
    let (m, n) = a.shape();
    let mut out = DMatrix::zeros(n, m);
    if m == 0 || n == 0 {
        return (out, 0);
    }
    let Svd {
        u,
        singular_values: s,
        v_t,
    } = svd(a);
    let cutoff = rcond * s[0];
    let mut rank = 0;
    for k in 0..s.len() {
        if s[k] > cutoff && s[k] > 0.0 {
            rank += 1;
            out += v_t.row(k).transpose() * u.column(k).transpose() / s[k];
        }
    }
    (out, rank)
}

/// Singular value thresholding: shrinks every singular value by `tau`,
/// flooring at zero. Returns the result and its nuclear norm.
pub fn singular_value_threshold(m: &DMatrix<f64>, tau: f64) -> (DMatrix<f64>, f64) {
    let Svd {
        u,
        singular_values: s,
        v_t,
    } = svd(m);
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    let mut nuclear = 0.0;
    for k in 0..s.len() {
        let shrunk = (s[k] - tau).max(0.0);
        if shrunk > 0.0 {
            nuclear += shrunk;
            out += u.column(k) * v_t.row(k) * shrunk;
        }
    }
    (out, nuclear)
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().iter().sum()
}

/// Best rank-`r` approximation (truncated SVD).
pub fn truncate_rank(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let Svd {
        u,
        singular_values: s,
        v_t,
    } = svd(m);
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for k in 0..r.min(s.len()) {
        out += u.column(k) * v_t.row(k) * s[k];
    }
    out
}

/// Symmetric square root factor `F` with `F Fᵀ = m` for a positive
/// semidefinite matrix; negative eigenvalues from rounding are clamped.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut f = eig.eigenvectors.clone();
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        let scale = lambda.max(0.0).sqrt();
        f.column_mut(k).scale_mut(scale);
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let (out, nuc) = singular_value_threshold(&m, 1.0);
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        assert!((out - expected).amax() < 1e-12);
        assert!((nuc - 2.0).abs() < 1e-12);
    }

    #[test]
    fn min_norm_solution_of_underdetermined_system() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0]);
        let (x, rank) = lstsq_min_norm(&a, &b, 1e-10);
        assert_eq!(rank, 1);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psd_factor_reproduces_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let f = psd_factor(&m);
        assert!((&f * f.transpose() - m).amax() < 1e-12);
    }

    #[test]
    fn svd_is_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 3.0]);
        let s = svd(&m).singular_values;
        assert!(s[0] >= s[1] && s[1] >= s[2]);
        assert!((s[0] - 5.0).abs() < 1e-12);
    }
}
