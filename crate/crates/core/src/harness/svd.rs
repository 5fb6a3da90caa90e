//! Spectrum diagnostics of a fully observed matrix.

use nalgebra::DMatrix;
use serde::Serialize;

use super::r_squared;
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor_store::{Mask, PartialTensor};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SvdReport {
    pub singular_values: Vec<f64>,
    /// `(r, Σ_{k<=r} σ_k² / Σ σ_k²)` per requested rank.
    pub explained_variance: Vec<(usize, f64)>,
    /// `(r, R²)` of the rank-`r` truncation on the missing cells of the
    /// pattern, when a pattern is given.
    pub truncated_r2: Vec<(usize, f64)>,
    /// Share of the rank-1 truncation's energy carried by its row means:
    /// `(1ᵀ v₁)² / n`. One when every row of the truncation is constant.
    pub row_constancy: f64,
}

/// Needs a fully observed matrix. Ranks beyond `min(m, n)` are rejected.
pub fn svd_report(t: &PartialTensor, ranks: &[usize], pattern: Option<&Mask>) -> Result<SvdReport> {
    if t.depth() != 1 || t.mask().count_observed() != t.rows() * t.cols() {
        return Err(Error::InvalidParameter("svd_report needs a fully observed matrix".into()));
    }
    let y = t.coordinate(0);
    let (m, n) = y.shape();
    if let Some(&r) = ranks.iter().find(|&&r| r == 0 || r > m.min(n)) {
        return Err(Error::InvalidParameter(format!("rank {r} outside 1..={}", m.min(n))));
    }
    let svd = linalg::svd(&y);
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    let energy: f64 = s.iter().map(|x| x * x).sum();
    let explained_variance = ranks
        .iter()
        .map(|&r| {
            let head: f64 = s[..r].iter().map(|x| x * x).sum();
            (r, if energy > 0.0 { head / energy } else { f64::NAN })
        })
        .collect();
    let truncated_r2 = match pattern {
        None => Vec::new(),
        Some(mask) => {
            if mask.shape() != (m, n) {
                return Err(Error::ShapeMismatch {
                    expected: (m, n),
                    got: mask.shape(),
                });
            }
            let missing = mask.complement();
            ranks
                .iter()
                .map(|&r| {
                    let approx = truncated(&svd, r, m, n);
                    Ok((r, r_squared(&approx, &y, &missing)?))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let v1 = svd.v_t.row(0);
    let row_constancy = if s[0] > 0.0 { v1.sum().powi(2) / n as f64 } else { f64::NAN };
    Ok(SvdReport {
        singular_values: s,
        explained_variance,
        truncated_r2,
        row_constancy,
    })
}

fn truncated(svd: &linalg::Svd, r: usize, m: usize, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m, n);
    for k in 0..r {
        out += svd.u.column(k) * svd.v_t.row(k) * svd.singular_values[k];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_flat_spectrum() {
        let t = PartialTensor::from_dense_matrix(&DMatrix::identity(5, 5)).unwrap();
        let r = svd_report(&t, &[1, 2, 5], None).unwrap();
        assert!(r.singular_values.iter().all(|s| (s - 1.0).abs() < 1e-12));
        for (k, (rank, ev)) in r.explained_variance.iter().enumerate() {
            assert_eq!(*rank, [1, 2, 5][k]);
            assert!((ev - *rank as f64 / 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_rows_score_one() {
        let a = [1.0, -2.0, 0.5];
        let t = PartialTensor::from_dense_matrix(&DMatrix::from_fn(3, 4, |i, _| a[i])).unwrap();
        let r = svd_report(&t, &[1], Some(&Mask::from_fn(3, 4, |i, j| i == 0 || j == 0))).unwrap();
        assert!((r.explained_variance[0].1 - 1.0).abs() < 1e-12);
        assert!((r.row_constancy - 1.0).abs() < 1e-12);
        assert!((r.truncated_r2[0].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_partial_input_and_bad_ranks() {
        let t = PartialTensor::from_matrix(&DMatrix::identity(2, 2), Mask::from_fn(2, 2, |i, j| i == j)).unwrap();
        assert!(svd_report(&t, &[1], None).is_err());
        let t = PartialTensor::from_dense_matrix(&DMatrix::identity(2, 2)).unwrap();
        assert!(svd_report(&t, &[3], None).is_err());
    }
}
