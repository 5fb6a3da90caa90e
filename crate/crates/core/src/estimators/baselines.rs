//! Mean, two-way fixed effect and cosine collaborative filtering estimators.

use nalgebra::DMatrix;

use super::{from_surface, per_entry, Direction, EntryDiagnostic, EntryOutcome, EstimatorConfig, ImputationResult};
use crate::error::{Error, Result};
use crate::tensor_store::PartialTensor;

/// Row means over observed columns, evaluated at every cell.
pub fn mean_over_contexts_surface(t: &PartialTensor) -> Result<Vec<f64>> {
    let (m, n, p) = t.shape();
    let mut surface = vec![0.0; m * n * p];
    for i in 0..m {
        let mut sum = vec![0.0; p];
        let mut count = 0usize;
        for j in 0..n {
            if let Some(y) = t.observed(i, j) {
                count += 1;
                for (s, v) in sum.iter_mut().zip(y) {
                    *s += v;
                }
            }
        }
        if count == 0 {
            return Err(Error::EmptyRow { row: i });
        }
        for j in 0..n {
            let start = (i * n + j) * p;
            for k in 0..p {
                surface[start + k] = sum[k] / count as f64;
            }
        }
    }
    Ok(surface)
}

/// `Y_ij ≈ mean over observed j'` of `Y_ij'`.
pub fn impute_mean_over_contexts(t: &PartialTensor) -> Result<ImputationResult> {
    let surface = mean_over_contexts_surface(t)?;
    from_surface(t, &surface)
}

/// `Y_ij ≈ mean over observed i'` of `Y_i'j`.
pub fn impute_mean_over_actions(t: &PartialTensor) -> Result<ImputationResult> {
    let tt = t.transpose();
    let surface = mean_over_contexts_surface(&tt).map_err(|e| match e {
        Error::EmptyRow { row } => Error::EmptyColumn { col: row },
        e => e,
    })?;
    Ok(from_surface(&tt, &surface)?.transpose())
}

fn indicator(t: &PartialTensor) -> DMatrix<f64> {
    DMatrix::from_fn(t.rows(), t.cols(), |i, j| if t.is_observed(i, j) { 1.0 } else { 0.0 })
}

/// Two-way fixed effect surface at every cell:
/// row mean + column mean - mean of the observed cells in `R(j) x C(i)`.
///
/// The rectangle sum is `((M∘Y) Mᵀ)ᵀ M` and its cell count `(M Mᵀ)ᵀ M`, with
/// `M` the 0/1 observation indicator.
pub fn fixed_effects_surface(t: &PartialTensor) -> Result<Vec<f64>> {
    let (m, n, p) = t.shape();
    let rows = mean_over_contexts_surface(t)?;
    let tt = t.transpose();
    let cols_t = mean_over_contexts_surface(&tt).map_err(|e| match e {
        Error::EmptyRow { row } => Error::EmptyColumn { col: row },
        e => e,
    })?;
    let ind = indicator(t);
    let counts = (&ind * ind.transpose()).transpose() * &ind;
    let mut surface = vec![0.0; m * n * p];
    for k in 0..p {
        let masked = DMatrix::from_fn(m, n, |i, j| t.observed_at(i, j, k).unwrap_or(0.0));
        let sums = (&masked * ind.transpose()).transpose() * &ind;
        for i in 0..m {
            for j in 0..n {
                let count = counts[(i, j)];
                if count < 0.5 {
                    return Err(Error::Unimputable {
                        row: i,
                        col: j,
                        reason: "no observed cell in the fixed-effect correction rectangle".into(),
                    });
                }
                let col_mean = cols_t[(j * m + i) * p + k];
                surface[(i * n + j) * p + k] = rows[(i * n + j) * p + k] + col_mean - sums[(i, j)] / count;
            }
        }
    }
    Ok(surface)
}

pub fn impute_fixed_effects(t: &PartialTensor) -> Result<ImputationResult> {
    let surface = fixed_effects_surface(t)?;
    from_surface(t, &surface)
}

/// Cosine similarity between every pair of columns over their common
/// observed rows (all outcome coordinates). `None` when the common support
/// is empty.
fn column_cosines(t: &PartialTensor) -> Vec<Vec<Option<f64>>> {
    let (m, n, _) = t.shape();
    let mut out = vec![vec![None; n]; n];
    for a in 0..n {
        for b in a..n {
            let mut dot = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            let mut common = false;
            for i in 0..m {
                if let (Some(x), Some(y)) = (t.observed(i, a), t.observed(i, b)) {
                    common = true;
                    for (u, v) in x.iter().zip(y) {
                        dot += u * v;
                        na += u * u;
                        nb += v * v;
                    }
                }
            }
            let cos = if !common {
                None
            } else if na == 0.0 || nb == 0.0 {
                Some(0.0)
            } else {
                Some(dot / (na.sqrt() * nb.sqrt()))
            };
            out[a][b] = cos;
            out[b][a] = cos;
        }
    }
    out
}

fn cf_within_rows(t: &PartialTensor, k_neighbors: Option<usize>) -> Result<ImputationResult> {
    let cos = column_cosines(t);
    let sets = t.index_sets();
    per_entry(t, |i, j| {
        let mut candidates: Vec<(usize, f64)> = sets.cols_of_row[i]
            .iter()
            .filter_map(|&jp| cos[jp][j].map(|c| (jp, c)))
            .collect();
        if candidates.is_empty() {
            return Err(Error::Unimputable {
                row: i,
                col: j,
                reason: "no comparable columns".into(),
            });
        }
        if let Some(k) = k_neighbors {
            // stable: ties keep ascending column order
            candidates.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
            candidates.truncate(k);
        }
        let total: f64 = candidates.iter().map(|(_, c)| c.abs()).sum();
        if total == 0.0 {
            return Err(Error::Unimputable {
                row: i,
                col: j,
                reason: "zero total similarity weight".into(),
            });
        }
        let y_i = |jp: usize| t.observed(i, jp).expect("donor column observed");
        let mut pred = vec![0.0; t.depth()];
        for &(jp, c) in &candidates {
            for (p, v) in pred.iter_mut().zip(y_i(jp)) {
                *p += c * v / total;
            }
        }
        Ok(EntryOutcome::Value(
            pred,
            Some(EntryDiagnostic {
                row: i,
                col: j,
                training_size: t.rows(),
                donors: candidates.len(),
                regression_rank: None,
                residual_norm: None,
                coefficients: None,
            }),
        ))
    })
}

/// Similarity-weighted average of the same row's observed entries
/// (`within_rows`), or of the same column's (`within_columns`). Weights are
/// signed cosines normalized by the sum of their absolute values.
pub fn impute_collaborative_filtering(t: &PartialTensor, cfg: &EstimatorConfig) -> Result<ImputationResult> {
    match cfg.direction {
        Direction::WithinRows => cf_within_rows(t, cfg.k_neighbors),
        Direction::WithinColumns => Ok(cf_within_rows(&t.transpose(), cfg.k_neighbors)
            .map_err(|e| match e {
                Error::Unimputable { row, col, reason } => Error::Unimputable { row: col, col: row, reason },
                e => e,
            })?
            .transpose()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Method;
    use crate::tensor_store::Mask;

    fn matrix(rows: &[&[Option<f64>]]) -> PartialTensor {
        let m = rows.len();
        let n = rows[0].len();
        let mask = Mask::from_fn(m, n, |i, j| rows[i][j].is_some());
        let values = rows.iter().flat_map(|r| r.iter().map(|v| v.unwrap_or(0.0))).collect();
        PartialTensor::new(1, values, mask).unwrap()
    }

    #[test]
    fn row_mean_by_hand() {
        let t = matrix(&[&[Some(1.0), Some(2.0), None, Some(3.0)]]);
        let r = impute_mean_over_contexts(&t).unwrap();
        assert_eq!(r.prediction(0, 2).unwrap(), &[2.0]);
        assert_eq!(r.prediction(0, 0).unwrap(), &[1.0]);
        assert!(r.imputed_mask.get(0, 2) && !r.imputed_mask.get(0, 0));
    }

    #[test]
    fn column_mean_by_hand() {
        let t = matrix(&[&[Some(4.0)], &[None], &[Some(6.0)]]);
        let r = impute_mean_over_actions(&t).unwrap();
        assert_eq!(r.prediction(1, 0).unwrap(), &[5.0]);
    }

    #[test]
    fn empty_row_is_named() {
        let t = matrix(&[&[Some(1.0), Some(2.0)], &[None, None]]);
        assert!(matches!(impute_mean_over_contexts(&t), Err(Error::EmptyRow { row: 1 })));
        let t = matrix(&[&[Some(1.0), None], &[Some(2.0), None]]);
        assert!(matches!(impute_mean_over_actions(&t), Err(Error::EmptyColumn { col: 1 })));
        assert!(matches!(impute_fixed_effects(&t), Err(Error::EmptyColumn { col: 1 })));
    }

    #[test]
    fn fixed_effects_direct_formula() {
        // R(j) x C(i) partially observed: correction averages observed cells only
        let t = matrix(&[
            &[Some(1.0), Some(2.0), Some(5.0)],
            &[Some(3.0), None, Some(4.0)],
            &[None, Some(7.0), None],
        ]);
        let r = impute_fixed_effects(&t).unwrap();
        // (1,1): C(1) = {0,2}, R(1) = {0,2}; rectangle cells (0,0),(0,2),(2,0),(2,2)
        let row = (3.0 + 4.0) / 2.0;
        let col = (2.0 + 7.0) / 2.0;
        let rect = (1.0 + 5.0) / 2.0;
        assert!((r.prediction(1, 1).unwrap()[0] - (row + col - rect)).abs() < 1e-12);
    }

    #[test]
    fn fixed_effects_empty_rectangle_is_an_error() {
        let t = matrix(&[&[Some(1.0), None], &[None, Some(2.0)]]);
        assert!(matches!(impute_fixed_effects(&t), Err(Error::Unimputable { .. })));
    }

    #[test]
    fn cf_duplicate_column_nearest_neighbour() {
        let t = matrix(&[
            &[Some(1.0), Some(1.0), Some(-3.0)],
            &[Some(2.0), Some(2.0), Some(0.5)],
            &[Some(3.0), None, Some(2.0)],
        ]);
        let cfg = EstimatorConfig::new(Method::CollaborativeFiltering).k_neighbors(1);
        let r = impute_collaborative_filtering(&t, &cfg).unwrap();
        assert!((r.prediction(2, 1).unwrap()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn cf_hand_weights() {
        let t = matrix(&[
            &[Some(1.0), Some(0.0), Some(1.0)],
            &[Some(0.0), Some(1.0), Some(1.0)],
            &[Some(2.0), Some(4.0), None],
        ]);
        // column 2 vs 0 over rows {0,1}: (1,1)·(1,0) / (√2·1) = 1/√2; same vs column 1
        let r = impute_collaborative_filtering(&t, &EstimatorConfig::new(Method::CollaborativeFiltering)).unwrap();
        let w = 1.0 / 2f64.sqrt();
        let expected = (w * 2.0 + w * 4.0) / (2.0 * w);
        assert!((r.prediction(2, 2).unwrap()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn cf_orthogonal_columns_fail() {
        let t = matrix(&[
            &[Some(1.0), Some(0.0)],
            &[Some(0.0), Some(1.0)],
            &[Some(5.0), None],
        ]);
        let err = impute_collaborative_filtering(&t, &EstimatorConfig::new(Method::CollaborativeFiltering)).unwrap_err();
        assert!(matches!(err, Error::Unimputable { row: 2, col: 1, .. }));
    }
}
