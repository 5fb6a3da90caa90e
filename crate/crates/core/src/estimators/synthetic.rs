//! Synthetic interventions: per-entry least-squares regression of the target
//! column on donor columns over the rows that observe all of them.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::{
    baselines::{fixed_effects_surface, mean_over_contexts_surface},
    per_entry, Centering, Direction, EntryDiagnostic, EntryOutcome, EstimatorConfig, ImputationResult,
};
use crate::error::Result;
use crate::linalg;
use crate::tensor_store::PartialTensor;
use crate::util;

type FitKey = (Vec<usize>, Vec<usize>);

struct Fit {
    pinv: DMatrix<f64>,
    x: DMatrix<f64>,
    rank: usize,
}

/// Stacks `Y[rows, cols]` coordinate-major: all rows of coordinate 0, then
/// all rows of coordinate 1, and so on.
fn stacked(t: &PartialTensor, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    let p = t.depth();
    DMatrix::from_fn(rows.len() * p, cols.len(), |r, c| {
        let (k, i) = (r / rows.len(), r % rows.len());
        t.fiber(rows[i], cols[c])[k]
    })
}

fn training_rows(t: &PartialTensor, i: usize, j: usize, donors: &[usize]) -> Vec<usize> {
    (0..t.rows())
        .filter(|&r| r != i && t.is_observed(r, j) && donors.iter().all(|&c| t.is_observed(r, c)))
        .collect()
}

fn si_within_rows(t: &PartialTensor, rcond: f64) -> Result<ImputationResult> {
    let sets = t.index_sets();
    let missing = t.mask().missing_cells();

    let mut keys: HashMap<FitKey, usize> = HashMap::new();
    let mut unique: Vec<FitKey> = Vec::new();
    for &(i, j) in &missing {
        let donors = &sets.cols_of_row[i];
        if donors.is_empty() {
            continue;
        }
        let train = training_rows(t, i, j, donors);
        if train.is_empty() {
            continue;
        }
        let key = (train, donors.clone());
        if !keys.contains_key(&key) {
            keys.insert(key.clone(), unique.len());
            unique.push(key);
        }
    }
    let fits: Vec<Fit> = util::map_indices(unique.len(), |u| {
        let (train, donors) = &unique[u];
        let x = stacked(t, train, donors);
        let (pinv, rank) = linalg::pseudoinverse(&x, rcond);
        Fit { pinv, x, rank }
    });

    per_entry(t, |i, j| {
        let donors = &sets.cols_of_row[i];
        if donors.is_empty() {
            return Ok(EntryOutcome::Failed("row has no observed donor columns".into()));
        }
        let train = training_rows(t, i, j, donors);
        if train.is_empty() {
            return Ok(EntryOutcome::Failed("empty training set".into()));
        }
        let n_train = train.len();
        let key = (train, donors.clone());
        let fit = &fits[keys[&key]];
        let y = stacked(t, &key.0, &[j]).column(0).into_owned();
        let beta: DVector<f64> = &fit.pinv * &y;
        let residual = (&fit.x * &beta - &y).norm();
        let pred = (0..t.depth())
            .map(|k| donors.iter().zip(beta.iter()).map(|(&c, b)| t.fiber(i, c)[k] * b).sum())
            .collect();
        Ok(EntryOutcome::Value(
            pred,
            Some(EntryDiagnostic {
                row: i,
                col: j,
                training_size: n_train,
                donors: donors.len(),
                regression_rank: Some(fit.rank),
                residual_norm: Some(residual),
                coefficients: Some(beta.iter().copied().collect()),
            }),
        ))
    })
}

/// Synthetic interventions. For target `(i, j)` in `within_rows` mode the
/// donors are the observed columns `C(i)` and the training rows are the rows
/// other than `i` observing `C(i)` and `j`. Entries with no donors or no
/// training rows are recorded as failures and left unimputed.
pub fn impute_synthetic_interventions(t: &PartialTensor, cfg: &EstimatorConfig) -> Result<ImputationResult> {
    match cfg.direction {
        Direction::WithinRows => si_within_rows(t, cfg.pinv_rcond),
        Direction::WithinColumns => Ok(si_within_rows(&t.transpose(), cfg.pinv_rcond)?.transpose()),
    }
}

/// SI on the residual `Y - centering`, with the centering surface added back.
pub fn impute_si_centered(t: &PartialTensor, cfg: &EstimatorConfig) -> Result<ImputationResult> {
    let surface = match cfg.centering {
        Centering::None => return impute_synthetic_interventions(t, cfg),
        Centering::MeanOverContexts => mean_over_contexts_surface(t)?,
        Centering::FixedEffects => fixed_effects_surface(t)?,
    };
    let residual: Vec<f64> = t
        .values()
        .iter()
        .zip(&surface)
        .map(|(y, s)| y - s)
        .collect();
    let mut d = PartialTensor::new(t.depth(), residual, t.mask().clone())?;
    // observed cells only are ever read; unobserved residuals are placeholders
    d = d.with_labels(t.row_labels().to_vec(), t.col_labels().to_vec())?;
    let mut result = impute_synthetic_interventions(&d, cfg)?;

    let p = t.depth();
    let mut values = result.predictions.values().to_vec();
    for (idx, v) in values.iter_mut().enumerate() {
        let cell = idx / p;
        let (i, j) = (cell / t.cols(), cell % t.cols());
        if t.is_observed(i, j) {
            *v = t.values()[idx];
        } else if result.imputed_mask.get(i, j) {
            *v += surface[idx];
        }
    }
    result.predictions = PartialTensor::new(p, values, result.predictions.mask().clone())?
        .with_labels(t.row_labels().to_vec(), t.col_labels().to_vec())?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{impute_fixed_effects, impute_mean_over_contexts, Method};
    use crate::tensor_store::Mask;

    fn rank_one(u: &[f64], v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    #[test]
    fn rank_one_block_corner_is_recovered() {
        let full = rank_one(&[1.0, 2.0, -1.0, 0.5], &[3.0, 1.0, 2.0, -2.0]);
        let mask = Mask::from_fn(4, 4, |i, j| !(i >= 2 && j >= 2));
        let t = PartialTensor::from_matrix(&full, mask).unwrap();
        for dir in [Direction::WithinRows, Direction::WithinColumns] {
            let cfg = EstimatorConfig::new(Method::SyntheticInterventions).direction(dir);
            let r = impute_synthetic_interventions(&t, &cfg).unwrap();
            for i in 2..4 {
                for j in 2..4 {
                    assert!((r.prediction(i, j).unwrap()[0] - full[(i, j)]).abs() < 1e-10);
                }
            }
            assert!(r.diagnostics.failures.is_empty());
        }
    }

    #[test]
    fn empty_training_set_is_flagged_not_fatal() {
        let full = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mask = Mask::from_fn(2, 2, |i, j| i == j);
        let t = PartialTensor::from_matrix(&full, mask).unwrap();
        let r = impute_synthetic_interventions(&t, &EstimatorConfig::new(Method::SyntheticInterventions)).unwrap();
        assert_eq!(r.diagnostics.failures.len(), 2);
        assert_eq!(r.imputed_mask.count_observed(), 0);
        assert!(r.predictions.fiber(0, 1)[0].is_nan());
    }

    #[test]
    fn fixed_action_effect_centered_si_is_the_row_mean() {
        let full = DMatrix::from_fn(4, 5, |i, _| i as f64 * 1.5 - 2.0);
        let mask = Mask::from_fn(4, 5, |i, j| (i + 2 * j) % 3 != 0);
        let t = PartialTensor::from_matrix(&full, mask).unwrap();
        let cfg = EstimatorConfig::new(Method::SiCentered).centering(Centering::MeanOverContexts);
        let r = impute_si_centered(&t, &cfg).unwrap();
        let base = impute_mean_over_contexts(&t).unwrap();
        for (i, j) in t.mask().missing_cells() {
            if r.imputed_mask.get(i, j) {
                assert!((r.prediction(i, j).unwrap()[0] - base.prediction(i, j).unwrap()[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn si_fe_is_si_on_the_fe_residual() {
        let full = DMatrix::from_fn(5, 5, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * i as f64 * j as f64);
        let mask = Mask::from_fn(5, 5, |i, j| !(i >= 3 && j >= 3));
        let t = PartialTensor::from_matrix(&full, mask.clone()).unwrap();
        let cfg = EstimatorConfig::new(Method::SiCentered).centering(Centering::FixedEffects);
        let centered = impute_si_centered(&t, &cfg).unwrap();

        let fe = impute_fixed_effects(&t).unwrap();
        let fe_all = fixed_effects_surface(&t).unwrap();
        let d = DMatrix::from_fn(5, 5, |i, j| full[(i, j)] - fe_all[i * 5 + j]);
        let dt = PartialTensor::from_matrix(&d, mask).unwrap();
        let si = impute_synthetic_interventions(&dt, &EstimatorConfig::new(Method::SyntheticInterventions)).unwrap();
        for i in 3..5 {
            for j in 3..5 {
                let composed = fe.prediction(i, j).unwrap()[0] + si.prediction(i, j).unwrap()[0];
                assert!((centered.prediction(i, j).unwrap()[0] - composed).abs() < 1e-10);
            }
        }
    }
}
