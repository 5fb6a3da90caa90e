//! Experiment driver: ingestion, filtering, scoring, bootstrap evaluation
//! and spectrum diagnostics.

mod design_file;
mod experiment;
mod io;
mod svd;

pub use design_file::{load_design, parse_design};
pub use experiment::{
    run_experiment, write_report_csv, DEFAULT_LAMBDA_GRID, EstimatorSummary, EvaluationReport, ExperimentConfig, InputSource,
    PatternSettings, ShuffleRecord,
};
pub use io::{
    load_manifest, load_mask, load_matrix, load_tensor, read_mask, read_matrix, save_manifest, save_mask,
    save_matrix, write_mask, write_matrix,
};
pub use svd::{svd_report, SvdReport};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_store::{Mask, PartialTensor};

/// Rows removed by [`filter_killer_drugs`], with their labels.
#[derive(Debug, Clone)]
pub struct KillerFilter {
    pub kept: PartialTensor,
    pub removed: Vec<String>,
}

/// Share of a row's observed entries that are negative (dead cell lines).
fn kill_fraction(t: &PartialTensor, i: usize) -> f64 {
    let observed: Vec<f64> = (0..t.cols()).filter_map(|j| t.observed_at(i, j, 0)).collect();
    if observed.is_empty() {
        return 0.0;
    }
    observed.iter().filter(|&&v| v < 0.0).count() as f64 / observed.len() as f64
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!("killer threshold must lie in (0, 1], got {threshold}")));
    }
    Ok(())
}

/// Drops every row whose fraction of negative observed entries exceeds
/// `threshold`.
pub fn filter_killer_drugs(t: &PartialTensor, threshold: f64) -> Result<KillerFilter> {
    check_threshold(threshold)?;
    if t.depth() != 1 {
        return Err(Error::InvalidParameter("killer filtering needs a matrix".into()));
    }
    let (keep, drop): (Vec<usize>, Vec<usize>) = (0..t.rows()).partition(|&i| kill_fraction(t, i) <= threshold);
    if keep.is_empty() {
        return Err(Error::InvalidParameter(format!("every row exceeds the killer threshold {threshold}")));
    }
    let cols: Vec<usize> = (0..t.cols()).collect();
    Ok(KillerFilter {
        kept: t.select(&keep, &cols)?,
        removed: drop.iter().map(|&i| t.row_labels()[i].clone()).collect(),
    })
}

/// Number of killer rows at each threshold.
pub fn killer_counts(t: &PartialTensor, thresholds: &[f64]) -> Result<Vec<usize>> {
    let fractions: Vec<f64> = (0..t.rows()).map(|i| kill_fraction(t, i)).collect();
    thresholds
        .iter()
        .map(|&th| {
            check_threshold(th)?;
            Ok(fractions.iter().filter(|&&f| f > th).count())
        })
        .collect()
}

/// Constant predictor in the R² denominator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Mean of the true values at the scored cells.
    #[default]
    MissingMean,
    /// Mean of the observed training values.
    ObservedMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Score {
    pub r2: f64,
    pub mse: f64,
    pub baseline_mse: f64,
    /// Scored cells with a finite prediction.
    pub n_scored: usize,
    /// Scored cells the estimator left unpredicted (NaN).
    pub n_failed: usize,
}

/// Scores `pred` against `truth` on the cells set in `scored`. The baseline
/// MSE uses the constant `baseline_value` (the mean of the scored truth when
/// `None`) over every scored cell; the prediction MSE skips NaN predictions.
pub fn score_cells(pred: &DMatrix<f64>, truth: &DMatrix<f64>, scored: &Mask, baseline_value: Option<f64>) -> Result<Score> {
    if pred.shape() != truth.shape() || scored.shape() != truth.shape() {
        return Err(Error::ShapeMismatch {
            expected: truth.shape(),
            got: if pred.shape() != truth.shape() { pred.shape() } else { scored.shape() },
        });
    }
    let cells: Vec<(usize, usize)> = (0..truth.nrows())
        .flat_map(|i| (0..truth.ncols()).map(move |j| (i, j)))
        .filter(|&(i, j)| scored.get(i, j))
        .collect();
    if cells.len() < 2 {
        return Err(Error::Undefined("R² needs at least two scored cells".into()));
    }
    let mean = cells.iter().map(|&c| truth[c]).sum::<f64>() / cells.len() as f64;
    let c = baseline_value.unwrap_or(mean);
    let baseline_mse = cells.iter().map(|&x| (truth[x] - c).powi(2)).sum::<f64>() / cells.len() as f64;
    if baseline_mse == 0.0 {
        return Err(Error::Undefined("R² undefined: baseline MSE is zero".into()));
    }
    let ok: Vec<(usize, usize)> = cells.iter().copied().filter(|&x| pred[x].is_finite()).collect();
    let mse = if ok.is_empty() {
        f64::NAN
    } else {
        ok.iter().map(|&x| (pred[x] - truth[x]).powi(2)).sum::<f64>() / ok.len() as f64
    };
    Ok(Score {
        r2: 1.0 - mse / baseline_mse,
        mse,
        baseline_mse,
        n_scored: ok.len(),
        n_failed: cells.len() - ok.len(),
    })
}

/// `1 - MSE(pred) / MSE(mean of truth)` over the cells set in `missing`.
pub fn r_squared(pred: &DMatrix<f64>, truth: &DMatrix<f64>, missing: &Mask) -> Result<f64> {
    Ok(score_cells(pred, truth, missing, None)?.r2)
}

/// Linear-interpolation quantile of sorted data (`q` in [0, 1]).
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
