//! Bootstrap evaluation: shuffle and crop, hide a pattern, impute, score.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{kill_fraction, check_threshold, quantile, score_cells, Baseline};
use crate::error::{Error, Result};
use crate::estimators::{self, EstimatorConfig, Method};
use crate::patterns::{self, PatternSpec};
use crate::scm_lab;
use crate::tensor_store::{Mask, PartialTensor};
use crate::util;

/// λ values swept for the nuclear-norm estimators when a grid is requested
/// without explicit values.
pub const DEFAULT_LAMBDA_GRID: [f64; 7] = [1e0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSource {
    /// Matrix CSV holding the ground truth.
    Csv { path: PathBuf },
    /// Tensor manifest; only the first outcome coordinate is scored.
    Manifest { path: PathBuf },
    /// Design document. The truth is the expected tensor; with `samples`
    /// the estimators see per-cell sample means instead.
    Design { path: PathBuf, samples: Option<usize> },
    #[serde(skip)]
    InMemory {
        truth: PartialTensor,
        noisy: Option<PartialTensor>,
    },
}

/// Pattern without dimensions; the crop size supplies them.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PatternSettings {
    SquareBlock { n_obs: usize },
    Staircase { block_fraction: f64 },
    UniformRandom { density: f64 },
}

impl PatternSettings {
    pub fn spec(&self, m: usize, n: usize, seed: u64) -> PatternSpec {
        match *self {
            PatternSettings::SquareBlock { n_obs } => PatternSpec::SquareBlock { m, n, n_obs },
            PatternSettings::Staircase { block_fraction } => PatternSpec::Staircase { m, n, block_fraction },
            PatternSettings::UniformRandom { density } => PatternSpec::UniformRandom { m, n, density, seed },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub input: InputSource,
    pub pattern: PatternSettings,
    pub estimators: Vec<EstimatorConfig>,
    #[serde(default = "one")]
    pub shuffles: usize,
    #[serde(default)]
    pub seed: u64,
    /// `[rows, cols]` of the crop; the whole matrix when absent.
    pub crop: Option<[usize; 2]>,
    pub killer_threshold: Option<f64>,
    #[serde(default)]
    pub baseline: Baseline,
    /// Run every `nnm`/`nnm_fe` entry once per λ, warm-started. An empty
    /// list means [`DEFAULT_LAMBDA_GRID`].
    pub lambda_grid: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config file; relative input paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        match &mut cfg.input {
            InputSource::Csv { path } | InputSource::Manifest { path } | InputSource::Design { path, .. } => {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
            InputSource::InMemory { .. } => {}
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shuffles == 0 {
            return Err(Error::InvalidConfig("shuffles must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidConfig("no estimators configured".into()));
        }
        if let Some(th) = self.killer_threshold {
            check_threshold(th)?;
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.iter().any(|l| !(*l >= 0.0)) {
                return Err(Error::InvalidConfig("lambda_grid needs nonnegative values".into()));
            }
        }
        for e in &self.estimators {
            e.validate()?;
        }
        Ok(())
    }

    /// Estimator list after λ-grid expansion.
    pub fn expanded_estimators(&self) -> Vec<EstimatorConfig> {
        let mut out = Vec::new();
        for e in &self.estimators {
            match (&self.lambda_grid, e.method) {
                (Some(grid), Method::Nnm | Method::NnmFe) => {
                    let grid: &[f64] = if grid.is_empty() { &DEFAULT_LAMBDA_GRID } else { grid };
                    out.extend(grid.iter().map(|&l| e.clone().lambda(l).warm_start(true)));
                }
                _ => out.push(e.clone()),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShuffleRecord {
    pub shuffle: usize,
    pub seed: u64,
    pub estimator: String,
    pub r2: f64,
    pub mse: f64,
    pub baseline_mse: f64,
    pub n_scored: usize,
    pub n_failed: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    /// One per shuffle, in shuffle order (NaN where the estimator failed).
    pub r2: Vec<f64>,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub records: Vec<ShuffleRecord>,
    pub summaries: Vec<EstimatorSummary>,
    pub shuffle_seeds: Vec<u64>,
    /// Baseline MSE per shuffle.
    pub baseline_mse: Vec<f64>,
}

impl EvaluationReport {
    pub fn summary(&self, label: &str) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == label)
    }
}

fn resolve_input(input: &InputSource, seed: u64) -> Result<(PartialTensor, Option<PartialTensor>)> {
    let first = |t: PartialTensor| -> Result<PartialTensor> {
        if t.depth() == 1 {
            Ok(t)
        } else {
            t.coordinate_tensor(0)
                .with_labels(t.row_labels().to_vec(), t.col_labels().to_vec())
        }
    };
    match input {
        InputSource::Csv { path } => Ok((super::load_matrix(path)?, None)),
        InputSource::Manifest { path } => Ok((first(super::load_manifest(path)?)?, None)),
        InputSource::Design { path, samples } => {
            let design = super::load_design(path)?;
            let truth = first(scm_lab::expand_design(&design)?)?;
            let noisy = match samples {
                Some(ns) => Some(first(
                    scm_lab::sample_design(&design, *ns, util::derive_seed(seed, &[u64::MAX]))?.means,
                )?),
                None => None,
            };
            Ok((truth, noisy))
        }
        InputSource::InMemory { truth, noisy } => Ok((first(truth.clone())?, noisy.clone().map(first).transpose()?)),
    }
}

fn dense(t: &PartialTensor) -> DMatrix<f64> {
    DMatrix::from_fn(t.rows(), t.cols(), |i, j| t.fiber(i, j)[0])
}

fn run_estimator(cfg: &EstimatorConfig, train: &PartialTensor, truth: &PartialTensor) -> Result<DMatrix<f64>> {
    let result = if cfg.method == Method::TruncatedSvdOracle {
        if truth.mask().count_observed() != truth.rows() * truth.cols() {
            return Err(Error::InvalidParameter("the SVD oracle needs a fully observed crop".into()));
        }
        estimators::truncated_svd_oracle(train, &dense(truth), cfg.rank.unwrap_or(0))?
    } else {
        estimators::impute(train, cfg)?
    };
    Ok(dense(&result.predictions))
}

/// Runs every estimator on every shuffle. Estimator errors are recorded in
/// the report; configuration and input errors abort.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvaluationReport> {
    cfg.validate()?;
    let (mut truth, mut noisy) = resolve_input(&cfg.input, cfg.seed)?;
    if let Some(n) = &noisy {
        if n.shape() != truth.shape() {
            return Err(Error::InvalidTensor("sampled and expected tensors differ in shape".into()));
        }
    }
    if let Some(th) = cfg.killer_threshold {
        let keep: Vec<usize> = (0..truth.rows()).filter(|&i| kill_fraction(&truth, i) <= th).collect();
        if keep.is_empty() {
            return Err(Error::InvalidParameter(format!("every row exceeds the killer threshold {th}")));
        }
        let cols: Vec<usize> = (0..truth.cols()).collect();
        truth = truth.select(&keep, &cols)?;
        noisy = noisy.map(|n| n.select(&keep, &cols)).transpose()?;
    }
    let [rows, cols] = cfg.crop.unwrap_or([truth.rows(), truth.cols()]);
    let estimators = cfg.expanded_estimators();
    let shuffle_seeds: Vec<u64> = (0..cfg.shuffles).map(|s| util::derive_seed(cfg.seed, &[s as u64])).collect();

    let per_shuffle = util::map_indices(cfg.shuffles, |s| -> Result<(f64, Vec<ShuffleRecord>)> {
        let seed = shuffle_seeds[s];
        let truth_s = patterns::shuffle_and_crop(&truth, rows, cols, seed)?;
        let source = match &noisy {
            Some(n) => patterns::shuffle_and_crop(n, rows, cols, seed)?,
            None => truth_s.clone(),
        };
        let pattern = cfg.pattern.spec(rows, cols, util::derive_seed(seed, &[1])).generate()?;
        let train_mask = Mask::from_fn(rows, cols, |i, j| pattern.get(i, j) && source.is_observed(i, j));
        let scored = Mask::from_fn(rows, cols, |i, j| !pattern.get(i, j) && truth_s.is_observed(i, j));
        let train = source.with_mask(train_mask.clone())?.poisoned(f64::NAN);
        let baseline_value = match cfg.baseline {
            Baseline::MissingMean => None,
            Baseline::ObservedMean => {
                let obs: Vec<f64> = (0..rows)
                    .flat_map(|i| (0..cols).map(move |j| (i, j)))
                    .filter_map(|(i, j)| train.observed_at(i, j, 0))
                    .collect();
                Some(obs.iter().sum::<f64>() / obs.len().max(1) as f64)
            }
        };
        let truth_m = dense(&truth_s);
        let mut records = Vec::with_capacity(estimators.len());
        let mut baseline_mse = f64::NAN;
        for e in &estimators {
            let outcome = run_estimator(e, &train, &truth_s)
                .and_then(|pred| score_cells(&pred, &truth_m, &scored, baseline_value));
            let record = match outcome {
                Ok(score) => {
                    baseline_mse = score.baseline_mse;
                    ShuffleRecord {
                        shuffle: s,
                        seed,
                        estimator: e.label(),
                        r2: score.r2,
                        mse: score.mse,
                        baseline_mse: score.baseline_mse,
                        n_scored: score.n_scored,
                        n_failed: score.n_failed,
                        error: None,
                    }
                }
                Err(err) => ShuffleRecord {
                    shuffle: s,
                    seed,
                    estimator: e.label(),
                    r2: f64::NAN,
                    mse: f64::NAN,
                    baseline_mse: f64::NAN,
                    n_scored: 0,
                    n_failed: scored.count_observed(),
                    error: Some(err.to_string()),
                },
            };
            records.push(record);
        }
        Ok((baseline_mse, records))
    });

    let mut records = Vec::new();
    let mut baseline_mse = Vec::new();
    for r in per_shuffle {
        let (b, recs) = r?;
        baseline_mse.push(b);
        records.extend(recs);
    }
    let summaries = estimators
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let r2: Vec<f64> = (0..cfg.shuffles).map(|s| records[s * estimators.len() + k].r2).collect();
            let mut finite: Vec<f64> = r2.iter().copied().filter(|v| v.is_finite()).collect();
            finite.sort_by(f64::total_cmp);
            EstimatorSummary {
                estimator: e.label(),
                median: quantile(&finite, 0.5),
                q1: quantile(&finite, 0.25),
                q3: quantile(&finite, 0.75),
                r2,
            }
        })
        .collect();
    Ok(EvaluationReport {
        records,
        summaries,
        shuffle_seeds,
        baseline_mse,
    })
}

/// One CSV row per shuffle and estimator.
pub fn write_report_csv<W: Write>(writer: W, report: &EvaluationReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in &report.records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<report writer>", e))?;
    Ok(())
}
