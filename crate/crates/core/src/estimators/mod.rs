//! Completion estimators for partially observed action x context tensors.
//!
//! Every estimator reads only observed cells, passes observed cells through
//! unchanged, and reports which missing cells it actually predicted.

mod baselines;
mod nuclear;
mod synthetic;

pub use baselines::{
    fixed_effects_surface, impute_collaborative_filtering, impute_fixed_effects,
    impute_mean_over_actions, impute_mean_over_contexts, mean_over_contexts_surface,
};
pub use nuclear::{
    impute_nnm, impute_nnm_fe, nnm_objective, soft_impute, truncated_svd_oracle, SoftImputeOutcome,
};
pub use synthetic::{impute_si_centered, impute_synthetic_interventions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_store::{Mask, PartialTensor};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MeanOverContexts,
    MeanOverActions,
    FixedEffects,
    CollaborativeFiltering,
    SyntheticInterventions,
    SiCentered,
    Nnm,
    NnmFe,
    TruncatedSvdOracle,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::MeanOverContexts,
        Method::MeanOverActions,
        Method::FixedEffects,
        Method::CollaborativeFiltering,
        Method::SyntheticInterventions,
        Method::SiCentered,
        Method::Nnm,
        Method::NnmFe,
        Method::TruncatedSvdOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::MeanOverContexts => "mean_over_contexts",
            Method::MeanOverActions => "mean_over_actions",
            Method::FixedEffects => "fixed_effects",
            Method::CollaborativeFiltering => "collaborative_filtering",
            Method::SyntheticInterventions => "synthetic_interventions",
            Method::SiCentered => "si_centered",
            Method::Nnm => "nnm",
            Method::NnmFe => "nnm_fe",
            Method::TruncatedSvdOracle => "truncated_svd_oracle",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// Which index the regression (or similarity weighting) runs over.
/// `WithinRows` predicts `Y_ij` from the same row's other columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    WithinRows,
    WithinColumns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    #[default]
    None,
    MeanOverContexts,
    FixedEffects,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub method: Method,
    pub direction: Direction,
    pub centering: Centering,
    pub k_neighbors: Option<usize>,
    pub lambda: f64,
    /// Run a geometric lambda path from the largest useful value down to
    /// `lambda`, warm-starting each stage.
    pub warm_start: bool,
    pub rank: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
    pub pinv_rcond: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            method: Method::MeanOverContexts,
            direction: Direction::WithinRows,
            centering: Centering::None,
            k_neighbors: None,
            lambda: 1e-3,
            warm_start: false,
            rank: None,
            tol: 1e-7,
            max_iter: 5000,
            pinv_rcond: 1e-10,
        }
    }
}

impl EstimatorConfig {
    pub fn new(method: Method) -> Self {
        EstimatorConfig {
            method,
            ..Default::default()
        }
    }

    pub fn direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn centering(mut self, centering: Centering) -> Self {
        self.centering = centering;
        self
    }

    pub fn lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn k_neighbors(mut self, k: usize) -> Self {
        self.k_neighbors = Some(k);
        self
    }

    pub fn rank(mut self, r: usize) -> Self {
        self.rank = Some(r);
        self
    }

    pub fn tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn warm_start(mut self, on: bool) -> Self {
        self.warm_start = on;
        self
    }

    /// Short label such as `si[rows]`.
    pub fn label(&self) -> String {
        let dir = match self.direction {
            Direction::WithinRows => "rows",
            Direction::WithinColumns => "cols",
        };
        match self.method {
            Method::SyntheticInterventions => format!("si[{dir}]"),
            Method::SiCentered => match self.centering {
                Centering::None => format!("si[{dir}]"),
                Centering::MeanOverContexts => format!("si_mean_contexts[{dir}]"),
                Centering::FixedEffects => format!("si_fe[{dir}]"),
            },
            Method::CollaborativeFiltering => match self.k_neighbors {
                Some(k) => format!("cf{k}[{dir}]"),
                None => format!("cf[{dir}]"),
            },
            Method::Nnm | Method::NnmFe => format!("{}[lambda={:e}]", self.method.name(), self.lambda),
            Method::TruncatedSvdOracle => format!("svd_oracle[r={}]", self.rank.unwrap_or(0)),
            m => m.name().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        if !(self.pinv_rcond >= 0.0) {
            return Err(Error::InvalidConfig("pinv_rcond must be nonnegative".into()));
        }
        if self.k_neighbors == Some(0) {
            return Err(Error::InvalidConfig("k_neighbors must be positive".into()));
        }
        if self.method == Method::TruncatedSvdOracle && !matches!(self.rank, Some(r) if r > 0) {
            return Err(Error::InvalidConfig("truncated_svd_oracle needs a positive rank".into()));
        }
        Ok(())
    }
}

/// Per-entry regression metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryDiagnostic {
    pub row: usize,
    pub col: usize,
    /// Rows (or columns) used for fitting.
    pub training_size: usize,
    /// Donors used for the prediction.
    pub donors: usize,
    pub regression_rank: Option<usize>,
    pub residual_norm: Option<f64>,
    /// Regression weights, one per donor in ascending index order.
    pub coefficients: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryFailure {
    pub row: usize,
    pub col: usize,
    pub reason: String,
}

/// Whole-matrix iterative solver metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    /// Objective after every iteration, in order (stages concatenated when
    /// a lambda path is used).
    pub objective_history: Vec<f64>,
    /// Index into `objective_history` where each lambda stage starts.
    pub stage_starts: Vec<usize>,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub entries: Vec<EntryDiagnostic>,
    pub failures: Vec<EntryFailure>,
    pub solver: Option<SolverDiagnostics>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ImputationResult {
    /// Observed cells unchanged, imputed cells filled; cells that failed to
    /// impute are NaN and left out of the mask.
    pub predictions: PartialTensor,
    pub imputed_mask: Mask,
    pub diagnostics: Diagnostics,
}

impl ImputationResult {
    pub fn prediction(&self, i: usize, j: usize) -> Option<&[f64]> {
        self.predictions.observed(i, j)
    }

    /// Swaps rows and columns of the whole result, diagnostics included.
    pub fn transpose(self) -> ImputationResult {
        let mut diagnostics = self.diagnostics;
        for e in &mut diagnostics.entries {
            std::mem::swap(&mut e.row, &mut e.col);
        }
        for f in &mut diagnostics.failures {
            std::mem::swap(&mut f.row, &mut f.col);
        }
        diagnostics.entries.sort_by_key(|e| (e.row, e.col));
        diagnostics.failures.sort_by_key(|f| (f.row, f.col));
        ImputationResult {
            predictions: self.predictions.transpose(),
            imputed_mask: self.imputed_mask.transpose(),
            diagnostics,
        }
    }
}

/// Outcome of imputing one missing cell.
pub(crate) enum EntryOutcome {
    Value(Vec<f64>, Option<EntryDiagnostic>),
    Failed(String),
}

/// Evaluates `f` on every missing cell (in parallel when enabled) and
/// assembles the result. `Err` from `f` aborts the whole imputation.
pub(crate) fn per_entry<F>(t: &PartialTensor, f: F) -> Result<ImputationResult>
where
    F: Fn(usize, usize) -> Result<EntryOutcome> + Sync + Send,
{
    let missing = t.mask().missing_cells();
    let outcomes = util::map_indices(missing.len(), |k| {
        let (i, j) = missing[k];
        f(i, j)
    });
    let mut predictions = t.values().to_vec();
    let mut filled = t.mask().clone();
    let mut imputed = Mask::empty(t.rows(), t.cols());
    let mut diagnostics = Diagnostics::default();
    let (cols, depth) = (t.cols(), t.depth());
    for (&(i, j), outcome) in missing.iter().zip(outcomes) {
        let start = (i * cols + j) * depth;
        match outcome? {
            EntryOutcome::Value(v, diag) => {
                if v.iter().any(|x| !x.is_finite()) {
                    predictions[start..start + depth].fill(f64::NAN);
                    diagnostics.failures.push(EntryFailure {
                        row: i,
                        col: j,
                        reason: "non-finite prediction".into(),
                    });
                    continue;
                }
                predictions[start..start + depth].copy_from_slice(&v);
                filled.set(i, j, true);
                imputed.set(i, j, true);
                if let Some(d) = diag {
                    diagnostics.entries.push(d);
                }
            }
            EntryOutcome::Failed(reason) => {
                predictions[start..start + depth].fill(f64::NAN);
                diagnostics.failures.push(EntryFailure { row: i, col: j, reason });
            }
        }
    }
    let predictions = PartialTensor::new(depth, predictions, filled)?
        .with_labels(t.row_labels().to_vec(), t.col_labels().to_vec())?;
    Ok(ImputationResult {
        predictions,
        imputed_mask: imputed,
        diagnostics,
    })
}

/// Builds a result from a dense surface defined at every cell: observed
/// cells keep their values, missing cells take the surface value.
pub(crate) fn from_surface(t: &PartialTensor, surface: &[f64]) -> Result<ImputationResult> {
    per_entry(t, |i, j| {
        let start = (i * t.cols() + j) * t.depth();
        Ok(EntryOutcome::Value(surface[start..start + t.depth()].to_vec(), None))
    })
}

/// Runs the configured estimator. The truncated-SVD oracle needs the fully
/// observed matrix and is reached through [`truncated_svd_oracle`] instead.
pub fn impute(t: &PartialTensor, cfg: &EstimatorConfig) -> Result<ImputationResult> {
    cfg.validate()?;
    match cfg.method {
        Method::MeanOverContexts => impute_mean_over_contexts(t),
        Method::MeanOverActions => impute_mean_over_actions(t),
        Method::FixedEffects => impute_fixed_effects(t),
        Method::CollaborativeFiltering => impute_collaborative_filtering(t, cfg),
        Method::SyntheticInterventions => impute_synthetic_interventions(t, cfg),
        Method::SiCentered => impute_si_centered(t, cfg),
        Method::Nnm => impute_nnm(t, cfg),
        Method::NnmFe => impute_nnm_fe(t, cfg),
        Method::TruncatedSvdOracle => Err(Error::InvalidConfig(
            "truncated_svd_oracle needs the fully observed matrix".into(),
        )),
    }
}
