//! Nuclear-norm completion (soft-impute), its fixed-effect extension, and the
//! truncated-SVD upper-bound oracle.

use nalgebra::{DMatrix, DVector};

use super::{from_surface, Diagnostics, EstimatorConfig, ImputationResult, SolverDiagnostics};
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor_store::{Mask, PartialTensor};

#[derive(Debug, Clone)]
pub struct SoftImputeOutcome {
    pub solution: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective_history: Vec<f64>,
}

fn indicator(mask: &Mask) -> DMatrix<f64> {
    DMatrix::from_fn(mask.rows(), mask.cols(), |i, j| if mask.get(i, j) { 1.0 } else { 0.0 })
}

/// `P_Ω(Y)` without reading unobserved cells, which may hold NaN.
fn projected(y: &DMatrix<f64>, mask: &Mask) -> DMatrix<f64> {
    DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| if mask.get(i, j) { y[(i, j)] } else { 0.0 })
}

fn observed_matrix(t: &PartialTensor) -> DMatrix<f64> {
    DMatrix::from_fn(t.rows(), t.cols(), |i, j| t.observed_at(i, j, 0).unwrap_or(0.0))
}

fn penalty(lambda: f64, nuclear: f64) -> f64 {
    if nuclear == 0.0 {
        0.0
    } else {
        lambda * nuclear
    }
}

/// `(1/2) ||P_Ω(Y - L)||²_F + λ ||L||_*`.
pub fn nnm_objective(y: &DMatrix<f64>, mask: &Mask, l: &DMatrix<f64>, lambda: f64) -> f64 {
    let resid = projected(y, mask) - projected(l, mask);
    0.5 * resid.norm_squared() + penalty(lambda, linalg::nuclear_norm(l))
}

fn relative_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let diff = (new - old).norm();
    let base = old.norm();
    if diff == 0.0 {
        0.0
    } else if base == 0.0 {
        f64::INFINITY
    } else {
        diff / base
    }
}

/// Soft-impute iteration `L <- SVT_λ(P_Ω(Y) + P_Ω̄(L))` from `init` (zero
/// by default) until the relative Frobenius change is at most `tol`.
pub fn soft_impute(
    y: &DMatrix<f64>,
    mask: &Mask,
    lambda: f64,
    init: Option<&DMatrix<f64>>,
    tol: f64,
    max_iter: usize,
) -> SoftImputeOutcome {
    let ind = indicator(mask);
    let observed = projected(y, mask);
    let mut l = init.cloned().unwrap_or_else(|| DMatrix::zeros(y.nrows(), y.ncols()));
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let filled = &observed + (&l - l.component_mul(&ind));
        let (next, nuclear) = linalg::singular_value_threshold(&filled, lambda);
        let change = relative_change(&next, &l);
        l = next;
        let fit = 0.5 * (&observed - l.component_mul(&ind)).norm_squared();
        history.push(fit + penalty(lambda, nuclear));
        if change <= tol {
            converged = true;
            break;
        }
    }
    SoftImputeOutcome {
        solution: l,
        iterations,
        converged,
        objective_history: history,
    }
}

/// Geometric path from `start` down to `end` (inclusive), then a final
/// zero stage when `end` is zero.
fn lambda_path(start: f64, end: f64, stages: usize) -> Vec<f64> {
    if !(start > end) || !end.is_finite() {
        return vec![end];
    }
    let floor = if end > 0.0 { end } else { start * 1e-6 };
    let ratio = (floor / start).powf(1.0 / (stages - 1) as f64);
    let mut path: Vec<f64> = (0..stages).map(|k| start * ratio.powi(k as i32)).collect();
    path[stages - 1] = floor;
    if end == 0.0 {
        path.push(0.0);
    }
    path
}

const PATH_STAGES: usize = 12;

fn require_matrix(t: &PartialTensor, what: &str) -> Result<()> {
    if t.depth() != 1 {
        return Err(Error::InvalidParameter(format!(
            "{what} needs a matrix (depth 1), got depth {}",
            t.depth()
        )));
    }
    Ok(())
}

fn surface_of(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect()
}

/// Nuclear norm minimization solved by soft-impute. With `warm_start` the
/// solver walks a geometric lambda path from `σ_max(P_Ω(Y))` down to the
/// configured lambda, initializing each stage from the previous solution.
pub fn impute_nnm(t: &PartialTensor, cfg: &EstimatorConfig) -> Result<ImputationResult> {
    require_matrix(t, "nnm")?;
    cfg.validate()?;
    let y = observed_matrix(t);
    let mask = t.mask();
    let lambdas = if cfg.warm_start {
        let top = linalg::svd(&y).singular_values[0];
        lambda_path(top, cfg.lambda, PATH_STAGES)
    } else {
        vec![cfg.lambda]
    };
    let mut l: Option<DMatrix<f64>> = None;
    let mut history = Vec::new();
    let mut stage_starts = Vec::new();
    let mut iterations = 0;
    let mut converged = true;
    for &lambda in &lambdas {
        stage_starts.push(history.len());
        let out = soft_impute(&y, mask, lambda, l.as_ref(), cfg.tol, cfg.max_iter);
        iterations += out.iterations;
        converged = out.converged;
        history.extend(out.objective_history);
        l = Some(out.solution);
    }
    let l = l.expect("at least one stage");
    let mut result = from_surface(t, &surface_of(&l))?;
    result.diagnostics = solver_diagnostics(result.diagnostics, iterations, converged, history, stage_starts, lambdas);
    Ok(result)
}

fn solver_diagnostics(
    mut d: Diagnostics,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
    stage_starts: Vec<usize>,
    lambdas: Vec<f64>,
) -> Diagnostics {
    if !converged {
        let msg = format!("solver did not converge within {iterations} iterations");
        log::warn!("{msg}");
        d.warnings.push(msg);
    }
    d.solver = Some(SolverDiagnostics {
        iterations,
        converged,
        objective: history.last().copied().unwrap_or(f64::NAN),
        objective_history: history,
        stage_starts,
        lambdas,
    });
    d
}

struct FeState {
    l: DMatrix<f64>,
    gamma: Vec<f64>,
    delta: Vec<f64>,
}

impl FeState {
    fn effects(&self, m: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |i, j| self.gamma[i] + self.delta[j])
    }
}

/// Two-way least squares on `Ω`. The normal equations
/// `[diag(|C(i)|) M; Mᵀ diag(|R(j)|)] (Γ, Δ) = (row sums, column sums)`
/// depend only on the mask, so their pseudoinverse is formed once; the
/// minimum-norm solution fixes the free constant shift between Γ and Δ.
struct TwoWayFit {
    pinv: DMatrix<f64>,
    ind: DMatrix<f64>,
}

impl TwoWayFit {
    fn new(mask: &Mask) -> Self {
        let (m, n) = mask.shape();
        let ind = indicator(mask);
        let mut normal = DMatrix::zeros(m + n, m + n);
        for i in 0..m {
            normal[(i, i)] = mask.row_count(i) as f64;
        }
        for j in 0..n {
            normal[(m + j, m + j)] = mask.col_count(j) as f64;
        }
        normal.view_mut((0, m), (m, n)).copy_from(&ind);
        normal.view_mut((m, 0), (n, m)).copy_from(&ind.transpose());
        let (pinv, _) = linalg::pseudoinverse(&normal, 1e-10);
        TwoWayFit { pinv, ind }
    }

    fn solve(&self, r: &DMatrix<f64>, gamma: &mut [f64], delta: &mut [f64]) {
        let masked = r.component_mul(&self.ind);
        let (m, n) = masked.shape();
        let mut b = DVector::zeros(m + n);
        for i in 0..m {
            b[i] = masked.row(i).sum();
        }
        for j in 0..n {
            b[m + j] = masked.column(j).sum();
        }
        let x = &self.pinv * b;
        gamma.copy_from_slice(x.rows(0, m).as_slice());
        delta.copy_from_slice(x.rows(m, n).as_slice());
    }
}

fn nnm_fe_objective(y: &DMatrix<f64>, ind: &DMatrix<f64>, s: &FeState, lambda: f64, n_obs: f64) -> f64 {
    let (m, n) = y.shape();
    let resid = (y - &s.l - s.effects(m, n)).component_mul(ind);
    resid.norm_squared() / n_obs + penalty(lambda, linalg::nuclear_norm(&s.l))
}

/// NNM with unpenalized row and column effects:
/// `(1/|Ω|) ||P_Ω(Y - L - Γ1ᵀ - 1Δᵀ)||²_F + λ ||L||_*`, by block
/// coordinate descent. Each outer iteration refits the effects exactly and
/// then takes one soft-impute step on `L`, so the objective never increases.
pub fn impute_nnm_fe(t: &PartialTensor, cfg: &EstimatorConfig) -> Result<ImputationResult> {
    require_matrix(t, "nnm_fe")?;
    cfg.validate()?;
    let mask = t.mask();
    let sets = t.index_sets();
    if let Some(i) = sets.cols_of_row.iter().position(|c| c.is_empty()) {
        return Err(Error::EmptyRow { row: i });
    }
    if let Some(j) = sets.rows_of_col.iter().position(|r| r.is_empty()) {
        return Err(Error::EmptyColumn { col: j });
    }
    let y = observed_matrix(t);
    let (m, n) = y.shape();
    let ind = indicator(mask);
    let n_obs = mask.count_observed() as f64;
    // threshold for the equivalent problem with a 1/2 data term
    let tau = |lambda: f64| lambda * n_obs / 2.0;

    let mut state = FeState {
        l: DMatrix::zeros(m, n),
        gamma: vec![0.0; m],
        delta: vec![0.0; n],
    };
    let two_way = TwoWayFit::new(mask);
    two_way.solve(&y, &mut state.gamma, &mut state.delta);

    let lambdas = if cfg.warm_start && cfg.lambda.is_finite() {
        let resid = (&y - state.effects(m, n)).component_mul(&ind);
        let top = linalg::svd(&resid).singular_values[0] * 2.0 / n_obs;
        lambda_path(top, cfg.lambda, PATH_STAGES)
    } else {
        vec![cfg.lambda]
    };

    let mut history = Vec::new();
    let mut stage_starts = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for &lambda in &lambdas {
        stage_starts.push(history.len());
        converged = false;
        let mut prev = state.l.clone() + state.effects(m, n);
        for _ in 0..cfg.max_iter {
            iterations += 1;
            let target = &y - &state.l;
            two_way.solve(&target, &mut state.gamma, &mut state.delta);
            let resid = &y - state.effects(m, n);
            let step = soft_impute(&resid, mask, tau(lambda), Some(&state.l), cfg.tol, 1);
            state.l = step.solution;
            history.push(nnm_fe_objective(&y, &ind, &state, lambda, n_obs));
            let fitted = state.l.clone() + state.effects(m, n);
            let change = relative_change(&fitted, &prev);
            prev = fitted;
            if change <= cfg.tol {
                converged = true;
                break;
            }
        }
    }
    let fitted = state.l.clone() + state.effects(m, n);
    let mut result = from_surface(t, &surface_of(&fitted))?;
    result.diagnostics = solver_diagnostics(result.diagnostics, iterations, converged, history, stage_starts, lambdas);
    Ok(result)
}

/// Rank-`r` truncated SVD of the fully observed matrix, used at the missing
/// cells. This is an upper-bound reference, not a completion method.
pub fn truncated_svd_oracle(t: &PartialTensor, full: &DMatrix<f64>, r: usize) -> Result<ImputationResult> {
    require_matrix(t, "truncated_svd_oracle")?;
    let (m, n) = full.shape();
    if (m, n) != (t.rows(), t.cols()) {
        return Err(Error::ShapeMismatch {
            expected: (t.rows(), t.cols()),
            got: (m, n),
        });
    }
    if r == 0 || r > m.min(n) {
        return Err(Error::InvalidParameter(format!(
            "rank {r} outside 1..={}",
            m.min(n)
        )));
    }
    let approx = linalg::truncate_rank(full, r);
    from_surface(t, &surface_of(&approx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Method;

    #[test]
    fn zero_lambda_full_observation_returns_y() {
        let y = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 4.0, -1.0]);
        let out = soft_impute(&y, &Mask::full(2, 3), 0.0, None, 1e-12, 10);
        assert!((out.solution - &y).norm() < 1e-12);
    }

    #[test]
    fn soft_impute_objective_never_increases() {
        let y = DMatrix::from_fn(8, 7, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0);
        let mask = Mask::from_fn(8, 7, |i, j| (i * 7 + j) % 4 != 0);
        let out = soft_impute(&y, &mask, 0.5, None, 1e-10, 500);
        for w in out.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn lambda_path_is_decreasing_and_ends_at_target() {
        let p = lambda_path(10.0, 1e-3, 12);
        assert_eq!(p.len(), 12);
        assert!(p.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(*p.last().unwrap(), 1e-3);
        assert_eq!(*lambda_path(10.0, 0.0, 4).last().unwrap(), 0.0);
        assert_eq!(lambda_path(1.0, 5.0, 4), vec![5.0]);
    }

    #[test]
    fn nnm_rejects_tensors() {
        let t = PartialTensor::dense(2, 2, 2, vec![0.0; 8]).unwrap();
        assert!(impute_nnm(&t, &EstimatorConfig::new(Method::Nnm)).is_err());
    }

    #[test]
    fn infinite_lambda_nnm_fe_is_two_way_fe_least_squares() {
        let y = DMatrix::from_fn(4, 4, |i, j| (i as f64) * 2.0 - (j as f64) + if (i + j) % 2 == 0 { 0.3 } else { -0.1 });
        let mask = Mask::from_fn(4, 4, |i, j| !(i == 3 && j == 3));
        let t = PartialTensor::from_matrix(&y, mask).unwrap();
        let cfg = EstimatorConfig::new(Method::NnmFe).lambda(f64::INFINITY).tol(1e-12);
        let r = impute_nnm_fe(&t, &cfg).unwrap();
        assert!(r.diagnostics.solver.as_ref().unwrap().converged);
        // independent two-way least squares: one indicator column per row and per column
        let cells: Vec<(usize, usize)> = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).filter(|&(i, j)| t.is_observed(i, j)).collect();
        let a = DMatrix::from_fn(cells.len(), 8, |r, c| {
            let (i, j) = cells[r];
            if c == i || c == 4 + j { 1.0 } else { 0.0 }
        });
        let b = nalgebra::DVector::from_iterator(cells.len(), cells.iter().map(|&(i, j)| y[(i, j)]));
        let (coef, _) = linalg::lstsq_min_norm(&a, &b, 1e-12);
        assert!((r.prediction(3, 3).unwrap()[0] - (coef[3] + coef[7])).abs() < 1e-8);
    }

    #[test]
    fn oracle_rank_bounds() {
        let full = DMatrix::from_fn(3, 4, |i, j| (i + 1) as f64 * (j as f64 - 1.5));
        let t = PartialTensor::from_matrix(&full, Mask::from_fn(3, 4, |i, j| i != j)).unwrap();
        assert!(truncated_svd_oracle(&t, &full, 4).is_err());
        let r = truncated_svd_oracle(&t, &full, 1).unwrap();
        for i in 0..3 {
            assert!((r.prediction(i, i).unwrap()[0] - full[(i, i)]).abs() < 1e-10);
        }
    }
}
