//! Linear Gaussian structural causal models and the counterfactual outcome
//! tensors they induce.
//!
//! Weight convention: `weights[(k, l)]` is the coefficient of `Z_l` in the
//! mechanism of `Z_k`, so `Z = B Z + E` and `Z = (I - B)^-1 E`. Nodes are
//! stored in topological order, which makes `B` strictly lower triangular.
//!
//! An outcome cell `(i, j)` is obtained by first conditioning the exogenous
//! noise on context `j` (`Z_C = c`) and then applying intervention `i`. Its
//! expectation factors as `U_i v_i + U'_i w_j`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor_store::PartialTensor;
use crate::util;

/// Relative pivot floor below which a conditioning block is treated as singular.
const SINGULAR_PIVOT: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianScm {
    weights: DMatrix<f64>,
    noise_mean: DVector<f64>,
    noise_var: DVector<f64>,
    node_names: Vec<String>,
}

fn check_lower_triangular(row: &[f64], node: usize) -> Result<()> {
    for (l, &w) in row.iter().enumerate().skip(node) {
        if w != 0.0 {
            return Err(Error::NotAcyclic { node, offending: l });
        }
    }
    Ok(())
}

impl LinearGaussianScm {
    pub fn new(weights: DMatrix<f64>, noise_mean: DVector<f64>, noise_var: DVector<f64>) -> Result<Self> {
        let q = weights.nrows();
        if q == 0 || !weights.is_square() {
            return Err(Error::InvalidModel(format!(
                "weight matrix must be square and nonempty, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        if noise_mean.len() != q || noise_var.len() != q {
            return Err(Error::InvalidModel(format!(
                "noise parameters must have length {q}"
            )));
        }
        for k in 0..q {
            let row: Vec<f64> = weights.row(k).iter().copied().collect();
            check_lower_triangular(&row, k)?;
        }
        if weights.iter().any(|w| !w.is_finite()) || noise_mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidModel("non-finite weights or noise means".into()));
        }
        if let Some(k) = noise_var.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidModel(format!(
                "noise variance of node {k} must be strictly positive"
            )));
        }
        Ok(LinearGaussianScm {
            weights,
            noise_mean,
            noise_var,
            node_names: (0..q).map(|k| format!("Z{}", k + 1)).collect(),
        })
    }

    /// Zero-mean SCM with the given noise variances.
    pub fn centered(weights: DMatrix<f64>, noise_var: DVector<f64>) -> Result<Self> {
        let q = weights.nrows();
        Self::new(weights, DVector::zeros(q), noise_var)
    }

    pub fn with_node_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.q() {
            return Err(Error::InvalidModel(format!(
                "expected {} node names, got {}",
                self.q(),
                names.len()
            )));
        }
        self.node_names = names;
        Ok(self)
    }

    pub fn q(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn noise_mean(&self) -> &DVector<f64> {
        &self.noise_mean
    }

    pub fn noise_var(&self) -> &DVector<f64> {
        &self.noise_var
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn has_zero_noise_mean(&self) -> bool {
        self.noise_mean.iter().all(|&m| m == 0.0)
    }

    /// `I - B`.
    pub fn mechanism_matrix(&self) -> DMatrix<f64> {
        DMatrix::identity(self.q(), self.q()) - &self.weights
    }

    /// `(I - B)^-1`: maps exogenous noise to node values.
    pub fn total_effects(&self) -> Result<DMatrix<f64>> {
        linalg::invert(&self.mechanism_matrix())
    }

    /// `E(Z) = (I - B)^-1 mu_eps`.
    pub fn node_mean(&self) -> Result<DVector<f64>> {
        Ok(self.total_effects()? * &self.noise_mean)
    }

    /// `Cov(Z) = (I - B)^-1 diag(sigma^2) (I - B)^-T`.
    pub fn node_covariance(&self) -> Result<DMatrix<f64>> {
        let t = self.total_effects()?;
        Ok(&t * DMatrix::from_diagonal(&self.noise_var) * t.transpose())
    }
}

/// Replacement mechanism for one intervened node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeReplacement {
    pub node: usize,
    /// New row of the weight matrix for `node`; must stay lower triangular.
    pub row: Vec<f64>,
    pub noise_mean: f64,
    /// Zero only for do-interventions.
    pub noise_var: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Intervention {
    pub replacements: Vec<NodeReplacement>,
}

impl Intervention {
    /// No intervention (the control action).
    pub fn observational() -> Self {
        Intervention::default()
    }

    /// `do(Z_k = a)` for each `(k, a)`: empty parent row, fixed value.
    pub fn do_values(q: usize, assignments: &[(usize, f64)]) -> Self {
        Intervention {
            replacements: assignments
                .iter()
                .map(|&(node, value)| NodeReplacement {
                    node,
                    row: vec![0.0; q],
                    noise_mean: value,
                    noise_var: 0.0,
                })
                .collect(),
        }
    }

    pub fn soft(replacements: Vec<NodeReplacement>) -> Self {
        Intervention { replacements }
    }

    pub fn targets(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self.replacements.iter().map(|r| r.node).collect();
        t.sort_unstable();
        t
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        let mut seen = vec![false; q];
        for r in &self.replacements {
            if r.node >= q {
                return Err(Error::IndexOutOfRange { index: r.node, len: q });
            }
            if seen[r.node] {
                return Err(Error::InvalidModel(format!(
                    "node {} is intervened on twice",
                    r.node
                )));
            }
            seen[r.node] = true;
            if r.row.len() != q {
                return Err(Error::InvalidModel(format!(
                    "replacement row for node {} has length {}, expected {q}",
                    r.node,
                    r.row.len()
                )));
            }
            check_lower_triangular(&r.row, r.node)?;
            if !r.noise_mean.is_finite() || !(r.noise_var.is_finite() && r.noise_var >= 0.0) {
                return Err(Error::InvalidModel(format!(
                    "invalid replacement noise for node {}",
                    r.node
                )));
            }
        }
        Ok(())
    }
}

/// Conditioning event `Z_C = c` defining one context.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    cond_nodes: Vec<usize>,
    cond_values: Vec<f64>,
}

impl Context {
    pub fn new(cond_nodes: Vec<usize>, cond_values: Vec<f64>) -> Result<Self> {
        if cond_nodes.len() != cond_values.len() {
            return Err(Error::InvalidModel(format!(
                "{} conditioning nodes but {} values",
                cond_nodes.len(),
                cond_values.len()
            )));
        }
        let mut sorted = cond_nodes.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::SingularConditioning { nodes: cond_nodes });
        }
        if cond_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite conditioning value".into()));
        }
        Ok(Context {
            cond_nodes,
            cond_values,
        })
    }

    /// No conditioning.
    pub fn unconditioned() -> Self {
        Context {
            cond_nodes: Vec::new(),
            cond_values: Vec::new(),
        }
    }

    pub fn cond_nodes(&self) -> &[usize] {
        &self.cond_nodes
    }

    pub fn cond_values(&self) -> &[f64] {
        &self.cond_values
    }
}

/// Posterior of the exogenous noise given a context.
#[derive(Debug, Clone)]
pub struct NoisePosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

fn check_nodes(scm: &LinearGaussianScm, nodes: &[usize]) -> Result<()> {
    for &k in nodes {
        if k >= scm.q() {
            return Err(Error::IndexOutOfRange { index: k, len: scm.q() });
        }
    }
    Ok(())
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

/// Cholesky of the conditioning block with a relative pivot check.
fn conditioning_block(
    cov: &DMatrix<f64>,
    nodes: &[usize],
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let block = submatrix(cov, nodes, nodes);
    let scale = block.diagonal().amax();
    let chol = block
        .cholesky()
        .ok_or_else(|| Error::SingularConditioning { nodes: nodes.to_vec() })?;
    let l = chol.l_dirty();
    let min_pivot = (0..nodes.len()).map(|k| l[(k, k)] * l[(k, k)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > SINGULAR_PIVOT * scale) {
        return Err(Error::SingularConditioning { nodes: nodes.to_vec() });
    }
    Ok(chol)
}

/// Posterior noise mean `w = E(E | Z_C = c) = (I - B) E(Z | Z_C = c)`.
pub fn condition_noise_mean(scm: &LinearGaussianScm, ctx: &Context) -> Result<DVector<f64>> {
    let nodes = ctx.cond_nodes();
    check_nodes(scm, nodes)?;
    if nodes.is_empty() {
        return Ok(scm.noise_mean().clone());
    }
    let cov = scm.node_covariance()?;
    let mu = scm.node_mean()?;
    let chol = conditioning_block(&cov, nodes)?;
    let shift = DVector::from_iterator(
        nodes.len(),
        nodes.iter().zip(ctx.cond_values()).map(|(&k, &c)| c - mu[k]),
    );
    let all: Vec<usize> = (0..scm.q()).collect();
    let cross = submatrix(&cov, &all, nodes);
    let mut z_mean = &mu + cross * chol.solve(&shift);
    // conditioned coordinates are pinned exactly
    for (&k, &c) in nodes.iter().zip(ctx.cond_values()) {
        z_mean[k] = c;
    }
    Ok(scm.mechanism_matrix() * z_mean)
}

/// Full Gaussian posterior of the noise given the context, from the joint
/// law of `(E, Z_C)`. Used for sampling.
pub fn condition_noise(scm: &LinearGaussianScm, ctx: &Context) -> Result<NoisePosterior> {
    let nodes = ctx.cond_nodes();
    check_nodes(scm, nodes)?;
    let prior_cov = DMatrix::from_diagonal(scm.noise_var());
    if nodes.is_empty() {
        return Ok(NoisePosterior {
            mean: scm.noise_mean().clone(),
            covariance: prior_cov,
        });
    }
    let t = scm.total_effects()?;
    let cov = scm.node_covariance()?;
    let chol = conditioning_block(&cov, nodes)?;
    // Cov(E, Z_C) = diag(sigma^2) (I - B)^-T restricted to columns C
    let t_c = DMatrix::from_fn(nodes.len(), scm.q(), |a, l| t[(nodes[a], l)]);
    let cross = &prior_cov * t_c.transpose();
    let gain = chol.solve(&cross.transpose()).transpose();
    let covariance = &prior_cov - &gain * cross.transpose();
    let mean = condition_noise_mean(scm, ctx)?;
    Ok(NoisePosterior { mean, covariance })
}

fn conditional_gain(scm: &LinearGaussianScm, nodes: &[usize]) -> Result<(DMatrix<f64>, Vec<usize>)> {
    check_nodes(scm, nodes)?;
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::SingularConditioning { nodes: nodes.to_vec() });
    }
    let cov = scm.node_covariance()?;
    let chol = conditioning_block(&cov, nodes)?;
    let rest: Vec<usize> = (0..scm.q()).filter(|k| !nodes.contains(k)).collect();
    let cross = submatrix(&cov, &rest, nodes);
    // Sigma_{rest,C} Sigma_CC^-1
    let gain = chol.solve(&cross.transpose()).transpose();
    Ok((gain, rest))
}

/// `W` with `w_j = W c_j` for every context on `cond_nodes` (zero noise
/// means). Columns follow the order of `cond_nodes`.
pub fn context_factor_matrix(scm: &LinearGaussianScm, cond_nodes: &[usize]) -> Result<DMatrix<f64>> {
    if !scm.has_zero_noise_mean() {
        return Err(Error::InvalidModel(
            "nonzero noise means need the augmented context factor matrix".into(),
        ));
    }
    let augmented = augmented_context_factor_matrix(scm, cond_nodes)?;
    Ok(augmented.columns(1, cond_nodes.len()).into_owned())
}

/// `q x (1 + |C|)` matrix `W'` with `w_j = W' (1, c_j)` for arbitrary noise
/// means. The leading column is the context-independent offset.
pub fn augmented_context_factor_matrix(scm: &LinearGaussianScm, cond_nodes: &[usize]) -> Result<DMatrix<f64>> {
    let q = scm.q();
    let c = cond_nodes.len();
    let mut m = DMatrix::zeros(q, 1 + c);
    if c == 0 {
        m.set_column(0, &scm.node_mean()?);
        return Ok(scm.mechanism_matrix() * m);
    }
    let (gain, rest) = conditional_gain(scm, cond_nodes)?;
    let mu = scm.node_mean()?;
    let mu_c = DVector::from_iterator(c, cond_nodes.iter().map(|&k| mu[k]));
    let mu_rest = DVector::from_iterator(rest.len(), rest.iter().map(|&k| mu[k]));
    let offset = mu_rest - &gain * mu_c;
    for (a, &k) in rest.iter().enumerate() {
        m[(k, 0)] = offset[a];
        for b in 0..c {
            m[(k, 1 + b)] = gain[(a, b)];
        }
    }
    for (b, &k) in cond_nodes.iter().enumerate() {
        m[(k, 1 + b)] = 1.0;
    }
    Ok(scm.mechanism_matrix() * m)
}

/// The model after an intervention: `Z(i) = (I - B_i)^-1 (E~ + 1_{not A_i} E)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervenedModel {
    pub weights: DMatrix<f64>,
    /// `targeted[k]` is true for `k` in `A_i`.
    pub targeted: Vec<bool>,
    /// `v_i = E(E~)`, zero outside the targets.
    pub fresh_mean: DVector<f64>,
    /// Variance of `E~`, zero outside the targets.
    pub fresh_var: DVector<f64>,
}

impl IntervenedModel {
    pub fn total_effects(&self) -> Result<DMatrix<f64>> {
        let q = self.weights.nrows();
        linalg::invert(&(DMatrix::identity(q, q) - &self.weights))
    }
}

pub fn apply_intervention(scm: &LinearGaussianScm, iv: &Intervention) -> Result<IntervenedModel> {
    let q = scm.q();
    iv.validate(q)?;
    let mut weights = scm.weights().clone();
    let mut targeted = vec![false; q];
    let mut fresh_mean = DVector::zeros(q);
    let mut fresh_var = DVector::zeros(q);
    for r in &iv.replacements {
        for (l, &w) in r.row.iter().enumerate() {
            weights[(r.node, l)] = w;
        }
        targeted[r.node] = true;
        fresh_mean[r.node] = r.noise_mean;
        fresh_var[r.node] = r.noise_var;
    }
    Ok(IntervenedModel {
        weights,
        targeted,
        fresh_mean,
        fresh_var,
    })
}

/// Actions x contexts x observed nodes.
#[derive(Debug, Clone)]
pub struct CounterfactualDesign {
    pub scm: LinearGaussianScm,
    pub actions: Vec<Intervention>,
    pub contexts: Vec<Context>,
    pub observed: Vec<usize>,
    pub action_labels: Vec<String>,
    pub context_labels: Vec<String>,
}

impl CounterfactualDesign {
    pub fn new(
        scm: LinearGaussianScm,
        actions: Vec<Intervention>,
        contexts: Vec<Context>,
        observed: Vec<usize>,
    ) -> Result<Self> {
        if actions.is_empty() || contexts.is_empty() || observed.is_empty() {
            return Err(Error::InvalidModel(
                "a design needs at least one action, one context and one observed node".into(),
            ));
        }
        for a in &actions {
            a.validate(scm.q())?;
        }
        for c in &contexts {
            check_nodes(&scm, c.cond_nodes())?;
        }
        check_nodes(&scm, &observed)?;
        let action_labels = (0..actions.len()).map(|i| format!("a{}", i + 1)).collect();
        let context_labels = (0..contexts.len()).map(|j| format!("c{}", j + 1)).collect();
        Ok(CounterfactualDesign {
            scm,
            actions,
            contexts,
            observed,
            action_labels,
            context_labels,
        })
    }

    pub fn with_labels(mut self, actions: Vec<String>, contexts: Vec<String>) -> Result<Self> {
        if actions.len() != self.actions.len() || contexts.len() != self.contexts.len() {
            return Err(Error::InvalidModel("label counts do not match the design".into()));
        }
        self.action_labels = actions;
        self.context_labels = contexts;
        Ok(self)
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn n_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn n_observed(&self) -> usize {
        self.observed.len()
    }

    /// Contexts all condition on the same node list.
    pub fn shared_cond_nodes(&self) -> Option<&[usize]> {
        let first = self.contexts[0].cond_nodes();
        self.contexts
            .iter()
            .all(|c| c.cond_nodes() == first)
            .then_some(first)
    }
}

/// Per-action factors of the expected outcome.
#[derive(Debug, Clone)]
pub struct ActionFactors {
    /// `U_i`: rows `X` of `(I - B_i)^-1`, `p x q`.
    pub total_effects: DMatrix<f64>,
    /// `U'_i = U_i` with the target columns zeroed.
    pub masked_effects: DMatrix<f64>,
    /// `v_i`.
    pub fresh_mean: DVector<f64>,
}

impl ActionFactors {
    /// `[U_i v_i | U'_i]`, `p x (1 + q)`.
    pub fn folded(&self) -> DMatrix<f64> {
        let p = self.total_effects.nrows();
        let q = self.total_effects.ncols();
        let mut out = DMatrix::zeros(p, 1 + q);
        out.set_column(0, &(&self.total_effects * &self.fresh_mean));
        out.columns_mut(1, q).copy_from(&self.masked_effects);
        out
    }

    /// `U_i v_i`, the fixed action effect.
    pub fn fixed_effect(&self) -> DVector<f64> {
        &self.total_effects * &self.fresh_mean
    }
}

#[derive(Debug, Clone)]
pub struct FactorDecomposition {
    pub actions: Vec<ActionFactors>,
    /// `w_j` per context.
    pub contexts: Vec<DVector<f64>>,
    /// `W` when every context conditions on the same nodes and the noise
    /// means are zero.
    pub shared_context_matrix: Option<DMatrix<f64>>,
}

impl FactorDecomposition {
    /// `U_i v_i + U'_i w_j`.
    pub fn reconstruct(&self, i: usize, j: usize) -> DVector<f64> {
        let a = &self.actions[i];
        a.fixed_effect() + &a.masked_effects * &self.contexts[j]
    }
}

/// Prepends a one: `(1, v_1, ..., v_d)`.
pub fn onevec(v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(v.len() + 1);
    out[0] = 1.0;
    out.rows_mut(1, v.len()).copy_from(v);
    out
}

fn action_factors(scm: &LinearGaussianScm, iv: &Intervention, observed: &[usize]) -> Result<ActionFactors> {
    let model = apply_intervention(scm, iv)?;
    let full = model.total_effects()?;
    let total_effects = DMatrix::from_fn(observed.len(), scm.q(), |a, l| full[(observed[a], l)]);
    let mut masked_effects = total_effects.clone();
    for (k, &t) in model.targeted.iter().enumerate() {
        if t {
            masked_effects.column_mut(k).fill(0.0);
        }
    }
    Ok(ActionFactors {
        total_effects,
        masked_effects,
        fresh_mean: model.fresh_mean,
    })
}

pub fn factor_decomposition(design: &CounterfactualDesign) -> Result<FactorDecomposition> {
    let actions = design
        .actions
        .iter()
        .map(|iv| action_factors(&design.scm, iv, &design.observed))
        .collect::<Result<Vec<_>>>()?;
    let contexts = design
        .contexts
        .iter()
        .map(|c| condition_noise_mean(&design.scm, c))
        .collect::<Result<Vec<_>>>()?;
    let shared_context_matrix = match design.shared_cond_nodes() {
        Some(nodes) if design.scm.has_zero_noise_mean() => {
            Some(context_factor_matrix(&design.scm, nodes)?)
        }
        _ => None,
    };
    Ok(FactorDecomposition {
        actions,
        contexts,
        shared_context_matrix,
    })
}

/// `E(Y_ij) = E(Z_X(i) | I_C = j)`.
pub fn counterfactual_mean(design: &CounterfactualDesign, i: usize, j: usize) -> Result<DVector<f64>> {
    let iv = design
        .actions
        .get(i)
        .ok_or(Error::IndexOutOfRange { index: i, len: design.n_actions() })?;
    let ctx = design
        .contexts
        .get(j)
        .ok_or(Error::IndexOutOfRange { index: j, len: design.n_contexts() })?;
    let factors = action_factors(&design.scm, iv, &design.observed)?;
    let w = condition_noise_mean(&design.scm, ctx)?;
    Ok(factors.fixed_effect() + &factors.masked_effects * w)
}

/// Expected tensor `L`, fully observed.
pub fn expand_design(design: &CounterfactualDesign) -> Result<PartialTensor> {
    let factors = factor_decomposition(design)?;
    let (m, n, p) = (design.n_actions(), design.n_contexts(), design.n_observed());
    let mut values = Vec::with_capacity(m * n * p);
    for i in 0..m {
        let fixed = factors.actions[i].fixed_effect();
        for j in 0..n {
            let cell = &fixed + &factors.actions[i].masked_effects * &factors.contexts[j];
            values.extend(cell.iter());
        }
    }
    PartialTensor::dense(m, n, p, values)?
        .with_labels(design.action_labels.clone(), design.context_labels.clone())
}

/// Per-cell sample means and unbiased variances.
#[derive(Debug, Clone)]
pub struct SampledDesign {
    pub means: PartialTensor,
    /// Same layout as the tensor values; NaN when `ns == 1`.
    pub variances: Vec<f64>,
    pub ns: usize,
}

impl SampledDesign {
    pub fn variance(&self, i: usize, j: usize, k: usize) -> f64 {
        let (_, cols, depth) = self.means.shape();
        self.variances[(i * cols + j) * depth + k]
    }
}

/// Draws `ns` counterfactual samples per cell: noise from its Gaussian
/// posterior given the context, targeted coordinates replaced by fresh
/// intervention noise, pushed through `(I - B_i)^-1`. Each cell uses its own
/// stream derived from `(seed, i, j)`.
pub fn sample_design(design: &CounterfactualDesign, ns: usize, seed: u64) -> Result<SampledDesign> {
    if ns < 1 {
        return Err(Error::InvalidParameter("samples per cell must be at least 1".into()));
    }
    let q = design.scm.q();
    let (m, n, p) = (design.n_actions(), design.n_contexts(), design.n_observed());
    let actions = design
        .actions
        .iter()
        .map(|iv| {
            let model = apply_intervention(&design.scm, iv)?;
            let f = action_factors(&design.scm, iv, &design.observed)?;
            let fresh_sd = model.fresh_var.map(f64::sqrt);
            Ok((f, fresh_sd))
        })
        .collect::<Result<Vec<_>>>()?;
    let posteriors = design
        .contexts
        .iter()
        .map(|c| {
            let post = condition_noise(&design.scm, c)?;
            Ok((post.mean, linalg::psd_factor(&post.covariance)))
        })
        .collect::<Result<Vec<_>>>()?;

    let cells = util::map_indices(m * n, |cell| {
        let (i, j) = (cell / n, cell % n);
        let (f, fresh_sd) = &actions[i];
        let (post_mean, post_factor) = &posteriors[j];
        let mean = f.fixed_effect() + &f.masked_effects * post_mean;
        let context_map = &f.masked_effects * post_factor;
        let fresh_map = &f.total_effects * DMatrix::from_diagonal(fresh_sd);
        let mut rng = util::stream(seed, &[i as u64, j as u64]);
        let mut z = DVector::zeros(q);
        let mut z_fresh = DVector::zeros(q);
        let mut acc_mean = vec![0.0; p];
        let mut acc_m2 = vec![0.0; p];
        for s in 0..ns {
            for k in 0..q {
                z[k] = StandardNormal.sample(&mut rng);
            }
            for k in 0..q {
                z_fresh[k] = StandardNormal.sample(&mut rng);
            }
            let y = &mean + &context_map * &z + &fresh_map * &z_fresh;
            // Welford update
            let count = (s + 1) as f64;
            for k in 0..p {
                let delta = y[k] - acc_mean[k];
                acc_mean[k] += delta / count;
                acc_m2[k] += delta * (y[k] - acc_mean[k]);
            }
        }
        let vars: Vec<f64> = acc_m2
            .iter()
            .map(|m2| if ns > 1 { m2 / (ns - 1) as f64 } else { f64::NAN })
            .collect();
        (acc_mean, vars)
    });

    let mut values = Vec::with_capacity(m * n * p);
    let mut variances = Vec::with_capacity(m * n * p);
    for (mu, var) in cells {
        values.extend(mu);
        variances.extend(var);
    }
    let means = PartialTensor::dense(m, n, p, values)?
        .with_labels(design.action_labels.clone(), design.context_labels.clone())?;
    Ok(SampledDesign { means, variances, ns })
}

/// Parameters of the random DAG generator.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RandomDagParams {
    pub nodes: usize,
    pub edge_prob: f64,
    pub weight_low: f64,
    pub weight_high: f64,
    pub noise_var: f64,
}

impl Default for RandomDagParams {
    fn default() -> Self {
        RandomDagParams {
            nodes: 6,
            edge_prob: 0.5,
            weight_low: 0.25,
            weight_high: 1.0,
            noise_var: 1.0,
        }
    }
}

/// Random zero-mean linear Gaussian SCM: each lower-triangular edge present
/// with probability `edge_prob`, weights uniform on
/// `[-high, -low] ∪ [low, high]`.
pub fn random_scm<R: Rng + ?Sized>(params: &RandomDagParams, rng: &mut R) -> LinearGaussianScm {
    let q = params.nodes;
    let mut weights = DMatrix::zeros(q, q);
    for k in 0..q {
        for l in 0..k {
            if rng.gen_bool(params.edge_prob) {
                let magnitude = rng.gen_range(params.weight_low..=params.weight_high);
                weights[(k, l)] = if rng.gen_bool(0.5) { magnitude } else { -magnitude };
            }
        }
    }
    LinearGaussianScm::centered(weights, DVector::from_element(q, params.noise_var))
        .expect("generated weights are lower triangular")
}
