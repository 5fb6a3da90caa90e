#![allow(dead_code)]

use causal_completion::scm_lab::{
    self, Context, CounterfactualDesign, Intervention, LinearGaussianScm, NodeReplacement, RandomDagParams,
};
use causal_completion::tensor_store::{Mask, PartialTensor};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// The worked 4x4x2 example; only `(3, 3)` is hidden.
pub fn golden_tensor() -> PartialTensor {
    let first = [[1., 1., 1., 1.], [1., 0., 1., 0.], [1., 1., 1., 1.], [0., 0., 0., 0.]];
    let second = [[0., 2., 1., 1.], [1., 1., 1., 1.], [1., 1., 1., 1.], [1., 1., 1., 1.]];
    let slices = [
        DMatrix::from_fn(4, 4, |i, j| first[i][j]),
        DMatrix::from_fn(4, 4, |i, j| second[i][j]),
    ];
    let mask = Mask::from_fn(4, 4, |i, j| !(i == 3 && j == 3));
    PartialTensor::from_coordinates(&slices, mask).unwrap()
}

pub fn rank_of(m: &DMatrix<f64>) -> usize {
    let s = m.clone().svd(false, false).singular_values;
    let top = s.iter().cloned().fold(0.0, f64::max);
    s.iter().filter(|&&v| v > top * 1e-9).count()
}

fn random_lower_row<R: Rng>(rng: &mut R, q: usize, node: usize) -> Vec<f64> {
    (0..q)
        .map(|l| if l < node && rng.gen_bool(0.5) { rng.gen_range(-1.0..1.0) } else { 0.0 })
        .collect()
}

/// Random SCM with nonzero noise means, a mix of observational, do and soft
/// actions, and contexts conditioning on assorted node subsets.
pub fn random_design<R: Rng>(rng: &mut R, q: usize, m: usize, n: usize, p: usize) -> CounterfactualDesign {
    let base = scm_lab::random_scm(
        &RandomDagParams {
            nodes: q,
            ..RandomDagParams::default()
        },
        rng,
    );
    let mu = DVector::from_fn(q, |_, _| rng.gen_range(-1.0..1.0));
    let scm = LinearGaussianScm::new(base.weights().clone(), mu, base.noise_var().clone()).unwrap();
    let actions = (0..m)
        .map(|i| {
            if i == 0 {
                return Intervention::observational();
            }
            let targets: Vec<usize> = (0..q).filter(|_| rng.gen_bool(0.3)).collect();
            let replacements = targets
                .into_iter()
                .map(|node| {
                    if rng.gen_bool(0.5) {
                        NodeReplacement {
                            node,
                            row: vec![0.0; q],
                            noise_mean: rng.gen_range(-2.0..2.0),
                            noise_var: 0.0,
                        }
                    } else {
                        NodeReplacement {
                            node,
                            row: random_lower_row(rng, q, node),
                            noise_mean: rng.gen_range(-1.0..1.0),
                            noise_var: 0.5,
                        }
                    }
                })
                .collect();
            Intervention::soft(replacements)
        })
        .collect();
    let contexts = (0..n)
        .map(|_| {
            let a = rng.gen_range(0..q);
            let mut nodes = vec![a];
            if q > 1 && rng.gen_bool(0.5) {
                let b = (a + rng.gen_range(1..q)) % q;
                nodes.push(b);
            }
            let values = nodes.iter().map(|_| rng.gen_range(-2.0..2.0)).collect();
            Context::new(nodes, values).unwrap()
        })
        .collect();
    let observed = (q - p..q).collect();
    CounterfactualDesign::new(scm, actions, contexts, observed).unwrap()
}

/// `E(E | A_C E = c)` as the minimizer of `(E-μ)ᵀ D⁻¹ (E-μ)` under the
/// linear constraint, from the KKT system. Zero-variance coordinates are
/// pinned to their means.
pub fn kkt_noise_mean(scm: &LinearGaussianScm, ctx: &Context) -> DVector<f64> {
    let q = scm.q();
    let a = (DMatrix::identity(q, q) - scm.weights()).try_inverse().unwrap();
    let nodes = ctx.cond_nodes();
    let k = nodes.len();
    let mut kkt = DMatrix::zeros(q + k, q + k);
    let mut rhs = DVector::zeros(q + k);
    for l in 0..q {
        kkt[(l, l)] = 1.0 / scm.noise_var()[l];
        rhs[l] = scm.noise_mean()[l] / scm.noise_var()[l];
    }
    for (r, &node) in nodes.iter().enumerate() {
        for l in 0..q {
            kkt[(q + r, l)] = a[(node, l)];
            kkt[(l, q + r)] = a[(node, l)];
        }
        rhs[q + r] = ctx.cond_values()[r];
    }
    let sol = kkt.lu().solve(&rhs).unwrap();
    sol.rows(0, q).into_owned()
}

/// Expected observed outcome of action `i` in context `j` by a forward pass
/// in node order: each untargeted node adds its conditioned noise mean,
/// each targeted node its replacement mean.
pub fn forward_mean(design: &CounterfactualDesign, i: usize, j: usize) -> Vec<f64> {
    let scm = &design.scm;
    let q = scm.q();
    let w = kkt_noise_mean(scm, &design.contexts[j]);
    let mut rows: Vec<Vec<f64>> = (0..q).map(|k| scm.weights().row(k).iter().copied().collect()).collect();
    let mut noise: Vec<f64> = w.iter().copied().collect();
    for r in &design.actions[i].replacements {
        rows[r.node] = r.row.clone();
        noise[r.node] = r.noise_mean;
    }
    let mut z = vec![0.0; q];
    for k in 0..q {
        z[k] = noise[k] + (0..k).map(|l| rows[k][l] * z[l]).sum::<f64>();
    }
    design.observed.iter().map(|&o| z[o]).collect()
}

fn stack(blocks: &[DMatrix<f64>], cols: usize) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.nrows()).copy_from(b);
        at += b.nrows();
    }
    out
}

/// Both span conditions for within-rows SI at every missing cell: the
/// target context's factor is in the span of the donor contexts', and the
/// target row's donor-projected factor lies in the span of the training
/// rows'.
pub fn span_inclusion_holds(design: &CounterfactualDesign, mask: &Mask) -> bool {
    let f = scm_lab::factor_decomposition(design).unwrap();
    let omega: Vec<DVector<f64>> = f.contexts.iter().map(scm_lab::onevec).collect();
    let d = omega[0].len();
    mask.missing_cells().into_iter().all(|(i, j)| {
        let donors: Vec<usize> = (0..mask.cols()).filter(|&c| mask.get(i, c)).collect();
        let train: Vec<usize> = (0..mask.rows())
            .filter(|&r| r != i && mask.get(r, j) && donors.iter().all(|&c| mask.get(r, c)))
            .collect();
        let w_c = DMatrix::from_fn(d, donors.len(), |a, b| omega[donors[b]][a]);
        let mut w_cj = w_c.clone().insert_column(donors.len(), 0.0);
        w_cj.set_column(donors.len(), &omega[j]);
        let x = stack(&train.iter().map(|&r| f.actions[r].folded() * &w_c).collect::<Vec<_>>(), donors.len());
        let xi = stack(&[x.clone(), f.actions[i].folded() * &w_c], donors.len());
        rank_of(&w_cj) == rank_of(&w_c) && rank_of(&xi) == rank_of(&x)
    })
}
