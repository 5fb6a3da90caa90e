//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test --test acceptance`; set `PRISM_CSV` to a viability matrix
//! CSV to run the full-scale replication (optional `PRISM_NOBS_LOW`,
//! `PRISM_NOBS_HIGH`, default 100 and 200).

mod common;

use std::time::{Duration, Instant};

use causal_completion::estimators::{
    self, mean_over_contexts_surface, nnm_objective, soft_impute, Centering, Direction, EstimatorConfig, ImputationResult, Method,
};
use causal_completion::harness::{self, EvaluationReport, ExperimentConfig, InputSource, PatternSettings};
use causal_completion::hypothesis_tests::{
    self as ht, Axis, DesignClass, RocConfig, SampleStats, TestOptions,
};
use causal_completion::patterns;
use causal_completion::scm_lab::{self, Context, CounterfactualDesign, LinearGaussianScm};
use causal_completion::tensor_store::{Mask, PartialTensor};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use statrs::distribution::{Binomial, DiscreteCDF};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let took = start.elapsed();
    (took <= limit, format!("{:.2}s of {}s", took.as_secs_f64(), limit.as_secs()))
}

fn si(dir: Direction) -> EstimatorConfig {
    EstimatorConfig::new(Method::SyntheticInterventions).direction(dir)
}

fn close(got: &[f64], want: &[f64], tol: f64) -> bool {
    got.len() == want.len() && got.iter().zip(want).all(|(a, b)| (a - b).abs() <= tol)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let t = common::golden_tensor();
    let rows = estimators::impute(&t, &si(Direction::WithinRows)).unwrap();
    let cols = estimators::impute(&t, &si(Direction::WithinColumns)).unwrap();
    let beta = rows.diagnostics.entries[0].coefficients.clone().unwrap_or_default();
    let alpha = cols.diagnostics.entries[0].coefficients.clone().unwrap_or_default();
    let y_rows = rows.prediction(3, 3).unwrap().to_vec();
    let y_cols = cols.prediction(3, 3).unwrap().to_vec();
    let (fast, took) = within(Duration::from_secs(1), start);
    let ok = close(&y_rows, &[0.0, 1.0], 1e-9)
        && close(&y_cols, &[0.0, 0.6], 1e-9)
        && close(&beta, &[1.0, 1.0, -1.0], 1e-9)
        && close(&alpha, &[0.0, 0.6, 0.0], 1e-9)
        && fast;
    check(
        ok,
        format!("rows {y_rows:.3?} beta {beta:.3?}; columns {y_cols:.3?} alpha {alpha:.3?}; {took}"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut redraws = 0;
    for trial in 0..100 {
        let q = 2 + trial % 7;
        let p = if q > 2 { 2 } else { 1 };
        let (m, n) = (q + 4, q + 5);
        let mask = patterns::square_block(m, n, q + 2).unwrap();
        let design = loop {
            let d = common::random_design(&mut rng, q, m, n, p);
            if common::span_inclusion_holds(&d, &mask) {
                break d;
            }
            redraws += 1;
        };
        let l = scm_lab::expand_design(&design).unwrap();
        let t = l.with_mask(mask).unwrap().poisoned(f64::NAN);
        let r = estimators::impute(&t, &si(Direction::WithinRows)).unwrap();
        for (i, j) in t.mask().missing_cells() {
            let want = l.fiber(i, j);
            let scale = want.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            let err = match r.prediction(i, j) {
                Some(got) => got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale,
                None => f64::INFINITY,
            };
            worst = worst.max(err);
        }
    }
    let (fast, took) = within(Duration::from_secs(30), start);
    check(
        worst <= 1e-8 && fast,
        format!("100 designs (q = 2..8), worst relative error {worst:.2e}, {redraws} redraws; {took}"),
    )
}

fn fe_error(design: &CounterfactualDesign, n_obs: usize) -> f64 {
    let l = scm_lab::expand_design(design).unwrap();
    let (m, n, _) = l.shape();
    let t = l.with_mask(patterns::square_block(m, n, n_obs).unwrap()).unwrap().poisoned(f64::NAN);
    let r = estimators::impute(&t, &EstimatorConfig::new(Method::FixedEffects)).unwrap();
    t.mask()
        .missing_cells()
        .into_iter()
        .map(|(i, j)| (r.prediction(i, j).unwrap()[0] - l.fiber(i, j)[0]).abs())
        .fold(0.0, f64::max)
}

fn criterion_3() -> Outcome {
    let cfg = RocConfig::new(8, 2, 2, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut shared_worst = 0.0f64;
    let mut violated_worst = 0.0f64;
    for _ in 0..20 {
        let d = ht::roc_design(&cfg, DesignClass::SharedTargets, &mut rng).unwrap();
        shared_worst = shared_worst.max(fe_error(&d, 4));
        let d = ht::roc_design(&cfg, DesignClass::PerRowTargets, &mut rng).unwrap();
        violated_worst = violated_worst.max(fe_error(&d, 4));
    }
    check(
        shared_worst <= 1e-9 && violated_worst > 1e-3,
        format!(
            "shared targets: worst error {shared_worst:.2e}; per-row targets: worst error {violated_worst:.3} over 20 designs each"
        ),
    )
}

/// Zero-mean SCM, every context conditioning on the same two nodes.
fn shared_context_design(rng: &mut ChaCha8Rng, q: usize) -> CounterfactualDesign {
    let base = common::random_design(rng, q, 7, 9, 2);
    let scm = LinearGaussianScm::centered(base.scm.weights().clone(), base.scm.noise_var().clone()).unwrap();
    let cond = vec![0, q / 2];
    let contexts = (0..9)
        .map(|_| Context::new(cond.clone(), vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).unwrap())
        .collect();
    CounterfactualDesign::new(scm, base.actions, contexts, base.observed).unwrap()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let q = 3 + k % 6;
        let design = shared_context_design(&mut rng, q);
        let l = scm_lab::expand_design(&design).unwrap();
        let (m, n, p) = l.shape();
        let mut u = DMatrix::from_fn(m * p, n, |r, j| l.fiber(r / p, j)[r % p]);
        for mut row in u.row_iter_mut() {
            let mean = row.mean();
            row.add_scalar_mut(-mean);
        }
        let s = u.singular_values();
        let mut s: Vec<f64> = s.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        if s[0] > 0.0 {
            worst = worst.max(s[2] / s[0]);
        }
    }
    check(worst <= 1e-8, format!("50 designs, |C| = 2, worst σ3/σ1 = {worst:.2e}"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.0, 0.1).unwrap();
    let mut violations = 0;
    let mut smallest_gap = f64::INFINITY;
    for _ in 0..20 {
        let (m, n) = (rng.gen_range(3..12), rng.gen_range(3..12));
        let y = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal) * 2.0);
        let mask = patterns::uniform_random(m, n, 0.7, rng.gen()).unwrap();
        let t = PartialTensor::from_matrix(&y, mask.clone()).unwrap();
        let surface = mean_over_contexts_surface(&t).unwrap();
        let gamma: Vec<f64> = (0..m).map(|i| surface[i * n]).collect();
        let objective = |g: &[f64]| -> f64 {
            (0..m)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|&(i, j)| mask.get(i, j))
                .map(|(i, j)| (y[(i, j)] - g[i]).powi(2))
                .sum()
        };
        let at = objective(&gamma);
        for _ in 0..1000 {
            let moved: Vec<f64> = gamma.iter().map(|g| g + normal.sample(&mut rng)).collect();
            let gap = objective(&moved) - at;
            smallest_gap = smallest_gap.min(gap);
            if gap < -1e-12 {
                violations += 1;
            }
        }
    }
    check(
        violations == 0,
        format!("20 matrices x 1000 perturbations, {violations} improvements, smallest gap {smallest_gap:.2e}"),
    )
}

fn monotone_stages(r: &ImputationResult) -> bool {
    let solver = r.diagnostics.solver.as_ref().unwrap();
    let h = &solver.objective_history;
    let mut bounds = solver.stage_starts.clone();
    bounds.push(h.len());
    bounds.windows(2).all(|w| {
        h[w[0]..w[1]]
            .windows(2)
            .all(|p| p[1] <= p[0] + 1e-12 * p[0].abs().max(1.0))
    })
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let u = DMatrix::from_fn(50, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let v = DMatrix::from_fn(50, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let full = u * v.transpose();
    let mask = patterns::uniform_random(50, 50, 0.8, 6).unwrap();
    let t = PartialTensor::from_matrix(&full, mask.clone()).unwrap().poisoned(f64::NAN);
    let cfg = EstimatorConfig::new(Method::Nnm).lambda(0.0).warm_start(true);
    let r = estimators::impute(&t, &cfg).unwrap();
    let pred = r.predictions.coordinate(0);
    let err = (&pred - &full).norm() / full.norm();
    let monotone = monotone_stages(&r);

    // fixed-λ run from zero, checked against the objective directly
    let plain = soft_impute(&full, &mask, 1.0, None, 1e-9, 500);
    let direct = [nnm_objective(&full, &mask, &plain.solution, 1.0)];
    let plain_monotone = plain
        .objective_history
        .windows(2)
        .all(|p| p[1] <= p[0] + 1e-12 * p[0].abs());
    let consistent = (plain.objective_history.last().unwrap() - direct[0]).abs() <= 1e-8 * direct[0];
    let (fast, took) = within(Duration::from_secs(20), start);
    let iters = r.diagnostics.solver.as_ref().unwrap().iterations;
    check(
        err <= 1e-3 && monotone && plain_monotone && consistent && fast,
        format!("relative error {err:.2e} after {iters} iterations, monotone {}; {took}", monotone && plain_monotone),
    )
}

fn binomial_band(n: u64, p: f64) -> (u64, u64) {
    let b = Binomial::new(p, n).unwrap();
    let lo = (0..=n).find(|&k| b.cdf(k) >= 0.005).unwrap();
    let hi = (0..=n).find(|&k| b.cdf(k) >= 0.995).unwrap();
    (lo, hi)
}

fn normal_samples(rng: &mut ChaCha8Rng, mean: f64, sd: f64, ns: usize) -> Vec<f64> {
    (0..ns).map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn null_rejections(replicates: usize, seed: u64, mut p_value: impl FnMut(&mut ChaCha8Rng) -> f64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..replicates).filter(|_| p_value(&mut rng) < 0.05).count() as u64
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let opts = TestOptions::default();
    let ns = 10;
    let reps = 500;
    let (lo, hi) = binomial_band(reps as u64, 0.05);

    let f_rej = null_rejections(reps, 71, |rng| {
        let cells = vec![normal_samples(rng, 1.0, 2.0, ns), normal_samples(rng, -3.0, 2.0, ns)];
        let stats = SampleStats::from_samples(1, 2, &cells).unwrap();
        ht::f_test_homoscedasticity(&stats, Axis::WithinRows, &opts).unwrap().entries[0].p_value
    });
    // additive means, variance constant along each row; ν̂ is built for
    // this case but undercounts the contrast's dof, so small ns runs
    // conservative and the null is checked at 50 samples per cell
    let welch_rej = null_rejections(reps, 72, |rng| {
        let (a, b) = ([0.0, 2.0], [1.0, -1.5]);
        let sd = [1.0, 2.0];
        let cells: Vec<Vec<f64>> = (0..4)
            .map(|c| normal_samples(rng, a[c / 2] + b[c % 2], sd[c / 2], 50))
            .collect();
        let stats = SampleStats::from_samples(2, 2, &cells).unwrap();
        ht::welch_fe_test(&stats, &opts).unwrap().entries[0].p_value
    });
    let one_way_rej = null_rejections(reps, 73, |rng| {
        let cells = vec![normal_samples(rng, 4.0, 1.0, ns), normal_samples(rng, 4.0, 1.7, ns)];
        let stats = SampleStats::from_samples(1, 2, &cells).unwrap();
        ht::one_way_fe_test(&stats, Axis::WithinRows, &opts).unwrap().entries[0].p_value
    });
    let calibrated = [f_rej, welch_rej, one_way_rej].iter().all(|&r| (lo..=hi).contains(&r));

    let dof_exact = [2usize, 5, 10, 100].iter().all(|&ns| {
        [0.3, 1.0, 17.0].iter().all(|&s| ht::welch_dof(s, s, ns) == 2.0 * (ns as f64 - 1.0))
    });

    let mut grid = Vec::new();
    for &m in &[10usize, 20, 40] {
        for &ns in &[10usize, 100] {
            let res = ht::roc_experiment(&RocConfig::new(m, ns, 200, 7)).unwrap();
            grid.push(((m, ns), res.auc));
        }
    }
    let auc = |m: usize, ns: usize| grid.iter().find(|g| g.0 == (m, ns)).unwrap().1;
    let top = auc(40, 100);
    let mut ordered = true;
    for &ns in &[10, 100] {
        ordered &= auc(20, ns) >= auc(10, ns) - 0.02 && auc(40, ns) >= auc(20, ns) - 0.02;
    }
    for &m in &[10, 20, 40] {
        ordered &= auc(m, 100) >= auc(m, 10) - 0.02;
    }
    let (fast, took) = within(Duration::from_secs(300), start);
    let table: Vec<String> = grid.iter().map(|((m, ns), a)| format!("({m},{ns}) {a:.4}")).collect();
    check(
        calibrated && dof_exact && top >= 0.95 && ordered && fast,
        format!(
            "H0 rejections of 500: F {f_rej}, two-way {welch_rej}, one-way {one_way_rej} (band {lo}..={hi}); dof exact {dof_exact}; AUC {}; {took}",
            table.join(", ")
        ),
    )
}

fn transposed_gap(t: &PartialTensor, cfg: &EstimatorConfig) -> f64 {
    let a = estimators::impute(t, cfg).unwrap().predictions.coordinate(0);
    let b = estimators::impute(&t.transpose(), cfg).unwrap().predictions.coordinate(0);
    (&a - b.transpose()).amax() / a.amax().max(1.0)
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let configs = [
        (EstimatorConfig::new(Method::FixedEffects), 1e-10),
        (EstimatorConfig::new(Method::Nnm).lambda(0.5).tol(1e-10), 1e-6),
        (EstimatorConfig::new(Method::NnmFe).lambda(0.01).tol(1e-10).max_iter(200_000), 1e-6),
        (si(Direction::WithinRows), 1e-8),
    ];
    let mut worst = vec![0.0f64; configs.len()];
    for _ in 0..20 {
        let side = rng.gen_range(6..14);
        let rank = rng.gen_range(1..4);
        let u = DMatrix::from_fn(side, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = DMatrix::from_fn(side, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
        let effects = DVector::from_fn(side, |_, _| rng.gen_range(-2.0..2.0));
        let full = DMatrix::from_fn(side, side, |i, j| (&u * v.transpose())[(i, j)] + effects[i]);
        let n_obs = rng.gen_range(rank + 2..side);
        let t = PartialTensor::from_matrix(&full, patterns::square_block(side, side, n_obs).unwrap()).unwrap();
        for (k, (cfg, _)) in configs.iter().enumerate() {
            worst[k] = worst[k].max(transposed_gap(&t, cfg));
        }
    }
    let symmetric = configs.iter().zip(&worst).all(|((_, tol), w)| w <= tol);

    let golden = common::golden_tensor();
    let rows = estimators::impute(&golden, &si(Direction::WithinRows)).unwrap();
    let cols = estimators::impute(&golden, &si(Direction::WithinColumns)).unwrap();
    let tensor_gap = (rows.prediction(3, 3).unwrap()[1] - cols.prediction(3, 3).unwrap()[1]).abs();

    let witness = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 5.0, 0.0]);
    let t = PartialTensor::from_matrix(&witness, Mask::from_fn(2, 2, |i, j| i + j < 2)).unwrap();
    let means_gap = transposed_gap(&t, &EstimatorConfig::new(Method::MeanOverContexts));

    let labels: Vec<String> = configs
        .iter()
        .zip(&worst)
        .map(|((c, _), w)| format!("{} {w:.1e}", c.label()))
        .collect();
    check(
        symmetric && tensor_gap > 0.1 && means_gap > 0.1,
        format!(
            "transpose gaps over 20 instances: {}; tensor SI rows vs columns differ by {tensor_gap:.2}; mean witness gap {means_gap:.2}",
            labels.join(", ")
        ),
    )
}

fn env_usize(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn prism_report(truth: &PartialTensor, n_obs: usize, estimators: Vec<EstimatorConfig>) -> EvaluationReport {
    let cfg = ExperimentConfig {
        input: InputSource::InMemory {
            truth: truth.clone(),
            noisy: None,
        },
        pattern: PatternSettings::SquareBlock { n_obs },
        estimators,
        shuffles: 20,
        seed: 0,
        crop: Some([289, 289]),
        killer_threshold: None,
        baseline: Default::default(),
        lambda_grid: None,
    };
    harness::run_experiment(&cfg).unwrap()
}

fn criterion_9() -> Outcome {
    let Ok(path) = std::env::var("PRISM_CSV") else {
        return Outcome::Skip("PRISM_CSV not set; the full-scale replication needs the external dataset".into());
    };
    let truth = match harness::load_matrix(&path) {
        Ok(t) => t,
        Err(e) => return Outcome::Fail(format!("cannot load {path}: {e}")),
    };
    let (low, high) = (env_usize("PRISM_NOBS_LOW", 100), env_usize("PRISM_NOBS_HIGH", 200));

    let complete = if truth.mask().count_observed() == truth.rows() * truth.cols() {
        truth.clone()
    } else {
        let r = estimators::impute(&truth, &EstimatorConfig::new(Method::MeanOverContexts)).unwrap();
        r.predictions.with_mask(Mask::full(truth.rows(), truth.cols())).unwrap()
    };
    let spectrum = harness::svd_report(&complete, &[10], None).unwrap();
    let explained = spectrum.explained_variance[0].1;

    let lineup = || {
        vec![
            si(Direction::WithinRows),
            EstimatorConfig::new(Method::SiCentered).centering(Centering::MeanOverContexts),
            EstimatorConfig::new(Method::SiCentered).centering(Centering::FixedEffects),
            EstimatorConfig::new(Method::MeanOverContexts),
            EstimatorConfig::new(Method::FixedEffects),
            EstimatorConfig::new(Method::Nnm).lambda(1e-3).warm_start(true),
        ]
    };
    let medians = |report: &EvaluationReport| -> Vec<f64> { report.summaries.iter().map(|s| s.median).collect() };
    let low_report = prism_report(&truth, low, lineup());
    let high_report = prism_report(&truth, high, lineup());
    let baseline: Vec<f64> = low_report.baseline_mse.iter().copied().filter(|v| v.is_finite()).collect();
    let baseline = baseline.iter().sum::<f64>() / baseline.len().max(1) as f64;
    let (lo_med, hi_med) = (medians(&low_report), medians(&high_report));
    let best_si = |m: &[f64]| m[..3].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let best_other = |m: &[f64]| m[3..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let si_best = best_si(&lo_med) >= best_other(&lo_med);
    let nnm_gap_low = best_si(&lo_med) - lo_med[5];
    let nnm_gap_high = best_si(&hi_med) - hi_med[5];
    check(
        (baseline - 0.87).abs() <= 0.05
            && (explained - 0.78).abs() <= 0.02
            && si_best
            && nnm_gap_high < nnm_gap_low,
        format!(
            "baseline MSE {baseline:.3}, top-10 explained variance {explained:.3}, SI best at n_obs={low} {si_best}, NNM gap {nnm_gap_low:.3} -> {nnm_gap_high:.3}"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("worked tensor SI values", criterion_1),
        ("SI consistency on anchored designs", criterion_2),
        ("FE consistency and its failure witness", criterion_3),
        ("rank of the row-centered unfolding", criterion_4),
        ("mean-over-contexts optimality", criterion_5),
        ("NNM recovery and monotone objective", criterion_6),
        ("test calibration, dof and ROC", criterion_7),
        ("symmetry ledger", criterion_8),
        ("PRISM replication", criterion_9),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let line = match run() {
            Outcome::Pass(d) => format!("PASS criterion {} ({name}): {d}", k + 1),
            Outcome::Fail(d) => {
                failed += 1;
                format!("FAIL criterion {} ({name}): {d}", k + 1)
            }
            Outcome::Skip(d) => format!("SKIP criterion {} ({name}): {d}", k + 1),
        };
        println!("{line}");
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
