//! Browser bindings. Every export takes plain values or JSON text and returns
//! JSON text, so the page needs no generated type glue beyond strings.

use causal_completion::estimators::{Centering, EstimatorConfig, Method};
use causal_completion::harness::{self, ExperimentConfig, InputSource, PatternSettings};
use causal_completion::hypothesis_tests::{self as ht, Axis, SampleStats, TestOptions};
use causal_completion::scm_lab::{self, CounterfactualDesign};
use causal_completion::tensor_store::PartialTensor;
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const DEFAULT_DESIGN: &str = include_str!("../../../configs/chain_design.toml");

type Res<T> = std::result::Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Serialize)]
struct Grid {
    rows: usize,
    cols: usize,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    /// Row-major.
    values: Vec<f64>,
}

fn grid(t: &PartialTensor) -> Grid {
    let mut values = Vec::with_capacity(t.rows() * t.cols());
    for i in 0..t.rows() {
        for j in 0..t.cols() {
            values.push(t.fiber(i, j)[0]);
        }
    }
    Grid {
        rows: t.rows(),
        cols: t.cols(),
        row_labels: t.row_labels().to_vec(),
        col_labels: t.col_labels().to_vec(),
        values,
    }
}

fn first(t: PartialTensor) -> Res<PartialTensor> {
    if t.depth() == 1 {
        return Ok(t);
    }
    let (r, c) = (t.row_labels().to_vec(), t.col_labels().to_vec());
    t.coordinate_tensor(0).with_labels(r, c).map_err(err)
}

fn design(toml: &str) -> Res<CounterfactualDesign> {
    let text = if toml.trim().is_empty() { DEFAULT_DESIGN } else { toml };
    harness::parse_design(text).map_err(err)
}

/// Pattern settings as JSON with an optional `seed` field for the uniform
/// pattern, e.g. `{"kind":"uniform_random","density":0.7,"seed":3}`.
pub fn parse_pattern(json: &str) -> Res<(PatternSettings, u64)> {
    let mut v: serde_json::Value = serde_json::from_str(json).map_err(err)?;
    let seed = match v.as_object_mut().and_then(|o| o.remove("seed")) {
        None => 0,
        Some(s) => s.as_u64().ok_or("pattern seed must be a nonnegative integer")?,
    };
    Ok((serde_json::from_value(v).map_err(err)?, seed))
}

#[derive(Serialize)]
struct HeatmapOut {
    expected: Grid,
    sampled: Grid,
    /// Row-major, `true` where observed.
    mask: Vec<bool>,
}

/// Expected and sampled first-coordinate matrices of a design, plus an
/// observation mask drawn from `pattern_json`.
pub fn heatmap_json(design_toml: &str, samples: usize, seed: u64, pattern_json: &str) -> Res<String> {
    let d = design(design_toml)?;
    let expected = first(scm_lab::expand_design(&d).map_err(err)?)?;
    let sampled = first(scm_lab::sample_design(&d, samples, seed).map_err(err)?.means)?;
    let (pattern, pattern_seed) = parse_pattern(pattern_json)?;
    let mask = pattern.spec(expected.rows(), expected.cols(), pattern_seed).generate().map_err(err)?;
    let bits = (0..mask.rows())
        .flat_map(|i| (0..mask.cols()).map(move |j| (i, j)))
        .map(|(i, j)| mask.get(i, j))
        .collect();
    serde_json::to_string(&HeatmapOut {
        expected: grid(&expected),
        sampled: grid(&sampled),
        mask: bits,
    })
    .map_err(err)
}

pub fn demo_estimators() -> Vec<EstimatorConfig> {
    vec![
        EstimatorConfig::new(Method::MeanOverContexts),
        EstimatorConfig::new(Method::FixedEffects),
        EstimatorConfig::new(Method::SyntheticInterventions),
        EstimatorConfig::new(Method::SiCentered).centering(Centering::FixedEffects),
        EstimatorConfig::new(Method::Nnm).lambda(0.01).warm_start(true),
        EstimatorConfig::new(Method::NnmFe).lambda(0.01),
    ]
}

#[derive(Serialize)]
struct CompareRow {
    estimator: String,
    median: f64,
    q1: f64,
    q3: f64,
    r2: Vec<f64>,
}

/// Median R² over `shuffles` row/column permutations of the design, with the
/// estimators seeing sample means and scored against the expected matrix.
pub fn compare_json(design_toml: &str, samples: usize, seed: u64, pattern_json: &str, shuffles: usize) -> Res<String> {
    let d = design(design_toml)?;
    let truth = scm_lab::expand_design(&d).map_err(err)?;
    let noisy = if samples == 0 {
        None
    } else {
        Some(scm_lab::sample_design(&d, samples, seed).map_err(err)?.means)
    };
    let (pattern, _) = parse_pattern(pattern_json)?;
    let cfg = ExperimentConfig {
        input: InputSource::InMemory { truth, noisy },
        pattern,
        estimators: demo_estimators(),
        shuffles,
        seed,
        crop: None,
        killer_threshold: None,
        baseline: Default::default(),
        lambda_grid: None,
    };
    let report = harness::run_experiment(&cfg).map_err(err)?;
    let rows: Vec<CompareRow> = report
        .summaries
        .into_iter()
        .map(|s| CompareRow {
            estimator: s.estimator,
            median: s.median,
            q1: s.q1,
            q3: s.q3,
            r2: s.r2,
        })
        .collect();
    serde_json::to_string(&rows).map_err(err)
}

#[derive(Serialize)]
struct TestSummary {
    name: &'static str,
    family_size: usize,
    rejected: usize,
    corrected_alpha: f64,
    min_p: Option<f64>,
}

fn summary(name: &'static str, r: &ht::TestReport) -> TestSummary {
    TestSummary {
        name,
        family_size: r.family_size,
        rejected: r.n_rejected(),
        corrected_alpha: r.corrected_alpha,
        min_p: r.min_p_value(),
    }
}

#[derive(Serialize)]
struct AnalysisOut {
    singular_values: Vec<f64>,
    explained_variance: Vec<(usize, f64)>,
    tests: Vec<TestSummary>,
}

/// Spectrum of the expected matrix and the structure tests on sample
/// summaries with `samples` draws per cell.
pub fn analyze_json(design_toml: &str, samples: usize, seed: u64, alpha: f64) -> Res<String> {
    let d = design(design_toml)?;
    let expected = first(scm_lab::expand_design(&d).map_err(err)?)?;
    let ranks: Vec<usize> = (1..=expected.rows().min(expected.cols())).collect();
    let svd = harness::svd_report(&expected, &ranks, None).map_err(err)?;
    let sampled = scm_lab::sample_design(&d, samples, seed).map_err(err)?;
    let stats = SampleStats::from_sampled(&sampled, 0).map_err(err)?;
    let opts = TestOptions {
        alpha,
        ..TestOptions::default()
    };
    let tests = vec![
        summary("two-way fixed effect", &ht::welch_fe_test(&stats, &opts).map_err(err)?),
        summary("one-way, constant over contexts", &ht::one_way_fe_test(&stats, Axis::WithinRows, &opts).map_err(err)?),
        summary("one-way, constant over actions", &ht::one_way_fe_test(&stats, Axis::WithinColumns, &opts).map_err(err)?),
        summary("equal variance along rows", &ht::f_test_homoscedasticity(&stats, Axis::WithinRows, &opts).map_err(err)?),
        summary("equal variance along columns", &ht::f_test_homoscedasticity(&stats, Axis::WithinColumns, &opts).map_err(err)?),
    ];
    serde_json::to_string(&AnalysisOut {
        singular_values: svd.singular_values,
        explained_variance: svd.explained_variance,
        tests,
    })
    .map_err(err)
}

fn js(r: Res<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = defaultDesign)]
pub fn default_design() -> String {
    DEFAULT_DESIGN.to_string()
}

#[wasm_bindgen]
pub fn heatmap(design_toml: &str, samples: usize, seed: u32, pattern_json: &str) -> Result<String, JsError> {
    js(heatmap_json(design_toml, samples, seed as u64, pattern_json))
}

#[wasm_bindgen]
pub fn compare(design_toml: &str, samples: usize, seed: u32, pattern_json: &str, shuffles: usize) -> Result<String, JsError> {
    js(compare_json(design_toml, samples, seed as u64, pattern_json, shuffles))
}

#[wasm_bindgen]
pub fn analyze(design_toml: &str, samples: usize, seed: u32, alpha: f64) -> Result<String, JsError> {
    js(analyze_json(design_toml, samples, seed as u64, alpha))
}
