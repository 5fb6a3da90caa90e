use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use causal_completion::estimators::{self, Centering, Direction, EstimatorConfig, Method};
use causal_completion::harness::{self, ExperimentConfig};
use causal_completion::hypothesis_tests::{self as ht, Axis, CorrectionMethod, SampleStats, TestOptions};
use causal_completion::patterns::PatternSpec;
use causal_completion::scm_lab;
use causal_completion::tensor_store::{Mask, PartialTensor};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "causal-completion", version, about = "Counterfactual tensor simulation and completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand a design file into its expected tensor, optionally with sample means.
    Simulate(SimulateArgs),
    /// Write an observation mask.
    Pattern(PatternArgs),
    /// Complete a matrix or tensor.
    Impute(ImputeArgs),
    /// Run a bootstrap experiment from a config file.
    Evaluate(EvaluateArgs),
    /// Model-adequacy tests on per-cell sample summaries.
    Test(TestArgs),
    /// Spectrum diagnostics of a fully observed matrix.
    Svd(SvdArgs),
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    /// Samples per cell; writes sample means and a summary table.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternKind {
    SquareBlock,
    Staircase,
    Uniform,
}

#[derive(clap::Args)]
struct PatternArgs {
    #[arg(long, value_enum)]
    kind: PatternKind,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_obs: Option<usize>,
    #[arg(long)]
    block_fraction: Option<f64>,
    #[arg(long)]
    density: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Take shape and labels from this data file.
    #[arg(long)]
    like: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Rows,
    Cols,
}

#[derive(Clone, Copy, ValueEnum)]
enum CenteringArg {
    None,
    MeanOverContexts,
    FixedEffects,
}

#[derive(clap::Args)]
struct ImputeArgs {
    /// One of mean_over_contexts, mean_over_actions, fixed_effects,
    /// collaborative_filtering, synthetic_interventions, si_centered, nnm, nnm_fe.
    #[arg(long)]
    method: String,
    #[arg(long, value_enum, default_value = "rows")]
    direction: DirectionArg,
    #[arg(long, value_enum, default_value = "none")]
    centering: CenteringArg,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    warm_start: bool,
    #[arg(long)]
    k: Option<usize>,
    /// Matrix CSV or tensor manifest (.toml).
    #[arg(long)]
    input: PathBuf,
    /// Extra mask; cells marked 0 are hidden before imputing.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// CSV for matrices, manifest path (.toml) for tensors.
    #[arg(long)]
    output: PathBuf,
    /// Diagnostics JSON; defaults to the output path with `.diagnostics.json`.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Per-estimator medians and quartiles as JSON.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestKindArg {
    F,
    Fe,
    Oneway,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorrectionArg {
    Bonferroni,
    Sidak,
}

#[derive(clap::Args)]
struct TestArgs {
    /// Long-format CSV: `row,col,mean,var,ns` summaries or `row,col,value` samples.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    test: TestKindArg,
    #[arg(long, value_enum, default_value = "rows")]
    axis: DirectionArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "bonferroni")]
    correction: CorrectionArg,
    /// JSON report; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SvdArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    ranks: Vec<usize>,
    /// Mask whose hidden cells score the truncated-SVD R².
    #[arg(long)]
    pattern: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    match path {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            serde_json::to_writer_pretty(BufWriter::new(f), value)?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, value)?;
            writeln!(lock)?;
        }
    }
    Ok(())
}

fn save_tensor(path: &Path, t: &PartialTensor) -> Result<()> {
    if t.depth() == 1 && path.extension().map_or(true, |e| e != "toml") {
        harness::save_matrix(path, t, 0)?;
    } else {
        harness::save_manifest(path, t)?;
    }
    Ok(())
}

/// `row,col,mean,var,ns` for one outcome coordinate.
fn write_stats(path: &Path, sampled: &scm_lab::SampledDesign, k: usize) -> Result<()> {
    let t = &sampled.means;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "col", "mean", "var", "ns"])?;
    for i in 0..t.rows() {
        for j in 0..t.cols() {
            w.write_record([
                t.row_labels()[i].clone(),
                t.col_labels()[j].clone(),
                t.fiber(i, j)[k].to_string(),
                sampled.variance(i, j, k).to_string(),
                sampled.ns.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let design = harness::load_design(&args.design)?;
    std::fs::create_dir_all(&args.output_dir)?;
    let truth = scm_lab::expand_design(&design)?;
    let name = |stem: &str| {
        let ext = if truth.depth() == 1 { "csv" } else { "toml" };
        args.output_dir.join(format!("{stem}.{ext}"))
    };
    save_tensor(&name("truth"), &truth)?;
    println!("expected tensor {:?} -> {}", truth.shape(), name("truth").display());
    if let Some(ns) = args.samples {
        let sampled = scm_lab::sample_design(&design, ns, args.seed)?;
        save_tensor(&name("observed"), &sampled.means)?;
        let p = sampled.means.depth();
        for k in 0..p {
            let file = if p == 1 { "stats.csv".to_string() } else { format!("stats_{}.csv", k + 1) };
            write_stats(&args.output_dir.join(file), &sampled, k)?;
        }
        println!("{ns} samples per cell -> {}", name("observed").display());
    }
    Ok(())
}

fn pattern(args: PatternArgs) -> Result<()> {
    let like = args.like.as_ref().map(harness::load_tensor).transpose()?;
    let (m, n) = match (&like, args.m, args.n) {
        (Some(t), None, None) => (t.rows(), t.cols()),
        (None, Some(m), Some(n)) => (m, n),
        _ => bail!("give either --like or both --m and --n"),
    };
    let spec = match args.kind {
        PatternKind::SquareBlock => PatternSpec::SquareBlock {
            m,
            n,
            n_obs: args.n_obs.context("square-block needs --n-obs")?,
        },
        PatternKind::Staircase => PatternSpec::Staircase {
            m,
            n,
            block_fraction: args.block_fraction.context("staircase needs --block-fraction")?,
        },
        PatternKind::Uniform => PatternSpec::UniformRandom {
            m,
            n,
            density: args.density.context("uniform needs --density")?,
            seed: args.seed,
        },
    };
    let mask = spec.generate()?;
    let (rows, cols) = match &like {
        Some(t) => (t.row_labels().to_vec(), t.col_labels().to_vec()),
        None => {
            let blank = PartialTensor::new(1, vec![0.0; m * n], mask.clone())?;
            (blank.row_labels().to_vec(), blank.col_labels().to_vec())
        }
    };
    harness::save_mask(&args.output, &mask, &rows, &cols)?;
    println!("{m}x{n} mask, {} observed -> {}", mask.count_observed(), args.output.display());
    Ok(())
}

fn impute(args: ImputeArgs) -> Result<()> {
    let method: Method = args.method.parse()?;
    let mut cfg = EstimatorConfig::new(method)
        .direction(match args.direction {
            DirectionArg::Rows => Direction::WithinRows,
            DirectionArg::Cols => Direction::WithinColumns,
        })
        .centering(match args.centering {
            CenteringArg::None => Centering::None,
            CenteringArg::MeanOverContexts => Centering::MeanOverContexts,
            CenteringArg::FixedEffects => Centering::FixedEffects,
        })
        .warm_start(args.warm_start);
    if let Some(l) = args.lambda {
        cfg = cfg.lambda(l);
    }
    if let Some(k) = args.k {
        cfg = cfg.k_neighbors(k);
    }
    if method == Method::SiCentered && matches!(args.centering, CenteringArg::None) {
        cfg = cfg.centering(Centering::MeanOverContexts);
    }
    let mut t = harness::load_tensor(&args.input)?;
    if let Some(path) = &args.mask {
        let (mask, rows, cols) = harness::load_mask(path)?;
        if rows != t.row_labels() || cols != t.col_labels() {
            bail!("mask labels in {} do not match the input", path.display());
        }
        let combined = Mask::from_fn(t.rows(), t.cols(), |i, j| mask.get(i, j) && t.is_observed(i, j));
        t = t.with_mask(combined)?;
    }
    let result = estimators::impute(&t, &cfg)?;
    save_tensor(&args.output, &result.predictions)?;
    let sidecar = args
        .diagnostics
        .unwrap_or_else(|| args.output.with_extension("diagnostics.json"));
    write_json(Some(&sidecar), &result.diagnostics)?;
    let missing = t.mask().missing_cells().len();
    println!(
        "{}: imputed {} of {missing} missing cells, {} failures -> {}",
        cfg.label(),
        result.imputed_mask.count_observed(),
        result.diagnostics.failures.len(),
        args.output.display()
    );
    for w in &result.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let report = harness::run_experiment(&cfg)?;
    let f = File::create(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    harness::write_report_csv(BufWriter::new(f), &report)?;
    if let Some(path) = &args.summary {
        write_json(Some(path), &report.summaries)?;
    }
    println!("{:<40} {:>9} {:>9} {:>9}", "estimator", "median R2", "q1", "q3");
    for s in &report.summaries {
        println!("{:<40} {:>9.4} {:>9.4} {:>9.4}", s.estimator, s.median, s.q1, s.q3);
    }
    let failed = report.records.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} estimator runs failed; see the error column");
    }
    Ok(())
}

#[derive(Deserialize)]
struct SummaryRow {
    row: String,
    col: String,
    mean: f64,
    var: f64,
    ns: usize,
}

#[derive(Deserialize)]
struct SampleRow {
    row: String,
    col: String,
    value: f64,
}

/// Labels in order of first appearance.
fn index_of(labels: &mut Vec<String>, label: &str) -> usize {
    match labels.iter().position(|l| l == label) {
        Some(k) => k,
        None => {
            labels.push(label.to_string());
            labels.len() - 1
        }
    }
}

fn read_stats(path: &Path) -> Result<SampleStats> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let (mut rows, mut cols) = (Vec::new(), Vec::new());
    if headers.iter().any(|h| h == "value") {
        let mut cells: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for rec in reader.deserialize() {
            let r: SampleRow = rec?;
            let key = (index_of(&mut rows, &r.row), index_of(&mut cols, &r.col));
            cells.entry(key).or_default().push(r.value);
        }
        let (m, n) = (rows.len(), cols.len());
        let samples: Vec<Vec<f64>> = (0..m * n)
            .map(|c| cells.remove(&(c / n, c % n)).unwrap_or_default())
            .collect();
        return Ok(SampleStats::from_samples(m, n, &samples)?);
    }
    let mut entries = Vec::new();
    for rec in reader.deserialize() {
        let r: SummaryRow = rec?;
        let key = (index_of(&mut rows, &r.row), index_of(&mut cols, &r.col));
        entries.push((key, r.mean, r.var, r.ns));
    }
    let Some(ns) = entries.first().map(|e| e.3) else {
        bail!("{} has no rows", path.display());
    };
    if entries.iter().any(|e| e.3 != ns) {
        bail!("every cell needs the same sample count");
    }
    let (m, n) = (rows.len(), cols.len());
    let mut means = DMatrix::zeros(m, n);
    let mut vars = DMatrix::zeros(m, n);
    let mut mask = Mask::empty(m, n);
    for ((i, j), mean, var, _) in entries {
        means[(i, j)] = mean;
        vars[(i, j)] = var;
        mask.set(i, j, true);
    }
    Ok(SampleStats::new(means, vars, ns, mask)?)
}

fn test(args: TestArgs) -> Result<()> {
    let stats = read_stats(&args.input)?;
    let opts = TestOptions {
        alpha: args.alpha,
        correction: match args.correction {
            CorrectionArg::Bonferroni => CorrectionMethod::Bonferroni,
            CorrectionArg::Sidak => CorrectionMethod::Sidak,
        },
    };
    let axis = match args.axis {
        DirectionArg::Rows => Axis::WithinRows,
        DirectionArg::Cols => Axis::WithinColumns,
    };
    let report = match args.test {
        TestKindArg::F => ht::f_test_homoscedasticity(&stats, axis, &opts)?,
        TestKindArg::Fe => ht::welch_fe_test(&stats, &opts)?,
        TestKindArg::Oneway => ht::one_way_fe_test(&stats, axis, &opts)?,
    };
    eprintln!(
        "{} tests, {} skipped, {} rejected at corrected level {:.3e}",
        report.entries.len(),
        report.skipped.len(),
        report.n_rejected(),
        report.corrected_alpha
    );
    write_json(args.output.as_deref(), &report)
}

fn svd(args: SvdArgs) -> Result<()> {
    let t = harness::load_tensor(&args.input)?;
    let pattern = match &args.pattern {
        Some(p) => Some(harness::load_mask(p)?.0),
        None => None,
    };
    let report = harness::svd_report(&t, &args.ranks, pattern.as_ref())?;
    write_json(args.output.as_deref(), &report)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::Pattern(a) => pattern(a),
        Command::Impute(a) => impute(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Test(a) => test(a),
        Command::Svd(a) => svd(a),
    }
}
