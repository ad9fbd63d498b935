//! Subcommand implementations. Each one turns a validated [`RunConfig`] into
//! artifacts and an [`Outcome`]; nothing here reads global state.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clspec::ensemble::{sample, EnsembleSpec, SampledMatrix};
use clspec::harness::{
    degree_tail_fit, run_local_law, run_universality, DegreePlan, ExperimentPlan, ExperimentReport,
    UniversalityPlan,
};
use clspec::qve::{solve_qve, KernelGrid, KernelKind};
use clspec::rng::derive_seed;
use clspec::sce::{solve_grid, stability_certificate, SceSolution};
use clspec::spectral::{eigen_decompose, local_law_records, LocalLawRecord};
use clspec::Complex64;
use serde::Serialize;

use crate::config::{KernelSource, RunConfig};
use crate::output::{fmt_f64, Artifacts, Manifest, Table, RECORDS_FILE, REPORT_FILE};

/// Subcommands that produce artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Qve,
    Sample,
    Stats,
    LocalLaw,
    Universality,
    Degrees,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Solve,
        Command::Qve,
        Command::Sample,
        Command::Stats,
        Command::LocalLaw,
        Command::Universality,
        Command::Degrees,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Qve => "qve",
            Command::Sample => "sample",
            Command::Stats => "stats",
            Command::LocalLaw => "local-law",
            Command::Universality => "universality",
            Command::Degrees => "degrees",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

/// Result of a completed run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    /// An acceptance threshold failed or the report is invalid.
    Fail,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub outcome: Outcome,
    pub manifest: Manifest,
    pub dir: PathBuf,
}

/// Runs `command` and writes its artifacts into `out`.
pub fn run(command: Command, config: &RunConfig, out: &Path) -> Result<RunSummary> {
    log::info!("{} -> {}", command.name(), out.display());
    let mut artifacts = Artifacts::new(out);
    let (outcome, seeds) = match command {
        Command::Solve => solve(config, &mut artifacts)?,
        Command::Qve => qve(config, &mut artifacts)?,
        Command::Sample => sample_matrix(config, &mut artifacts)?,
        Command::Stats => stats(config, &mut artifacts)?,
        Command::LocalLaw => local_law(config, &mut artifacts)?,
        Command::Universality => universality(config, &mut artifacts)?,
        Command::Degrees => degrees(config, &mut artifacts)?,
    };
    let manifest = artifacts.finish(Manifest::new(command.name(), config, seeds))?;
    Ok(RunSummary {
        outcome,
        manifest,
        dir: out.to_path_buf(),
    })
}

type CommandResult = Result<(Outcome, Vec<u64>)>;

fn ensemble(config: &RunConfig) -> Result<EnsembleSpec<f64>> {
    config
        .ensemble()
        .map_err(|e| anyhow::anyhow!("invalid ensemble: {e}"))
}

fn complex_cells(z: Complex64) -> [String; 2] {
    [fmt_f64(z.re), fmt_f64(z.im)]
}

/// Solves at each point, continuing in decreasing `η` along each energy.
/// Solutions come back in input order.
fn solve_points(
    config: &RunConfig,
    spec: &EnsembleSpec<f64>,
    points: &[[f64; 2]],
) -> Result<Vec<SceSolution<f64>>> {
    let opts = config.solver.options();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a][0]
            .total_cmp(&points[b][0])
            .then(points[b][1].total_cmp(&points[a][1]))
    });
    let mut out: Vec<Option<SceSolution<f64>>> = vec![None; points.len()];
    for line in order.chunk_by(|&a, &b| points[a][0] == points[b][0]) {
        let zs: Vec<Complex64> = line
            .iter()
            .map(|&k| Complex64::new(points[k][0], points[k][1]))
            .collect();
        let sols = solve_grid(spec.profile(), &zs, &opts)
            .context("solving the self-consistent equations")?;
        for (&k, sol) in line.iter().zip(sols) {
            out[k] = Some(sol);
        }
    }
    Ok(out
        .into_iter()
        .map(|s| s.expect("every point solved"))
        .collect())
}

#[derive(Serialize)]
struct SolveReport {
    subcommand: &'static str,
    n: usize,
    rank: usize,
    points: usize,
    max_residual: f64,
    max_iterations: usize,
    max_spectral_radius: f64,
}

fn solve(config: &RunConfig, artifacts: &mut Artifacts) -> CommandResult {
    let spec = ensemble(config)?;
    let points = config.solve.grid();
    if points.is_empty() {
        bail!("solve: no points; set solve.points, or energies and etas (or their ranges)");
    }
    let sols = solve_points(config, &spec, &points)?;
    let r = spec.rank();
    let mut header = vec!["E".to_string(), "eta".into(), "re_m".into(), "im_m".into()];
    header.extend((1..=r).map(|k| format!("re_u{k}")));
    header.extend((1..=r).map(|k| format!("im_u{k}")));
    header.extend(["residual".to_string(), "spectral_radius".into()]);
    let mut table = Table::new(header);
    let mut max_radius = 0.0f64;
    for sol in &sols {
        let radius = stability_certificate(spec.profile(), sol).spectral_radius;
        max_radius = max_radius.max(radius);
        let mut row: Vec<String> = complex_cells(sol.z).into();
        row.extend(complex_cells(sol.m));
        row.extend(sol.u.iter().map(|u| fmt_f64(u.re)));
        row.extend(sol.u.iter().map(|u| fmt_f64(u.im)));
        row.push(fmt_f64(sol.residual));
        row.push(fmt_f64(radius));
        table.push(row);
    }
    artifacts.add_table(RECORDS_FILE, &table)?;
    artifacts.add_json(
        REPORT_FILE,
        &SolveReport {
            subcommand: "solve",
            n: spec.n(),
            rank: r,
            points: sols.len(),
            max_residual: sols.iter().map(|s| s.residual).fold(0.0, f64::max),
            max_iterations: sols.iter().map(|s| s.iterations).max().unwrap_or(0),
            max_spectral_radius: max_radius,
        },
    )?;
    Ok((Outcome::Pass, Vec::new()))
}

/// Reads a square matrix of cell values (no header).
pub fn read_kernel_csv(path: &Path) -> Result<KernelGrid<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening kernel file {}", path.display()))?;
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (r, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("reading {} row {}", path.display(), r + 1))?;
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().with_context(|| {
                format!(
                    "{} row {} column {}: not a number",
                    path.display(),
                    r + 1,
                    c + 1
                )
            })?;
            values.push(v);
        }
        rows += 1;
    }
    KernelGrid::from_values(rows, values, KernelKind::Explicit)
        .map_err(|e| anyhow::anyhow!("kernel file {}: {e}", path.display()))
}

#[derive(Serialize)]
struct QvePoint {
    re_z: f64,
    im_z: f64,
    re_m0: f64,
    im_m0: f64,
    residual: f64,
    iterations: usize,
}

#[derive(Serialize)]
struct QveReport {
    subcommand: &'static str,
    grid: usize,
    kernel: KernelKind,
    min_cell: f64,
    points: Vec<QvePoint>,
}

fn qve(config: &RunConfig, artifacts: &mut Artifacts) -> CommandResult {
    let c = &config.qve;
    let kernel = match c.kernel {
        KernelSource::Profile => KernelGrid::from_low_rank(ensemble(config)?.profile(), c.grid),
        KernelSource::Constant => KernelGrid::constant(c.grid, c.value),
        KernelSource::File => {
            let path = c
                .path
                .as_ref()
                .context("qve.path is required for a file kernel")?;
            Ok(read_kernel_csv(path)?)
        }
    }
    .map_err(|e| anyhow::anyhow!("building the kernel: {e}"))?;
    let opts = config.solver.options();
    let n = kernel.n();
    let mut table = Table::new([
        "re_z", "im_z", "cell", "x", "re_g", "im_g", "re_m0", "im_m0",
    ]);
    let mut points = Vec::new();
    for &[re, im] in &c.points {
        let z = Complex64::new(re, im);
        let sol = solve_qve(&kernel, z, &opts)
            .with_context(|| format!("solving the kernel equation at z = {z}"))?;
        for (a, g) in sol.g.iter().enumerate() {
            let mut row: Vec<String> = complex_cells(z).into();
            row.push(a.to_string());
            row.push(fmt_f64((a as f64 + 0.5) / n as f64));
            row.extend(complex_cells(*g));
            row.extend(complex_cells(sol.m0));
            table.push(row);
        }
        points.push(QvePoint {
            re_z: re,
            im_z: im,
            re_m0: sol.m0.re,
            im_m0: sol.m0.im,
            residual: sol.residual,
            iterations: sol.iterations,
        });
    }
    artifacts.add_table(RECORDS_FILE, &table)?;
    artifacts.add_json(
        REPORT_FILE,
        &QveReport {
            subcommand: "qve",
            grid: n,
            kernel: kernel.kind(),
            min_cell: kernel.min_value(),
            points,
        },
    )?;
    Ok((Outcome::Pass, Vec::new()))
}

#[derive(Serialize)]
struct SampleReport {
    subcommand: &'static str,
    n: usize,
    model: clspec::ensemble::Model,
    seed: u64,
    q: f64,
    max_edge_probability: f64,
    nonzeros: usize,
    trace: f64,
    frobenius_sq: f64,
    symmetric: bool,
}

fn sample_matrix(config: &RunConfig, artifacts: &mut Artifacts) -> CommandResult {
    let spec = ensemble(config)?;
    let matrix = sample(&spec, config.model, config.seed);
    let mut table = Table::new(["i", "j", "value"]);
    let triplets = matrix.upper_triplets();
    for &(i, j, v) in &triplets {
        table.push(vec![i.to_string(), j.to_string(), fmt_f64(v)]);
    }
    artifacts.add_table(RECORDS_FILE, &table)?;
    artifacts.add_json(
        REPORT_FILE,
        &SampleReport {
            subcommand: "sample",
            n: matrix.n(),
            model: matrix.model,
            seed: matrix.seed,
            q: spec.q(),
            max_edge_probability: spec.max_edge_probability(),
            nonzeros: triplets.len(),
            trace: matrix.trace(),
            frobenius_sq: matrix.frobenius_sq(),
            symmetric: matrix.is_symmetric(),
        },
    )?;
    Ok((Outcome::Pass, vec![config.seed]))
}

/// Reads an upper-triangle `i,j,value` table as written by `sample`.
pub fn read_matrix_csv(path: &Path, n: usize, config: &RunConfig) -> Result<SampledMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening matrix file {}", path.display()))?;
    let mut triplets = Vec::new();
    for (r, record) in reader.deserialize::<(usize, usize, f64)>().enumerate() {
        triplets
            .push(record.with_context(|| format!("reading {} record {}", path.display(), r + 1))?);
    }
    SampledMatrix::from_triplets(n, &triplets, config.model, config.seed)
        .with_context(|| format!("matrix file {}", path.display()))
}

pub fn record_table(records: &[LocalLawRecord<f64>]) -> Table {
    let mut table = Table::new([
        "re_z",
        "im_z",
        "seed",
        "lambda_d",
        "lambda_o",
        "lambda",
        "phi",
        "lambda_over_phi",
        "max_schur_residual",
        "re_m_n",
        "im_m_n",
        "re_m",
        "im_m",
        "pair_budget",
        "pairs_exhaustive",
    ]);
    for r in records {
        let mut row: Vec<String> = complex_cells(r.z).into();
        row.push(r.sample_seed.to_string());
        for x in [
            r.lambda_d,
            r.lambda_o,
            r.lambda,
            r.phi,
            r.lambda_over_phi(),
            r.max_schur_residual,
        ] {
            row.push(fmt_f64(x));
        }
        row.extend(complex_cells(r.m_n));
        row.extend(complex_cells(r.m));
        row.push(r.pair_budget.to_string());
        row.push(r.pairs_exhaustive.to_string());
        table.push(row);
    }
    table
}

#[derive(Serialize)]
struct StatsPoint {
    re_z: f64,
    im_z: f64,
    lambda_over_phi: f64,
    schur_over_phi: f64,
    m_error_over_phi: f64,
}

#[derive(Serialize)]
struct StatsReport {
    subcommand: &'static str,
    n: usize,
    seed: u64,
    source: String,
    points: Vec<StatsPoint>,
}

fn stats(config: &RunConfig, artifacts: &mut Artifacts) -> CommandResult {
    let spec = ensemble(config)?;
    let (matrix, source) = match &config.stats.matrix_file {
        Some(path) => (
            read_matrix_csv(path, spec.n(), config)?,
            path.display().to_string(),
        ),
        None => (
            sample(&spec, config.model, config.seed),
            format!("{} sample", config.model.name()),
        ),
    };
    let spectrum = eigen_decompose(&matrix, true).context("eigendecomposition")?;
    let sols = solve_points(config, &spec, &config.stats.points)?;
    let records = local_law_records(&spectrum, &spec, &sols, config.stats.pair_budget)?;
    artifacts.add_table(RECORDS_FILE, &record_table(&records))?;
    let points = records
        .iter()
        .map(|r| StatsPoint {
            re_z: r.z.re,
            im_z: r.z.im,
            lambda_over_phi: r.lambda_over_phi(),
            schur_over_phi: r.schur_over_phi(),
            m_error_over_phi: r.m_error_over_phi(),
        })
        .collect();
    artifacts.add_json(
        REPORT_FILE,
        &StatsReport {
            subcommand: "stats",
            n: spec.n(),
            seed: config.seed,
            source,
            points,
        },
    )?;
    Ok((Outcome::Pass, vec![config.seed]))
}

fn sample_seeds(base: u64, samples: usize) -> Vec<u64> {
    (0..samples as u64).map(|s| derive_seed(base, s)).collect()
}

fn outcome(report: &ExperimentReport) -> Outcome {
    if report.passed {
        Outcome::Pass
    } else {
        for c in report.checks.iter().filter(|c| !c.passed) {
            log::warn!(
                "check {} failed: {} {} {}",
                c.name,
                c.value,
                c.comparison,
                c.threshold
            );
        }
        if !report.valid {
            log::warn!(
                "report invalid: {} of {} samples failed",
                report.failures.len(),
                report.samples
            );
        }
        Outcome::Fail
    }
}

/// Local-law plan described by a configuration.
pub fn local_law_plan(config: &RunConfig) -> Result<ExperimentPlan> {
    let c = &config.local_law;
    let mut plan = ExperimentPlan::new(
        ensemble(config)?,
        config.model,
        c.domain(),
        c.samples,
        config.seed,
    );
    plan.pair_budget = c.pair_budget;
    plan.delta = c.delta;
    plan.bulk_threshold = c.bulk_threshold;
    plan.bulk_probe_eta = c.bulk_probe_eta;
    plan.solver = config.solver.options();
    plan.thresholds = c.thresholds;
    plan.ward_rows = c.ward_rows;
    Ok(plan)
}

fn local_law(config: &RunConfig, artifacts: &mut Artifacts) -> CommandResult {
    let plan = local_law_plan(config)?;
    let run = run_local_law(&plan)?;
    artifacts.add_table(RECORDS_FILE, &record_table(&run.records))?;
    let mut diag = Table::new([
        "index",
        "seed",
        "ward_max_defect",
        "delocalization",
        "dyadic_ratio",
    ]);
    for d in &run.diagnostics {
        diag.push(vec![
            d.index.to_string(),
            d.seed.to_string(),
            fmt_f64(d.ward_max_defect),
            fmt_f64(d.delocalization),
            fmt_f64(d.dyadic_ratio),
        ]);
    }
    artifacts.add_table("samples.csv", &diag)?;
    artifacts.add_json(REPORT_FILE, &run.report)?;
    Ok((
        outcome(&run.report),
        sample_seeds(plan.base_seed, plan.samples),
    ))
}

pub fn universality_plan(config: &RunConfig) -> Result<UniversalityPlan> {
    let c = &config.universality;
    let mut plan = UniversalityPlan::new(ensemble(config)?, config.model, c.samples, config.seed);
    if let Some(g) = c.goe_samples {
        plan.goe_samples = g;
    }
    if let Some(s) = c.goe_seed {
        plan.goe_seed = s;
    }
    plan.bulk = c.bulk;
    plan.ks_threshold = c.ks_threshold;
    plan.control_threshold = c.control_threshold;
    plan.null_check = c.null_check;
    plan.poisson_control = c.poisson_control;
    Ok(plan)
}

fn universality(config: &RunConfig, artifacts: &mut Artifacts) -> CommandResult {
    let plan = universality_plan(config)?;
    let run = run_universality(&plan)?;
    let mut table = Table::new([
        "pool",
        "index",
        "seed",
        "lower",
        "upper",
        "count",
        "mean_ratio",
    ]);
    for s in &run.samples {
        table.push(vec![
            s.pool.clone(),
            s.index.to_string(),
            s.seed.to_string(),
            fmt_f64(s.lower),
            fmt_f64(s.upper),
            s.count.to_string(),
            fmt_f64(s.mean_ratio),
        ]);
    }
    artifacts.add_table(RECORDS_FILE, &table)?;
    artifacts.add_json(REPORT_FILE, &run.report)?;
    Ok((
        outcome(&run.report),
        sample_seeds(plan.base_seed, plan.samples),
    ))
}

pub fn degree_plan(config: &RunConfig) -> Result<DegreePlan> {
    let c = &config.degrees;
    let mut plan = DegreePlan::new(ensemble(config)?, c.samples, config.seed);
    plan.cutoff_quantile = c.cutoff_quantile;
    plan.bootstrap = c.bootstrap;
    plan.confidence = c.confidence;
    plan.target = c.target.map(|[a, b]| (a, b));
    Ok(plan)
}

fn degrees(config: &RunConfig, artifacts: &mut Artifacts) -> CommandResult {
    let plan = degree_plan(config)?;
    let run = degree_tail_fit(&plan)?;
    let seeds = sample_seeds(plan.base_seed, plan.samples);
    let mut table = Table::new(["sample", "seed", "vertex", "degree"]);
    for (s, (deg, seed)) in run.degrees.iter().zip(&seeds).enumerate() {
        for (i, d) in deg.iter().enumerate() {
            table.push(vec![
                s.to_string(),
                seed.to_string(),
                i.to_string(),
                d.to_string(),
            ]);
        }
    }
    artifacts.add_table(RECORDS_FILE, &table)?;
    artifacts.add_json(REPORT_FILE, &run.report)?;
    Ok((outcome(&run.report), seeds))
}

/// Reruns the experiment recorded in a manifest and checks that every CSV
/// artifact is reproduced byte for byte.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<RunSummary> {
    let recorded = Manifest::read(manifest_path)?;
    let hash = crate::output::config_hash(&recorded.config);
    if hash != recorded.config_sha256 {
        bail!(
            "manifest {}: config hash {} does not match the recorded {}",
            manifest_path.display(),
            hash,
            recorded.config_sha256
        );
    }
    let command = Command::from_name(&recorded.subcommand).with_context(|| {
        format!(
            "manifest names unknown subcommand {:?}",
            recorded.subcommand
        )
    })?;
    let summary = run(command, &recorded.config, out)?;
    let mismatched: Vec<&String> = recorded
        .outputs
        .iter()
        .filter(|(name, digest)| summary.manifest.outputs.get(*name) != Some(digest))
        .map(|(name, _)| name)
        .collect();
    if !mismatched.is_empty() {
        bail!(
            "replay of {} did not reproduce {:?}",
            manifest_path.display(),
            mismatched
        );
    }
    Ok(summary)
}

/// Reads a configuration file, or the empty document when `path` is `None`.
pub fn read_config_text(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(String::new()),
    }
}
