//! Monte Carlo experiments: local-law sweeps, gap-ratio universality checks
//! against sampled GOE, and degree-tail fits of the adjacency graph.
//!
//! Every sample draws from `derive_seed(base_seed, s)`, work units run on
//! the rayon pool, and aggregation is a sequential fold over records sorted
//! by `(z, seed)`, so results do not depend on the worker count.

use std::time::Instant;

use num_complex::Complex;
use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{adjacency_degrees, sample, sample_goe, EnsembleError, EnsembleSpec, Model};
use crate::rng::{aux_stream, derive_seed};
use crate::sce::{
    scan_bulk, solve_grid, stability_certificate, SceSolution, SolveError, SolverOptions,
};
use crate::spectral::{
    delocalization_profile, dyadic_count_profile, dyadic_ratio, eigen_decompose, local_law_records,
    ward_defect, LocalLawRecord, SpectralError, Spectrum, DEFAULT_DELTA, DEFAULT_PAIR_BUDGET,
};
use crate::stats::{hill_exponent, ks_two_sample, quantile_sorted, sorted};

type C64 = Complex<f64>;

const WARD_STREAM: u64 = 0x7761_7264;
const POISSON_STREAM: u64 = 0x706f_6973;
const BOOTSTRAP_STREAM: u64 = 0x626f_6f74;

/// Fraction of failed samples above which a report is invalid.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;
/// Allowed excess of the stability radius over 1.
pub const STABILITY_SLACK: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid plan: {}", .0.join("; "))]
    InvalidPlan(Vec<String>),
    #[error("energy interval [{lower}, {upper}] is not inside a detected bulk interval (detected: {detected:?})")]
    BulkValidationFailed {
        lower: f64,
        upper: f64,
        detected: Vec<(f64, f64)>,
    },
    #[error("solver failed at z = {z}: {source}")]
    Solve {
        z: C64,
        #[source]
        source: SolveError<f64>,
    },
    #[error("sample seed {seed}: {source}")]
    Spectral {
        seed: u64,
        #[source]
        source: SpectralError,
    },
    #[error("only {found} eigenvalues in the interval, at least 3 required")]
    TooFewEigenvalues { found: usize },
    #[error("degenerate degree sequence: {0}")]
    DegenerateDegrees(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

/// Discrete spectral domain: `energy_points` equally spaced energies in
/// `energy_interval` times the listed `η` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub energy_interval: (f64, f64),
    pub energy_points: usize,
    pub etas: Vec<f64>,
}

impl Domain {
    pub fn energies(&self) -> Vec<f64> {
        let (a, b) = self.energy_interval;
        match self.energy_points {
            0 => Vec::new(),
            1 => vec![0.5 * (a + b)],
            k => (0..k)
                .map(|i| a + (b - a) * i as f64 / (k - 1) as f64)
                .collect(),
        }
    }

    /// Grid points sorted by `(Re z, Im z)`.
    pub fn grid(&self) -> Vec<C64> {
        let mut etas = self.etas.clone();
        etas.sort_by(f64::total_cmp);
        self.energies()
            .into_iter()
            .flat_map(|e| {
                etas.iter()
                    .map(move |&eta| Complex::new(e, eta))
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Acceptance thresholds of a local-law run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Quantile level at which the ratios are compared.
    pub quantile: f64,
    pub lambda_over_phi: f64,
    pub schur_over_phi: f64,
    pub m_error_over_phi: f64,
    pub delocalization: f64,
    pub dyadic: f64,
    pub ward: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            quantile: 0.95,
            lambda_over_phi: 10.0,
            schur_over_phi: 10.0,
            m_error_over_phi: 10.0,
            delocalization: 30.0,
            dyadic: 10.0,
            ward: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub spec: EnsembleSpec<f64>,
    pub model: Model,
    pub domain: Domain,
    pub samples: usize,
    pub base_seed: u64,
    pub pair_budget: usize,
    /// Lower bound `η ≥ N^(δ-1)` and the scale of the dyadic diagnostics.
    pub delta: f64,
    /// Bulk means `Im m > bulk_threshold` down to `bulk_probe_eta`.
    pub bulk_threshold: f64,
    pub bulk_probe_eta: f64,
    pub solver: SolverOptions<f64>,
    pub thresholds: Thresholds,
    /// Resolvent rows per sample on which the Ward identity is checked.
    pub ward_rows: usize,
}

impl ExperimentPlan {
    pub fn new(
        spec: EnsembleSpec<f64>,
        model: Model,
        domain: Domain,
        samples: usize,
        base_seed: u64,
    ) -> Self {
        Self {
            spec,
            model,
            domain,
            samples,
            base_seed,
            pair_budget: DEFAULT_PAIR_BUDGET,
            delta: DEFAULT_DELTA,
            bulk_threshold: 0.05,
            bulk_probe_eta: 1e-3,
            solver: SolverOptions::default(),
            thresholds: Thresholds::default(),
            ward_rows: 10,
        }
    }

    /// Smallest admissible `η`.
    pub fn eta_floor(&self) -> f64 {
        (self.spec.n() as f64).powf(self.delta - 1.0)
    }

    /// Checks the numeric fields; every violation is reported.
    pub fn check(&self) -> Result<(), HarnessError> {
        let mut v = Vec::new();
        if self.samples == 0 {
            v.push("samples must be positive".to_string());
        }
        if self.domain.etas.is_empty() {
            v.push("eta list is empty".into());
        }
        if self.domain.energy_points == 0 {
            v.push("energy_points must be positive".into());
        }
        let (a, b) = self.domain.energy_interval;
        if !(a <= b) {
            v.push(format!("energy interval [{a}, {b}] is empty"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            v.push(format!("delta = {} is outside (0, 1)", self.delta));
        }
        let floor = self.eta_floor();
        for &eta in &self.domain.etas {
            if !(eta >= floor * (1.0 - 1e-12) && eta <= 10.0) {
                v.push(format!(
                    "eta = {eta} is outside [N^(delta-1), 10] = [{floor}, 10]"
                ));
            }
        }
        let q = self.thresholds.quantile;
        if !(q > 0.0 && q <= 1.0) {
            v.push(format!("threshold quantile {q} is outside (0, 1]"));
        }
        if !(self.bulk_probe_eta > 0.0 && self.bulk_threshold >= 0.0) {
            v.push("bulk probe parameters must be positive".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::InvalidPlan(v))
        }
    }

    /// Detects the bulk on the energy grid and requires the whole energy
    /// interval to lie in one detected interval.
    pub fn validate_bulk(&self) -> Result<Vec<(f64, f64)>, HarnessError> {
        let (a, b) = self.domain.energy_interval;
        let points = self.domain.energy_points.max(11);
        let energies: Vec<f64> = (0..points)
            .map(|i| a + (b - a) * i as f64 / (points - 1) as f64)
            .collect();
        let (detected, _) = scan_bulk(
            self.spec.profile(),
            &energies,
            self.bulk_probe_eta,
            self.bulk_threshold,
            &self.solver,
        )
        .map_err(|source| HarnessError::Solve {
            z: Complex::new(a, self.bulk_probe_eta),
            source,
        })?;
        if detected.iter().any(|&(lo, hi)| lo <= a && hi >= b) {
            Ok(detected)
        } else {
            Err(HarnessError::BulkValidationFailed {
                lower: a,
                upper: b,
                detected,
            })
        }
    }

    /// Solves the self-consistent equations on the grid (continuation in `η`
    /// per energy), returned in grid order.
    pub fn solve_domain(&self) -> Result<Vec<SceSolution<f64>>, HarnessError> {
        let mut etas = self.domain.etas.clone();
        etas.sort_by(|x, y| y.total_cmp(x));
        let mut out = Vec::new();
        for e in self.domain.energies() {
            let line: Vec<C64> = etas.iter().map(|&eta| Complex::new(e, eta)).collect();
            let sols = solve_grid(self.spec.profile(), &line, &self.solver).map_err(|source| {
                let z = match &source {
                    SolveError::GridPoint { z, .. } => *z,
                    _ => line[0],
                };
                HarnessError::Solve { z, source }
            })?;
            out.extend(sols.into_iter().rev());
        }
        Ok(out)
    }
}

/// Median, upper quantile and maximum of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantileSummary {
    pub median: f64,
    pub level: f64,
    pub upper: f64,
    pub max: f64,
    pub count: usize,
}

impl QuantileSummary {
    pub fn of(xs: &[f64], level: f64) -> Self {
        let s = sorted(xs);
        Self {
            median: quantile_sorted(&s, 0.5),
            level,
            upper: quantile_sorted(&s, level),
            max: s.last().copied().unwrap_or(f64::NAN),
            count: s.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZSummary {
    pub re: f64,
    pub im: f64,
    pub phi: f64,
    pub lambda: QuantileSummary,
    pub lambda_over_phi: QuantileSummary,
    pub schur_over_phi: QuantileSummary,
    pub m_error_over_phi: QuantileSummary,
}

/// One pass/fail test of a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// `"<="` or `">="`.
    pub comparison: String,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            comparison: "<=".into(),
            passed: value <= threshold,
        }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            comparison: ">=".into(),
            passed: value >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleFailure {
    pub index: usize,
    pub seed: u64,
    pub message: String,
}

/// Per-sample diagnostics of a local-law run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleDiagnostics {
    pub index: usize,
    pub seed: u64,
    /// Largest relative Ward defect over the checked rows.
    pub ward_max_defect: f64,
    /// `N max |u_k^i|²` over eigenvectors in the energy interval (NaN if none).
    pub delocalization: f64,
    /// `max_n |U_n| / (2^n N^δ)`, maximized over grid energies.
    pub dyadic_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsSummary {
    pub ward_max_defect: f64,
    pub delocalization: QuantileSummary,
    pub dyadic_ratio: QuantileSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniversalitySummary {
    pub ks_ensemble_vs_goe: f64,
    pub ks_null: Option<f64>,
    pub ks_poisson: Option<f64>,
    pub ensemble_ratios: usize,
    pub goe_ratios: usize,
    pub null_ratios: usize,
    pub poisson_ratios: usize,
    pub mean_ratio_ensemble: f64,
    pub mean_ratio_goe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegreeFit {
    pub beta_hat: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub confidence: f64,
    pub cutoff: f64,
    pub tail_size: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub n: usize,
    pub kappa: f64,
    pub rank: usize,
    pub model: Model,
    pub samples: usize,
    pub completed_samples: usize,
    pub base_seed: u64,
    pub per_z: Vec<ZSummary>,
    pub max_stability_radius: Option<f64>,
    pub diagnostics: Option<DiagnosticsSummary>,
    pub universality: Option<UniversalitySummary>,
    pub degree_fit: Option<DegreeFit>,
    pub checks: Vec<Check>,
    pub failures: Vec<SampleFailure>,
    /// False when more than 1% of the samples failed.
    pub valid: bool,
    pub passed: bool,
    pub runtime_seconds: f64,
}

impl ExperimentReport {
    fn new(
        experiment: &str,
        spec: &EnsembleSpec<f64>,
        model: Model,
        samples: usize,
        base_seed: u64,
    ) -> Self {
        Self {
            experiment: experiment.into(),
            n: spec.n(),
            kappa: spec.kappa(),
            rank: spec.rank(),
            model,
            samples,
            completed_samples: 0,
            base_seed,
            per_z: Vec::new(),
            max_stability_radius: None,
            diagnostics: None,
            universality: None,
            degree_fit: None,
            checks: Vec::new(),
            failures: Vec::new(),
            valid: true,
            passed: false,
            runtime_seconds: 0.0,
        }
    }

    fn finish(&mut self, started: Instant) {
        self.valid = (self.failures.len() as f64) <= MAX_FAILURE_FRACTION * self.samples as f64;
        self.passed = self.valid && self.checks.iter().all(|c| c.passed);
        self.runtime_seconds = started.elapsed().as_secs_f64();
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Output of [`run_local_law`].
#[derive(Debug, Clone)]
pub struct LocalLawRun {
    pub report: ExperimentReport,
    /// Sorted by `(Re z, Im z, seed)`.
    pub records: Vec<LocalLawRecord<f64>>,
    /// Sorted by sample index.
    pub diagnostics: Vec<SampleDiagnostics>,
}

fn spectral_failure(err: &SpectralError) -> bool {
    matches!(err, SpectralError::DecompositionFailure { .. })
}

fn local_law_sample(
    plan: &ExperimentPlan,
    solutions: &[SceSolution<f64>],
    index: usize,
) -> Result<(Vec<LocalLawRecord<f64>>, SampleDiagnostics), HarnessError> {
    let seed = derive_seed(plan.base_seed, index as u64);
    let spectrum = {
        let matrix = sample(&plan.spec, plan.model, seed);
        eigen_decompose(&matrix, true).map_err(|source| HarnessError::Spectral { seed, source })?
    };
    let wrap = |source| HarnessError::Spectral { seed, source };
    let records =
        local_law_records(&spectrum, &plan.spec, solutions, plan.pair_budget).map_err(wrap)?;

    let n = spectrum.n();
    let z_min = solutions
        .iter()
        .map(|s| s.z)
        .min_by(|a, b| a.im.total_cmp(&b.im))
        .unwrap_or(Complex::new(0.0, 1.0));
    let mut rng = aux_stream(seed, WARD_STREAM);
    let mut ward_max_defect = 0.0f64;
    for _ in 0..plan.ward_rows {
        let i = rng.random_range(0..n);
        ward_max_defect = ward_max_defect.max(ward_defect(&spectrum, i, z_min).map_err(wrap)?);
    }
    let delocalization = match delocalization_profile(&spectrum, plan.domain.energy_interval) {
        Ok(v) => v,
        Err(SpectralError::EmptyBulk { .. }) => f64::NAN,
        Err(e) => return Err(wrap(e)),
    };
    let dyadic = plan
        .domain
        .energies()
        .into_iter()
        .map(|e| {
            dyadic_ratio(
                &dyadic_count_profile(&spectrum, e, plan.delta),
                n,
                plan.delta,
            )
        })
        .fold(0.0f64, f64::max);
    log::debug!("local-law sample {index} (seed {seed}) done");
    Ok((
        records,
        SampleDiagnostics {
            index,
            seed,
            ward_max_defect,
            delocalization,
            dyadic_ratio: dyadic,
        },
    ))
}

/// Samples, decomposes and compares against the pre-solved grid.
pub fn run_local_law(plan: &ExperimentPlan) -> Result<LocalLawRun, HarnessError> {
    let started = Instant::now();
    plan.check()?;
    plan.validate_bulk()?;
    let solutions = plan.solve_domain()?;
    let max_radius = solutions
        .iter()
        .map(|s| stability_certificate(plan.spec.profile(), s).spectral_radius)
        .fold(0.0f64, f64::max);

    let outcomes: Vec<_> = (0..plan.samples)
        .into_par_iter()
        .map(|s| (s, local_law_sample(plan, &solutions, s)))
        .collect();

    let mut report = ExperimentReport::new(
        "local_law",
        &plan.spec,
        plan.model,
        plan.samples,
        plan.base_seed,
    );
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    for (index, outcome) in outcomes {
        match outcome {
            Ok((r, d)) => {
                records.extend(r);
                diagnostics.push(d);
            }
            Err(HarnessError::Spectral { seed, source }) if spectral_failure(&source) => {
                log::warn!("sample {index} (seed {seed}) skipped: {source}");
                report.failures.push(SampleFailure {
                    index,
                    seed,
                    message: source.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    records.sort_by(|a, b| {
        a.z.re
            .total_cmp(&b.z.re)
            .then(a.z.im.total_cmp(&b.z.im))
            .then(a.sample_seed.cmp(&b.sample_seed))
    });
    report.completed_samples = diagnostics.len();
    report.max_stability_radius = Some(max_radius);

    let level = plan.thresholds.quantile;
    for sol in &solutions {
        let at_z: Vec<&LocalLawRecord<f64>> = records.iter().filter(|r| r.z == sol.z).collect();
        let collect =
            |f: &dyn Fn(&LocalLawRecord<f64>) -> f64| at_z.iter().map(|r| f(r)).collect::<Vec<_>>();
        report.per_z.push(ZSummary {
            re: sol.z.re,
            im: sol.z.im,
            phi: at_z.first().map(|r| r.phi).unwrap_or(f64::NAN),
            lambda: QuantileSummary::of(&collect(&|r| r.lambda), level),
            lambda_over_phi: QuantileSummary::of(&collect(&|r| r.lambda_over_phi()), level),
            schur_over_phi: QuantileSummary::of(&collect(&|r| r.schur_over_phi()), level),
            m_error_over_phi: QuantileSummary::of(&collect(&|r| r.m_error_over_phi()), level),
        });
    }

    let worst =
        |f: &dyn Fn(&ZSummary) -> f64| report.per_z.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let t = plan.thresholds;
    let checks = vec![
        Check::at_most(
            "lambda_over_phi_upper",
            worst(&|s| s.lambda_over_phi.upper),
            t.lambda_over_phi,
        ),
        Check::at_most(
            "schur_over_phi_upper",
            worst(&|s| s.schur_over_phi.upper),
            t.schur_over_phi,
        ),
        Check::at_most(
            "m_error_over_phi_upper",
            worst(&|s| s.m_error_over_phi.upper),
            t.m_error_over_phi,
        ),
        Check::at_most(
            "median_lambda_over_phi_increase_in_eta",
            eta_monotonicity_violation(&report.per_z, |s| s.lambda_over_phi.median),
            0.0,
        ),
        Check::at_most(
            "median_lambda_increase_in_eta",
            eta_monotonicity_violation(&report.per_z, |s| s.lambda.median),
            0.0,
        ),
        Check::at_most("stability_radius", max_radius, 1.0 + STABILITY_SLACK),
    ];
    report.checks = checks;

    if !diagnostics.is_empty() {
        let summary = summarize_diagnostics(&diagnostics, level);
        report.checks.push(Check::at_most(
            "ward_max_defect",
            summary.ward_max_defect,
            t.ward,
        ));
        report.checks.push(Check::at_most(
            "delocalization_upper",
            summary.delocalization.upper,
            t.delocalization,
        ));
        report.checks.push(Check::at_most(
            "dyadic_ratio_upper",
            summary.dyadic_ratio.upper,
            t.dyadic,
        ));
        report.diagnostics = Some(summary);
    }
    report.finish(started);
    Ok(LocalLawRun {
        report,
        records,
        diagnostics,
    })
}

/// Quantile summary of per-sample diagnostics.
pub fn summarize_diagnostics(diagnostics: &[SampleDiagnostics], level: f64) -> DiagnosticsSummary {
    let deloc: Vec<f64> = diagnostics.iter().map(|d| d.delocalization).collect();
    let dyadic: Vec<f64> = diagnostics.iter().map(|d| d.dyadic_ratio).collect();
    DiagnosticsSummary {
        ward_max_defect: diagnostics
            .iter()
            .map(|d| d.ward_max_defect)
            .fold(0.0, f64::max),
        delocalization: QuantileSummary::of(&deloc, level),
        dyadic_ratio: QuantileSummary::of(&dyadic, level),
    }
}

/// Largest increase of `stat` between consecutive `η` at a fixed energy;
/// nonpositive when `stat` is nonincreasing in `η` everywhere.
pub fn eta_monotonicity_violation(per_z: &[ZSummary], stat: impl Fn(&ZSummary) -> f64) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for w in per_z.windows(2) {
        if w[0].re == w[1].re {
            worst = worst.max(stat(&w[1]) - stat(&w[0]));
        }
    }
    if worst == f64::NEG_INFINITY {
        0.0
    } else {
        worst
    }
}

/// Consecutive-gap ratios `min(δ_i, δ_{i+1}) / max(δ_i, δ_{i+1})` of the sorted
/// eigenvalues in `[lower, upper]`. Two zero gaps count as ratio 1.
pub fn gap_ratio_statistics(
    eigenvalues: &[f64],
    (lower, upper): (f64, f64),
) -> Result<Vec<f64>, HarnessError> {
    let inside: Vec<f64> = eigenvalues
        .iter()
        .copied()
        .filter(|&l| l >= lower && l <= upper)
        .collect();
    if inside.len() < 3 {
        return Err(HarnessError::TooFewEigenvalues {
            found: inside.len(),
        });
    }
    Ok(inside
        .windows(3)
        .map(|w| {
            let (a, b) = (w[1] - w[0], w[2] - w[1]);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            if hi == 0.0 {
                1.0
            } else {
                lo / hi
            }
        })
        .collect())
}

/// Interval spanned by the middle third of a sorted spectrum.
pub fn middle_third(eigenvalues: &[f64]) -> (f64, f64) {
    let n = eigenvalues.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let a = n / 3;
    let b = ((2 * n).div_ceil(3)).saturating_sub(1).max(a);
    (eigenvalues[a], eigenvalues[b.min(n - 1)])
}

/// Which eigenvalues enter the gap-ratio pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum BulkSelection {
    MiddleThird,
    Interval { lower: f64, upper: f64 },
}

impl BulkSelection {
    pub fn interval(&self, eigenvalues: &[f64]) -> (f64, f64) {
        match *self {
            BulkSelection::MiddleThird => middle_third(eigenvalues),
            BulkSelection::Interval { lower, upper } => (lower, upper),
        }
    }
}

#[derive(Debug, Clone)]
pub struct UniversalityPlan {
    pub spec: EnsembleSpec<f64>,
    pub model: Model,
    pub samples: usize,
    pub base_seed: u64,
    /// GOE reference samples of the same dimension.
    pub goe_samples: usize,
    pub goe_seed: u64,
    pub bulk: BulkSelection,
    pub ks_threshold: f64,
    pub control_threshold: f64,
    /// Also compare two disjoint GOE pools.
    pub null_check: bool,
    /// Also compare i.i.d. uniform points against the GOE pool.
    pub poisson_control: bool,
}

impl UniversalityPlan {
    pub fn new(spec: EnsembleSpec<f64>, model: Model, samples: usize, base_seed: u64) -> Self {
        Self {
            spec,
            model,
            samples,
            base_seed,
            goe_samples: samples,
            goe_seed: derive_seed(base_seed, u64::MAX),
            bulk: BulkSelection::MiddleThird,
            ks_threshold: 0.02,
            control_threshold: 0.1,
            null_check: true,
            poisson_control: true,
        }
    }
}

/// Per-sample row of a universality run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioSample {
    pub pool: String,
    pub index: usize,
    pub seed: u64,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct UniversalityRun {
    pub report: ExperimentReport,
    pub samples: Vec<RatioSample>,
}

enum Source {
    Ensemble,
    Goe,
    Poisson,
}

fn ratio_pool(
    plan: &UniversalityPlan,
    pool: &str,
    source: Source,
    seeds: Vec<(usize, u64)>,
) -> Result<(Vec<f64>, Vec<RatioSample>, Vec<SampleFailure>), HarnessError> {
    let n = plan.spec.n();
    let outcomes: Vec<_> = seeds
        .into_par_iter()
        .map(|(index, seed)| {
            let eigenvalues: Result<Vec<f64>, SpectralError> = match source {
                Source::Ensemble => eigen_decompose(&sample(&plan.spec, plan.model, seed), false)
                    .map(|s| s.eigenvalues().to_vec()),
                Source::Goe => eigen_decompose(&sample_goe::<f64>(n, seed), false)
                    .map(|s| s.eigenvalues().to_vec()),
                Source::Poisson => {
                    let mut rng = aux_stream(seed, POISSON_STREAM);
                    let points: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                    Ok(Spectrum::from_eigenvalues(points, seed)
                        .eigenvalues()
                        .to_vec())
                }
            };
            (index, seed, eigenvalues)
        })
        .collect();
    let mut pooled = Vec::new();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (index, seed, ev) in outcomes {
        match ev {
            Ok(ev) => {
                let interval = plan.bulk.interval(&ev);
                let r = gap_ratio_statistics(&ev, interval)?;
                rows.push(RatioSample {
                    pool: pool.into(),
                    index,
                    seed,
                    lower: interval.0,
                    upper: interval.1,
                    count: r.len(),
                    mean_ratio: r.iter().sum::<f64>() / r.len() as f64,
                });
                pooled.extend(r);
            }
            Err(e) if spectral_failure(&e) => failures.push(SampleFailure {
                index,
                seed,
                message: format!("{pool}: {e}"),
            }),
            Err(source) => return Err(HarnessError::Spectral { seed, source }),
        }
    }
    Ok((pooled, rows, failures))
}

/// Pools gap ratios of the ensemble and of GOE and compares their ECDFs.
pub fn run_universality(plan: &UniversalityPlan) -> Result<UniversalityRun, HarnessError> {
    let started = Instant::now();
    if plan.samples == 0 || plan.goe_samples == 0 {
        return Err(HarnessError::InvalidPlan(vec![
            "sample counts must be positive".into(),
        ]));
    }
    let ens_seeds = (0..plan.samples)
        .map(|s| (s, derive_seed(plan.base_seed, s as u64)))
        .collect();
    let goe_seeds = (0..plan.goe_samples)
        .map(|s| (s, derive_seed(plan.goe_seed, s as u64)))
        .collect();
    let (ens, mut rows, mut failures) = ratio_pool(plan, "ensemble", Source::Ensemble, ens_seeds)?;
    let (goe, r, f) = ratio_pool(plan, "goe", Source::Goe, goe_seeds)?;
    rows.extend(r);
    failures.extend(f);

    let mut report = ExperimentReport::new(
        "universality",
        &plan.spec,
        plan.model,
        plan.samples,
        plan.base_seed,
    );
    let ks = ks_two_sample(&ens, &goe);
    report
        .checks
        .push(Check::at_most("ks_ensemble_vs_goe", ks, plan.ks_threshold));
    let mut summary = UniversalitySummary {
        ks_ensemble_vs_goe: ks,
        ks_null: None,
        ks_poisson: None,
        ensemble_ratios: ens.len(),
        goe_ratios: goe.len(),
        null_ratios: 0,
        poisson_ratios: 0,
        mean_ratio_ensemble: ens.iter().sum::<f64>() / ens.len() as f64,
        mean_ratio_goe: goe.iter().sum::<f64>() / goe.len() as f64,
    };
    if plan.null_check {
        let seeds = (0..plan.goe_samples)
            .map(|s| (s, derive_seed(plan.goe_seed, (plan.goe_samples + s) as u64)))
            .collect();
        let (null, r, f) = ratio_pool(plan, "goe_null", Source::Goe, seeds)?;
        rows.extend(r);
        failures.extend(f);
        let d = ks_two_sample(&null, &goe);
        summary.ks_null = Some(d);
        summary.null_ratios = null.len();
        report
            .checks
            .push(Check::at_most("ks_goe_null", d, plan.ks_threshold));
    }
    if plan.poisson_control {
        let seeds = (0..plan.goe_samples)
            .map(|s| (s, derive_seed(plan.goe_seed ^ POISSON_STREAM, s as u64)))
            .collect();
        let (poisson, r, _) = ratio_pool(plan, "poisson", Source::Poisson, seeds)?;
        rows.extend(r);
        let d = ks_two_sample(&poisson, &goe);
        summary.ks_poisson = Some(d);
        summary.poisson_ratios = poisson.len();
        report.checks.push(Check::at_least(
            "ks_poisson_control",
            d,
            plan.control_threshold,
        ));
    }
    report.completed_samples = rows.iter().filter(|r| r.pool == "ensemble").count();
    report.failures = failures;
    report.universality = Some(summary);
    report.finish(started);
    Ok(UniversalityRun {
        report,
        samples: rows,
    })
}

#[derive(Debug, Clone)]
pub struct DegreePlan {
    pub spec: EnsembleSpec<f64>,
    pub samples: usize,
    pub base_seed: u64,
    /// Tail cutoff as a quantile of the pooled degrees.
    pub cutoff_quantile: f64,
    pub bootstrap: usize,
    pub confidence: f64,
    /// Acceptance interval for the estimate, if any.
    pub target: Option<(f64, f64)>,
}

impl DegreePlan {
    pub fn new(spec: EnsembleSpec<f64>, samples: usize, base_seed: u64) -> Self {
        Self {
            spec,
            samples,
            base_seed,
            cutoff_quantile: 0.8,
            bootstrap: 200,
            confidence: 0.95,
            target: None,
        }
    }
}

/// Hill fit above the cutoff quantile with a percentile bootstrap interval.
/// The tail must span at least a factor of two above the cutoff.
pub fn fit_degree_tail(
    degrees: &[f64],
    cutoff_quantile: f64,
    bootstrap: usize,
    confidence: f64,
    seed: u64,
) -> Result<DegreeFit, HarnessError> {
    let estimate = |values: &[f64]| -> Result<(f64, f64, usize), HarnessError> {
        let s = sorted(values);
        let cutoff = quantile_sorted(&s, cutoff_quantile).ceil().max(1.0);
        let max = s.last().copied().unwrap_or(0.0);
        if max < 2.0 * cutoff {
            return Err(HarnessError::DegenerateDegrees(format!(
                "largest degree {max} is below twice the cutoff {cutoff}"
            )));
        }
        let (beta, tail) = hill_exponent(&s, cutoff).ok_or_else(|| {
            HarnessError::DegenerateDegrees(format!("no degree above the cutoff {cutoff}"))
        })?;
        Ok((beta, cutoff, tail))
    };
    let (beta_hat, cutoff, tail_size) = estimate(degrees)?;
    let mut rng = aux_stream(seed, BOOTSTRAP_STREAM);
    let mut draws = Vec::with_capacity(bootstrap);
    let mut resample = vec![0.0; degrees.len()];
    for _ in 0..bootstrap {
        for slot in resample.iter_mut() {
            *slot = *degrees.choose(&mut rng).expect("nonempty");
        }
        if let Ok((b, _, _)) = estimate(&resample) {
            draws.push(b);
        }
    }
    let draws = sorted(&draws);
    let alpha = 0.5 * (1.0 - confidence);
    Ok(DegreeFit {
        beta_hat,
        ci_lower: quantile_sorted(&draws, alpha),
        ci_upper: quantile_sorted(&draws, 1.0 - alpha),
        confidence,
        cutoff,
        tail_size,
        total: degrees.len(),
    })
}

#[derive(Debug, Clone)]
pub struct DegreeRun {
    pub report: ExperimentReport,
    /// Degrees per sample, in sample order.
    pub degrees: Vec<Vec<usize>>,
}

/// Samples 0/1 adjacency matrices, pools the vertex degrees and fits the tail.
pub fn degree_tail_fit(plan: &DegreePlan) -> Result<DegreeRun, HarnessError> {
    let started = Instant::now();
    if plan.samples == 0 {
        return Err(HarnessError::InvalidPlan(vec![
            "samples must be positive".into()
        ]));
    }
    let degrees: Vec<Vec<usize>> = (0..plan.samples)
        .into_par_iter()
        .map(|s| adjacency_degrees(&plan.spec, derive_seed(plan.base_seed, s as u64)))
        .collect();
    let pooled: Vec<f64> = degrees.iter().flatten().map(|&d| d as f64).collect();
    let fit = fit_degree_tail(
        &pooled,
        plan.cutoff_quantile,
        plan.bootstrap,
        plan.confidence,
        plan.base_seed,
    )?;
    let mut report = ExperimentReport::new(
        "degrees",
        &plan.spec,
        Model::CenteredZeroOne,
        plan.samples,
        plan.base_seed,
    );
    report.completed_samples = plan.samples;
    if let Some((lo, hi)) = plan.target {
        report
            .checks
            .push(Check::at_least("beta_hat_lower", fit.beta_hat, lo));
        report
            .checks
            .push(Check::at_most("beta_hat_upper", fit.beta_hat, hi));
    }
    report.degree_fit = Some(fit);
    report.finish(started);
    Ok(DegreeRun { report, degrees })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{build_spec, constant_profile, power_law_profile};
    use proptest::prelude::*;

    fn semicircle_spec(n: usize) -> EnsembleSpec<f64> {
        build_spec(n, 0.5, vec![vec![1.0; n]]).unwrap()
    }

    fn smoke_plan(n: usize, samples: usize) -> ExperimentPlan {
        let domain = Domain {
            energy_interval: (0.0, 0.0),
            energy_points: 1,
            etas: vec![0.1],
        };
        ExperimentPlan::new(semicircle_spec(n), Model::RandomSign, domain, samples, 7)
    }

    #[test]
    fn smoke_run_has_one_record() {
        let run = run_local_law(&smoke_plan(60, 1)).unwrap();
        assert_eq!(run.records.len(), 1);
        assert_eq!(run.report.per_z.len(), 1);
        assert_eq!(run.diagnostics.len(), 1);
        assert!(run.report.valid);
        let q = &run.report.per_z[0].lambda_over_phi;
        assert!(q.median <= q.upper && q.upper <= q.max);
    }

    #[test]
    fn deterministic_and_order_independent() {
        let mut plan = smoke_plan(80, 4);
        plan.domain = Domain {
            energy_interval: (-0.5, 0.5),
            energy_points: 3,
            etas: vec![0.5, 0.05],
        };
        let a = run_local_law(&plan).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let b = pool.install(|| run_local_law(&plan).unwrap());
        assert_eq!(a.records, b.records);
        assert_eq!(a.diagnostics, b.diagnostics);
        assert_eq!(a.records.len(), 4 * 6);
        for w in a.records.windows(2) {
            let ka = (w[0].z.re, w[0].z.im, w[0].sample_seed);
            let kb = (w[1].z.re, w[1].z.im, w[1].sample_seed);
            assert!(ka <= kb);
        }
    }

    #[test]
    fn plan_checks_collect_all_violations() {
        let mut plan = smoke_plan(100, 0);
        plan.domain.etas = vec![1e-6, 20.0];
        plan.thresholds.quantile = 1.5;
        match plan.check() {
            Err(HarnessError::InvalidPlan(v)) => assert_eq!(v.len(), 4, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn energy_outside_bulk_rejected() {
        let mut plan = smoke_plan(100, 1);
        plan.domain.energy_interval = (1.5, 2.5);
        plan.domain.energy_points = 3;
        assert!(matches!(
            run_local_law(&plan),
            Err(HarnessError::BulkValidationFailed { .. })
        ));
    }

    #[test]
    fn gap_ratio_examples() {
        let r = gap_ratio_statistics(&[0.0, 1.0, 2.0, 4.0], (-1.0, 5.0)).unwrap();
        assert_eq!(r, vec![1.0, 0.5]);
        let picket: Vec<f64> = (0..50).map(|k| k as f64 * 0.25).collect();
        assert!(gap_ratio_statistics(&picket, (0.0, 100.0))
            .unwrap()
            .iter()
            .all(|&x| x == 1.0));
        assert!(matches!(
            gap_ratio_statistics(&[0.0, 1.0], (0.0, 1.0)),
            Err(HarnessError::TooFewEigenvalues { found: 2 })
        ));
        assert_eq!(middle_third(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]), (2.0, 3.0));
    }

    #[test]
    fn universality_small_run_discriminates_poisson() {
        let spec = semicircle_spec(200);
        let mut plan = UniversalityPlan::new(spec, Model::RandomSign, 6, 3);
        plan.ks_threshold = 0.1;
        let run = run_universality(&plan).unwrap();
        let u = run.report.universality.as_ref().unwrap();
        assert!(u.ks_poisson.unwrap() > 0.15, "{u:?}");
        assert!((u.mean_ratio_goe - 0.53).abs() < 0.03, "{u:?}");
        assert_eq!(run.samples.len(), 6 * 4);
    }

    #[test]
    fn constant_profile_degrees_are_degenerate() {
        let spec = build_spec(400, 0.5, vec![constant_profile(400, 1.0)]).unwrap();
        let plan = DegreePlan::new(spec, 2, 1);
        assert!(matches!(
            degree_tail_fit(&plan),
            Err(HarnessError::DegenerateDegrees(_))
        ));
    }

    #[test]
    fn power_law_degrees_small() {
        let n = 1000;
        let spec = build_spec(n, 0.5, vec![power_law_profile(n, 0.25).unwrap()]).unwrap();
        let mut plan = DegreePlan::new(spec, 4, 11);
        plan.bootstrap = 50;
        let run = degree_tail_fit(&plan).unwrap();
        let fit = run.report.degree_fit.unwrap();
        assert!(fit.ci_lower <= fit.beta_hat && fit.beta_hat <= fit.ci_upper);
        assert!(fit.beta_hat > 3.0 && fit.beta_hat < 7.0, "{fit:?}");
    }

    proptest! {
        #[test]
        fn gap_ratios_in_unit_interval(mut xs in prop::collection::vec(-100.0f64..100.0, 3..60)) {
            xs.sort_by(f64::total_cmp);
            let r = gap_ratio_statistics(&xs, (-100.0, 100.0)).unwrap();
            prop_assert_eq!(r.len(), xs.len() - 2);
            prop_assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn gap_ratios_scale_and_shift_invariant(
            gaps in prop::collection::vec(0.01f64..1.0, 3..40),
            a in 0.5f64..4.0,
            b in -5.0f64..5.0,
        ) {
            let xs: Vec<f64> = gaps.iter().scan(0.0, |acc, g| { *acc += g; Some(*acc) }).collect();
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let r1 = gap_ratio_statistics(&xs, (f64::MIN, f64::MAX)).unwrap();
            let r2 = gap_ratio_statistics(&ys, (f64::MIN, f64::MAX)).unwrap();
            for (u, v) in r1.iter().zip(&r2) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
