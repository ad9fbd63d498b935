//! Acceptance suite. Runs every criterion at full scale, one after another so
//! that the timed criteria do not compete for cores, and prints one PASS/FAIL
//! line per criterion. Exits nonzero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use clspec::ensemble::{
    build_spec, constant_profile, power_law_profile, two_block_profile, LowRankProfile,
};
use clspec::harness::{degree_tail_fit, run_local_law, run_universality, LocalLawRun};
use clspec::qve::{solve_qve, KernelGrid};
use clspec::sce::{solve_grid, solve_sce, stability_certificate, SceSolution, SolverOptions};
use clspec::stats::quantile;
use clspec::Complex64;
use clspec_cli::commands::{degree_plan, local_law_plan, replay, universality_plan, Command};
use clspec_cli::config::parse_config_with_env;
use clspec_cli::RunConfig;

struct Verdict {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn verdict(id: u32, name: &'static str, passed: bool, detail: String) -> Verdict {
    let v = Verdict {
        id,
        name,
        passed,
        detail,
    };
    println!(
        "{} criterion {:>2} {}: {}",
        if v.passed { "PASS" } else { "FAIL" },
        v.id,
        v.name,
        v.detail
    );
    v
}

fn config(json: &str) -> RunConfig {
    parse_config_with_env(json, Vec::new())
        .unwrap_or_else(|e| panic!("acceptance config rejected: {e}"))
}

/// Closed-form semicircle Stieltjes transform, branch with `Im m > 0`.
fn semicircle(z: Complex64) -> Complex64 {
    (-z + (z - 2.0).sqrt() * (z + 2.0).sqrt()) / 2.0
}

/// Twenty points covering the spectrum and `Im z` from `1e-3` to `10`.
fn oracle_grid() -> Vec<Complex64> {
    let energies = [-2.5, -1.2, 0.0, 0.7, 1.95];
    let etas = [10.0, 0.1, 1e-2, 1e-3];
    energies
        .iter()
        .flat_map(|&e| etas.iter().map(move |&eta| Complex64::new(e, eta)))
        .collect()
}

fn max_radius(profile: &LowRankProfile<f64>, sols: &[SceSolution<f64>]) -> f64 {
    sols.iter()
        .map(|s| stability_certificate(profile, s).spectral_radius)
        .fold(0.0, f64::max)
}

fn semicircle_oracle(solved: &mut Vec<(LowRankProfile<f64>, Vec<SceSolution<f64>>)>) -> Verdict {
    let n = 1000;
    let profile = LowRankProfile::new(vec![constant_profile(n, 1.0)]).unwrap();
    let grid = oracle_grid();
    let opts = SolverOptions::default();
    let started = Instant::now();
    let sols: Vec<_> = grid
        .iter()
        .map(|&z| solve_sce(&profile, z, &opts).unwrap())
        .collect();
    let elapsed = started.elapsed().as_secs_f64();
    let err = sols
        .iter()
        .map(|s| (s.m - semicircle(s.z)).norm())
        .fold(0.0, f64::max);
    solved.push((profile, sols));
    verdict(
        1,
        "semicircle oracle",
        err <= 1e-10 && elapsed < 1.0,
        format!("max |m - m_sc| = {err:.2e} (<= 1e-10) over 20 points in {elapsed:.3} s (< 1 s)"),
    )
}

fn scaled_semicircle(solved: &mut Vec<(LowRankProfile<f64>, Vec<SceSolution<f64>>)>) -> Verdict {
    let n = 1000;
    let opts = SolverOptions::default();
    let mut err = 0.0f64;
    for c in [2.0, 3.0] {
        let profile = LowRankProfile::new(vec![constant_profile(n, c)]).unwrap();
        let sols: Vec<_> = oracle_grid()
            .iter()
            .map(|&z| solve_sce(&profile, z, &opts).unwrap())
            .collect();
        for s in &sols {
            err = err.max((s.m - semicircle(s.z / c) / c).norm());
        }
        solved.push((profile, sols));
    }
    verdict(
        2,
        "constant profile scaling",
        err <= 1e-10,
        format!("max |m - m_sc(z/c)/c| = {err:.2e} (<= 1e-10) for c = 2, 3"),
    )
}

fn dyadic_agreement(solved: &mut Vec<(LowRankProfile<f64>, Vec<SceSolution<f64>>)>) -> Verdict {
    let n = 2048;
    let profile = LowRankProfile::new(vec![power_law_profile(n, 0.25).unwrap()]).unwrap();
    let opts = SolverOptions::default();
    let started = Instant::now();
    let kernel = KernelGrid::from_low_rank(&profile, n).unwrap();
    let points: Vec<Complex64> = (0..10)
        .map(|k| Complex64::new(-0.9 + 0.2 * k as f64, 1e-2))
        .collect();
    let mut err = 0.0f64;
    let mut min_im = f64::INFINITY;
    let mut sols = Vec::new();
    for &z in &points {
        let a = solve_sce(&profile, z, &opts).unwrap();
        let b = solve_qve(&kernel, z, &opts).unwrap();
        err = err.max((a.m - b.m0).norm());
        min_im = min_im.min(a.m.im);
        sols.push(a);
    }
    let elapsed = started.elapsed().as_secs_f64();
    solved.push((profile, sols));
    verdict(
        3,
        "low-rank and kernel solvers agree",
        err <= 1e-8 && elapsed < 30.0 && min_im > 0.05,
        format!(
            "max |m_sce - m_qve| = {err:.2e} (<= 1e-8) at 10 bulk points (min Im m = {min_im:.3}), n = N = 2048, {elapsed:.2} s (< 30 s)"
        ),
    )
}

/// Extra profiles swept over a wide grid for the stability criterion.
fn stability_sweep() -> Vec<(LowRankProfile<f64>, Vec<SceSolution<f64>>)> {
    let n = 2000;
    let mut profiles = Vec::new();
    for mu in [0.1, 0.25, 0.4] {
        profiles.push(LowRankProfile::new(vec![power_law_profile(n, mu).unwrap()]).unwrap());
    }
    profiles.push(
        LowRankProfile::new(vec![two_block_profile(n, &[1.0, 3.0], &[0.5, 0.5]).unwrap()]).unwrap(),
    );
    profiles.push(
        LowRankProfile::new(vec![
            power_law_profile(n, 0.25).unwrap(),
            two_block_profile(n, &[1.0, 2.0], &[0.3, 0.7]).unwrap(),
        ])
        .unwrap(),
    );
    let opts = SolverOptions::default();
    let etas = [10.0, 1.0, 0.1, 1e-2, 1e-3];
    profiles
        .into_iter()
        .map(|p| {
            let mut sols = Vec::new();
            for k in 0..21 {
                let e = -5.0 + 0.5 * k as f64;
                let line: Vec<Complex64> = etas.iter().map(|&eta| Complex64::new(e, eta)).collect();
                sols.extend(solve_grid(&p, &line, &opts).unwrap());
            }
            (p, sols)
        })
        .collect()
}

fn stability(solved: &[(LowRankProfile<f64>, Vec<SceSolution<f64>>)]) -> Verdict {
    let count: usize = solved.iter().map(|(_, s)| s.len()).sum();
    let radius = solved
        .iter()
        .map(|(p, s)| max_radius(p, s))
        .fold(0.0, f64::max);
    verdict(
        4,
        "stability certificate",
        radius <= 1.0 + 1e-8,
        format!("max spectral radius = {radius:.10} (<= 1 + 1e-8) over {count} solutions"),
    )
}

const LOCAL_LAW: &str = r#"{
  "n": 2000, "kappa": KAPPA, "model": "MODEL",
  "profile": {"type": "power_law", "mu": 0.25},
  "seed": 20240601,
  "local_law": {"energy_interval": [-0.5, 0.5], "energy_points": 5,
                "etas": [{"n_power": -0.8}, {"n_power": -0.5}, 0.1], "samples": 100}
}"#;

fn local_law(model: &str, kappa: f64) -> LocalLawRun {
    let text = LOCAL_LAW
        .replace("KAPPA", &kappa.to_string())
        .replace("MODEL", model);
    let plan = local_law_plan(&config(&text)).unwrap();
    run_local_law(&plan).unwrap()
}

fn check_value(run: &LocalLawRun, name: &str) -> (f64, bool) {
    let c = run
        .report
        .check(name)
        .unwrap_or_else(|| panic!("missing check {name}"));
    (c.value, c.passed)
}

fn local_law_bound(runs: &[(&str, &LocalLawRun)]) -> Verdict {
    let mut passed = true;
    let mut parts = Vec::new();
    for (label, run) in runs {
        let (upper, ok_upper) = check_value(run, "lambda_over_phi_upper");
        let (rise, ok_rise) = check_value(run, "median_lambda_over_phi_increase_in_eta");
        passed &= ok_upper && ok_rise && run.report.completed_samples == 100;
        parts.push(format!(
            "{label}: q95 Lambda/Phi = {upper:.2} (<= 10), median rise in eta = {rise:.3} (<= 0), {} samples",
            run.report.completed_samples
        ));
    }
    verdict(5, "entrywise local law", passed, parts.join("; "))
}

fn schur_bound(runs: &[(&str, &LocalLawRun)]) -> Verdict {
    let mut passed = true;
    let mut parts = Vec::new();
    for (label, run) in runs {
        let (upper, ok) = check_value(run, "schur_over_phi_upper");
        passed &= ok;
        parts.push(format!(
            "{label}: q95 max_i R_i/(theta_i Phi) = {upper:.2} (<= 10)"
        ));
    }
    verdict(6, "Schur complement residual", passed, parts.join("; "))
}

fn ward(run: &LocalLawRun) -> Verdict {
    let first: Vec<_> = run.diagnostics.iter().filter(|d| d.index < 10).collect();
    let worst = first.iter().map(|d| d.ward_max_defect).fold(0.0, f64::max);
    let rows = first.len() * 10;
    verdict(
        7,
        "Ward identity",
        worst <= 1e-8 && rows == 100,
        format!(
            "max relative defect = {worst:.2e} (<= 1e-8) over {rows} rows of {} spectra",
            first.len()
        ),
    )
}

fn universality() -> Verdict {
    let c = config(
        r#"{"n": 2000, "kappa": 0.5, "profile": {"type": "power_law", "mu": 0.25}, "seed": 7,
            "universality": {"samples": 50}}"#,
    );
    let run = run_universality(&universality_plan(&c).unwrap()).unwrap();
    let u = run.report.universality.as_ref().unwrap();
    let (null, poisson) = (
        u.ks_null.unwrap_or(f64::NAN),
        u.ks_poisson.unwrap_or(f64::NAN),
    );
    verdict(
        8,
        "bulk gap-ratio universality",
        u.ks_ensemble_vs_goe <= 0.02 && null <= 0.02 && poisson >= 0.1 && run.report.completed_samples == 50,
        format!(
            "KS vs GOE = {:.4} (<= 0.02), GOE null = {null:.4} (<= 0.02), Poisson = {poisson:.3} (>= 0.1), {} ensemble ratios",
            u.ks_ensemble_vs_goe, u.ensemble_ratios
        ),
    )
}

fn degrees() -> Verdict {
    let c = config(
        r#"{"n": 4000, "kappa": 0.5, "profile": {"type": "power_law", "mu": 0.25}, "seed": 11,
            "degrees": {"samples": 20}}"#,
    );
    let run = degree_tail_fit(&degree_plan(&c).unwrap()).unwrap();
    let fit = run.report.degree_fit.as_ref().unwrap();
    verdict(
        9,
        "degree tail exponent",
        (4.5..=5.5).contains(&fit.beta_hat),
        format!(
            "beta_hat = {:.3} in [4.5, 5.5], {:.0}% CI [{:.3}, {:.3}], tail {} of {}",
            fit.beta_hat,
            100.0 * fit.confidence,
            fit.ci_lower,
            fit.ci_upper,
            fit.tail_size,
            fit.total
        ),
    )
}

fn delocalization(run: &LocalLawRun) -> Verdict {
    let first: Vec<_> = run.diagnostics.iter().filter(|d| d.index < 50).collect();
    let deloc = quantile(
        &first.iter().map(|d| d.delocalization).collect::<Vec<_>>(),
        0.95,
    );
    let dyadic = quantile(
        &first.iter().map(|d| d.dyadic_ratio).collect::<Vec<_>>(),
        0.95,
    );
    verdict(
        10,
        "delocalization and dyadic ratio",
        deloc <= 30.0 && dyadic <= 10.0 && first.len() == 50,
        format!(
            "q95 N max|u|^2 = {deloc:.2} (<= 30), q95 dyadic ratio = {dyadic:.2} (<= 10) over {} samples",
            first.len()
        ),
    )
}

const REPLAY: &str = r#"{
  "n": 256, "kappa": 0.5, "profile": {"type": "power_law", "mu": 0.25}, "seed": 99,
  "solve": {"energies": [-1.0, 0.0, 1.5], "etas": [0.01, 1.0]},
  "qve": {"grid": 16, "kernel": "profile", "points": [[0.0, 0.1]]},
  "stats": {"points": [[0.0, 0.1], [0.5, 0.05]], "pair_budget": 1000},
  "local_law": {"energy_interval": [-0.5, 0.5], "energy_points": 3, "etas": [0.05, 0.5],
                "samples": 3, "pair_budget": 1000},
  "universality": {"samples": 3},
  "degrees": {"samples": 3, "bootstrap": 20}
}"#;

fn reproducibility(root: &Path) -> Verdict {
    let c = config(REPLAY);
    let commands = [
        Command::Solve,
        Command::Qve,
        Command::Sample,
        Command::Stats,
        Command::LocalLaw,
        Command::Universality,
        Command::Degrees,
    ];
    let mut mismatches = Vec::new();
    for cmd in commands {
        let first = root.join(cmd.name());
        let again = root.join(format!("{}-replay", cmd.name()));
        let outcome = clspec_cli::run(cmd, &c, &first)
            .and_then(|_| replay(&first.join("manifest.json"), &again));
        let same = outcome.is_ok()
            && fs::read(first.join("records.csv")).ok() == fs::read(again.join("records.csv")).ok();
        if !same {
            mismatches.push(match outcome {
                Err(e) => format!("{}: {e:#}", cmd.name()),
                Ok(_) => cmd.name().to_string(),
            });
        }
    }
    verdict(
        11,
        "manifest replay",
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!(
                "records.csv byte-identical after replay for all {} subcommands",
                commands.len()
            )
        } else {
            format!("not reproduced: {}", mismatches.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut solved = Vec::new();
    let mut verdicts = vec![
        semicircle_oracle(&mut solved),
        scaled_semicircle(&mut solved),
        dyadic_agreement(&mut solved),
    ];
    solved.extend(stability_sweep());
    verdicts.push(degrees());
    verdicts.push(reproducibility(tmp.path()));

    let sign = local_law("random_sign", 0.5);
    let centered = local_law("centered_zero_one", 0.4);
    for (run, kappa) in [(&sign, 0.5), (&centered, 0.4)] {
        let spec = build_spec(2000, kappa, vec![power_law_profile(2000, 0.25).unwrap()]).unwrap();
        let plan_grid: Vec<Complex64> = run
            .report
            .per_z
            .iter()
            .map(|s| Complex64::new(s.re, s.im))
            .collect();
        let sols: Vec<_> = plan_grid
            .iter()
            .map(|&z| solve_sce(spec.profile(), z, &SolverOptions::default()).unwrap())
            .collect();
        solved.push((spec.profile().clone(), sols));
    }
    verdicts.push(stability(&solved));
    let runs = [
        ("random sign, kappa 0.5", &sign),
        ("centered, kappa 0.4", &centered),
    ];
    verdicts.push(local_law_bound(&runs));
    verdicts.push(schur_bound(&runs));
    verdicts.push(ward(&sign));
    verdicts.push(delocalization(&sign));
    verdicts.push(universality());

    verdicts.sort_by_key(|v| v.id);
    let failed: Vec<_> = verdicts.iter().filter(|v| !v.passed).collect();
    println!("\nsummary ({:.0} s):", started.elapsed().as_secs_f64());
    for v in &verdicts {
        println!(
            "  {} {:>2} {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.id,
            v.name
        );
    }
    println!(
        "{} of {} criteria passed",
        verdicts.len() - failed.len(),
        verdicts.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
