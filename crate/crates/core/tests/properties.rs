//! Cross-module properties: solver invariants, solver agreement and
//! resolvent entries against an independent dense linear solve.

use clspec::ensemble::{
    build_spec, constant_profile, power_law_profile, sample, sample_goe, LowRankProfile, Model,
};
use clspec::qve::{solve_qve, KernelGrid};
use clspec::sce::{solve_sce, stability_certificate, SolverOptions};
use clspec::spectral::{
    eigen_decompose, empirical_stieltjes, local_law_record, resolvent_entries, ward_defect,
};
use clspec::Complex64;
use proptest::prelude::*;

fn opts() -> SolverOptions<f64> {
    SolverOptions::default()
}

/// `(H - z)^{-1}` by Gaussian elimination with partial pivoting.
fn dense_resolvent(h: &[Vec<f64>], z: Complex64) -> Vec<Vec<Complex64>> {
    let n = h.len();
    let mut a: Vec<Vec<Complex64>> = (0..n)
        .map(|i| {
            (0..2 * n)
                .map(|j| match j {
                    j if j < n && i == j => Complex64::new(h[i][j], 0.0) - z,
                    j if j < n => Complex64::new(h[i][j], 0.0),
                    j if j - n == i => Complex64::new(1.0, 0.0),
                    _ => Complex64::new(0.0, 0.0),
                })
                .collect()
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].norm().total_cmp(&a[y][col].norm()))
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let f = a[row][col];
                let pivot_row = a[col].clone();
                for (v, pv) in a[row].iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    a.into_iter().map(|row| row[n..].to_vec()).collect()
}

#[test]
fn resolvent_entries_match_direct_inverse() {
    let g = power_law_profile(40, 0.3).unwrap();
    let spec = build_spec(40, 0.4, vec![g]).unwrap();
    let h = sample(&spec, Model::RandomSign, 11);
    let dense: Vec<Vec<f64>> = (0..40)
        .map(|i| (0..40).map(|j| h.get(i, j)).collect())
        .collect();
    let spectrum = eigen_decompose(&h, true).unwrap();
    let pairs: Vec<(usize, usize)> = (0..40).flat_map(|i| (0..40).map(move |j| (i, j))).collect();
    for z in [Complex64::new(0.3, 0.05), Complex64::new(-1.7, 1.0)] {
        let inv = dense_resolvent(&dense, z);
        let got = resolvent_entries(&spectrum, z, &pairs).unwrap();
        for (&(i, j), g) in pairs.iter().zip(&got) {
            assert!(
                (g - inv[i][j]).norm() < 1e-10 * (1.0 + inv[i][j].norm()),
                "G_{i}{j}({z})"
            );
        }
        let trace: Complex64 = (0..40).map(|i| inv[i][i]).sum::<Complex64>() / 40.0;
        assert!((empirical_stieltjes(&spectrum, z).unwrap() - trace).norm() < 1e-11);
    }
}

#[test]
fn duplicated_factor_equals_scaled_rank_one() {
    // Two copies of γ give s = 2γγ'/N, the rank-one profile with factor √2 γ.
    let n = 300;
    let g = power_law_profile(n, 0.2).unwrap();
    let scaled: Vec<f64> = g.iter().map(|v| v * 2f64.sqrt()).collect();
    let two = LowRankProfile::new(vec![g.clone(), g]).unwrap();
    let one = LowRankProfile::new(vec![scaled]).unwrap();
    for z in [
        Complex64::new(0.0, 0.01),
        Complex64::new(1.5, 0.2),
        Complex64::new(-3.0, 2.0),
    ] {
        let a = solve_sce(&two, z, &opts()).unwrap();
        let b = solve_sce(&one, z, &opts()).unwrap();
        assert!((a.m - b.m).norm() < 1e-10, "{z}: {} vs {}", a.m, b.m);
    }
}

#[test]
fn empirical_stieltjes_of_goe_tracks_semicircle() {
    let n = 1500;
    let spectrum = eigen_decompose(&sample_goe::<f64>(n, 4), true).unwrap();
    let spec = build_spec(n, 1.0, vec![constant_profile(n, 1.0)]).unwrap();
    for z in [Complex64::new(0.0, 0.2), Complex64::new(1.0, 0.1)] {
        let sol = solve_sce(spec.profile(), z, &opts()).unwrap();
        let rec = local_law_record(&spectrum, &spec, &sol, 50_000).unwrap();
        assert!(
            (rec.m_n - sol.m).norm() < 10.0 * rec.phi,
            "{z}: {}",
            rec.m_error_over_phi()
        );
        assert!(rec.lambda_over_phi() < 10.0);
        assert!(ward_defect(&spectrum, 7, z).unwrap() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sce_solutions_are_herglotz_and_stable(
        mu in 0.05f64..0.45,
        re in -4.0f64..4.0,
        im in 1e-2f64..5.0,
    ) {
        let profile = LowRankProfile::new(vec![power_law_profile(200, mu).unwrap()]).unwrap();
        let z = Complex64::new(re, im);
        let sol = solve_sce(&profile, z, &opts()).unwrap();
        prop_assert!(sol.m.im > 0.0);
        prop_assert!(sol.u.iter().all(|u| u.im > 0.0));
        prop_assert!(sol.m.norm() <= 1.0 / im + 1e-12);
        prop_assert!(sol.g.iter().all(|g| g.norm() <= 1.0 / im + 1e-12));
        // Im-part identity forces a spectral radius below one off the real axis.
        prop_assert!(stability_certificate(&profile, &sol).spectral_radius < 1.0);
    }

    #[test]
    fn reflection_symmetry(mu in 0.05f64..0.45, re in -3.0f64..3.0, im in 1e-2f64..3.0) {
        // m(-z̄) = -conj(m(z)) for a real symmetric variance profile.
        let profile = LowRankProfile::new(vec![power_law_profile(128, mu).unwrap()]).unwrap();
        let a = solve_sce(&profile, Complex64::new(re, im), &opts()).unwrap();
        let b = solve_sce(&profile, Complex64::new(-re, im), &opts()).unwrap();
        prop_assert!((a.m + b.m.conj()).norm() < 1e-10);
    }

    #[test]
    fn low_rank_kernel_and_sce_agree(mu in 0.05f64..0.45, re in -2.0f64..2.0, im in 5e-2f64..2.0) {
        let profile = LowRankProfile::new(vec![power_law_profile(64, mu).unwrap()]).unwrap();
        let kernel = KernelGrid::from_low_rank(&profile, 64).unwrap();
        let z = Complex64::new(re, im);
        let a = solve_sce(&profile, z, &opts()).unwrap();
        let b = solve_qve(&kernel, z, &opts()).unwrap();
        prop_assert!((a.m - b.m0).norm() < 1e-9);
    }

    #[test]
    fn sampling_is_a_pure_function_of_the_seed(seed in any::<u64>()) {
        let spec = build_spec(60, 0.4, vec![power_law_profile(60, 0.25).unwrap()]).unwrap();
        for model in [Model::RandomSign, Model::CenteredZeroOne, Model::Goe] {
            let a = sample(&spec, model, seed);
            let b = sample(&spec, model, seed);
            prop_assert!(a.entries == b.entries);
            prop_assert!(a.is_symmetric());
        }
    }
}
