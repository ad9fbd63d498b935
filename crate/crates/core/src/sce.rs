//! Rank-r self-consistent equations for the low-rank variance profile.
//!
//! Unknowns are `u^(1..r)` in the upper half-plane:
//!
//! ```text
//! u^(k) = -(1/N) Σ_i γ_i^(k) / (z + Σ_j γ_i^(j) u^(j))
//! m     = -(1/N) Σ_i 1       / (z + Σ_j γ_i^(j) u^(j))
//! g_i   = -1 / (z + Σ_j γ_i^(j) u^(j))
//! ```
//!
//! `m` and `g` are recomputed from the converged `u`.

use faer::{Mat, Side};
use num_complex::Complex;
use num_traits::Zero;
use std::fmt;

use crate::ensemble::LowRankProfile;
use crate::fixed_point::{solve_fixed_point, IterationFailure, IterationOptions};
use crate::scalar::{CompensatedComplexSum, Real, C};

/// Solver options; identical to the shared iteration controls.
pub type SolverOptions<T> = IterationOptions<T>;

#[derive(Debug, Clone)]
pub enum SolveError<T: Real> {
    NotUpperHalfPlane(C<T>),
    NoConvergence {
        best: Vec<C<T>>,
        residual: T,
        iterations: usize,
    },
    LeftUpperHalfPlane {
        iteration: usize,
        damping: T,
    },
    GridPoint {
        index: usize,
        z: C<T>,
        source: Box<SolveError<T>>,
    },
    Dimension(String),
}

impl<T: Real> fmt::Display for SolveError<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveError::NotUpperHalfPlane(z) => {
                write!(f, "spectral parameter {z} is not in the upper half-plane")
            }
            SolveError::NoConvergence {
                residual,
                iterations,
                ..
            } => write!(
                f,
                "no convergence after {iterations} iterations (best residual {:e})",
                residual.to_f64_lossy()
            ),
            SolveError::LeftUpperHalfPlane { iteration, damping } => write!(
                f,
                "iterate left the upper half-plane at iteration {iteration} (damping {damping})"
            ),
            SolveError::GridPoint { index, z, source } => {
                write!(f, "grid point {index} (z = {z}): {source}")
            }
            SolveError::Dimension(msg) => write!(f, "dimension mismatch: {msg}"),
        }
    }
}

impl<T: Real> std::error::Error for SolveError<T> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            SolveError::GridPoint { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

impl<T: Real> From<IterationFailure<T>> for SolveError<T> {
    fn from(f: IterationFailure<T>) -> Self {
        match f {
            IterationFailure::NoConvergence {
                best,
                residual,
                iterations,
            } => SolveError::NoConvergence {
                best,
                residual,
                iterations,
            },
            IterationFailure::LeftUpperHalfPlane { iteration, damping } => {
                SolveError::LeftUpperHalfPlane { iteration, damping }
            }
        }
    }
}

/// Converged solution at one spectral parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SceSolution<T> {
    pub z: C<T>,
    pub u: Vec<C<T>>,
    pub m: C<T>,
    pub g: Vec<C<T>>,
    pub residual: T,
    pub iterations: usize,
}

/// `r × r` stability matrix and its spectral radius.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCertificate<T> {
    /// Row-major `T_kl = (1/N) Σ_i γ_i^(k) γ_i^(l) |g_i|²`.
    pub matrix: Vec<T>,
    pub rank: usize,
    pub spectral_radius: T,
    pub distance_to_one: T,
}

/// Quadrature weights attached to the sample points of the factor vectors.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Weights<'a, T> {
    Uniform(T),
    Explicit(&'a [T]),
}

impl<T: Real> Weights<'_, T> {
    #[inline]
    fn at(&self, i: usize) -> T {
        match self {
            Weights::Uniform(w) => *w,
            Weights::Explicit(w) => w[i],
        }
    }
}

/// Evaluates the right-hand side of the low-rank system.
pub(crate) struct LowRankSystem<'a, T> {
    pub gammas: &'a [Vec<T>],
    pub weights: Weights<'a, T>,
    pub z: C<T>,
}

impl<T: Real> LowRankSystem<'_, T> {
    fn len(&self) -> usize {
        self.gammas[0].len()
    }

    #[inline]
    fn denominator(&self, i: usize, u: &[C<T>]) -> C<T> {
        let mut d = self.z;
        for (g, uk) in self.gammas.iter().zip(u) {
            d = d + *uk * g[i];
        }
        d
    }

    /// `out_k = Σ_i w_i γ_i^(k) g_i(u)`.
    pub fn apply(&self, u: &[C<T>], out: &mut [C<T>]) {
        let r = self.gammas.len();
        let mut acc = vec![CompensatedComplexSum::<T>::new(); r];
        for i in 0..self.len() {
            let g = -self.denominator(i, u).inv();
            let w = self.weights.at(i);
            for k in 0..r {
                acc[k].add(g * (w * self.gammas[k][i]));
            }
        }
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = a.value();
        }
    }

    pub fn g(&self, u: &[C<T>]) -> Vec<C<T>> {
        (0..self.len())
            .map(|i| -self.denominator(i, u).inv())
            .collect()
    }

    pub fn mean(&self, g: &[C<T>]) -> C<T> {
        let mut acc = CompensatedComplexSum::new();
        for (i, gi) in g.iter().enumerate() {
            acc.add(*gi * self.weights.at(i));
        }
        acc.value()
    }

    pub fn residual(&self, u: &[C<T>]) -> T {
        let mut fu = vec![C::<T>::zero(); u.len()];
        self.apply(u, &mut fu);
        u.iter()
            .zip(&fu)
            .map(|(a, b)| (*a - *b).norm())
            .fold(T::zero(), |acc, v| if v > acc { v } else { acc })
    }

    /// Solves `u - F(u) = shift`.
    pub fn solve(
        &self,
        init: Vec<C<T>>,
        shift: Option<&[C<T>]>,
        opts: &IterationOptions<T>,
    ) -> Result<SceSolution<T>, SolveError<T>> {
        if !(self.z.im > T::zero()) {
            return Err(SolveError::NotUpperHalfPlane(self.z));
        }
        if init.len() != self.gammas.len() {
            return Err(SolveError::Dimension(format!(
                "initial point has {} components for rank {}",
                init.len(),
                self.gammas.len()
            )));
        }
        let out = solve_fixed_point(
            |u, out| {
                self.apply(u, out);
                if let Some(s) = shift {
                    for (o, si) in out.iter_mut().zip(s) {
                        *o = *o + *si;
                    }
                }
            },
            init,
            opts,
        )?;
        let g = self.g(&out.x);
        let m = self.mean(&g);
        Ok(SceSolution {
            z: self.z,
            u: out.x,
            m,
            g,
            residual: out.residual,
            iterations: out.iterations,
        })
    }
}

fn system<T: Real>(profile: &LowRankProfile<T>, z: C<T>) -> LowRankSystem<'_, T> {
    LowRankSystem {
        gammas: profile.gammas(),
        weights: Weights::Uniform(T::one() / T::of_usize(profile.n())),
        z,
    }
}

/// Cold start `u^(k) = i · (1/N) Σ_i γ_i^(k)`, scaled by `scale`.
pub fn cold_start<T: Real>(profile: &LowRankProfile<T>, scale: T) -> Vec<C<T>> {
    (0..profile.rank())
        .map(|k| Complex::new(T::zero(), scale * profile.mean_gamma(k)))
        .collect()
}

/// Solves the system at `z` from the cold start.
pub fn solve_sce<T: Real>(
    profile: &LowRankProfile<T>,
    z: C<T>,
    opts: &SolverOptions<T>,
) -> Result<SceSolution<T>, SolveError<T>> {
    solve_sce_from(profile, z, cold_start(profile, T::one()), opts)
}

/// Solves the system at `z` from a given initial point in `(C⁺)^r`.
pub fn solve_sce_from<T: Real>(
    profile: &LowRankProfile<T>,
    z: C<T>,
    init: Vec<C<T>>,
    opts: &SolverOptions<T>,
) -> Result<SceSolution<T>, SolveError<T>> {
    system(profile, z).solve(init, None, opts)
}

/// Solves the perturbed system `u - F(u) = shift` (used by stability probes).
pub fn solve_sce_perturbed<T: Real>(
    profile: &LowRankProfile<T>,
    z: C<T>,
    shift: &[C<T>],
    init: Vec<C<T>>,
    opts: &SolverOptions<T>,
) -> Result<SceSolution<T>, SolveError<T>> {
    if shift.len() != profile.rank() {
        return Err(SolveError::Dimension(format!(
            "shift has {} components for rank {}",
            shift.len(),
            profile.rank()
        )));
    }
    system(profile, z).solve(init, Some(shift), opts)
}

/// Defect `max_k |u^(k) - F_k(u)|` of an arbitrary point.
pub fn sce_residual<T: Real>(profile: &LowRankProfile<T>, z: C<T>, u: &[C<T>]) -> T {
    system(profile, z).residual(u)
}

/// Solves along a grid, warm-starting each point from the previous solution.
/// The grid should be ordered by decreasing `Im z`.
pub fn solve_grid<T: Real>(
    profile: &LowRankProfile<T>,
    grid: &[C<T>],
    opts: &SolverOptions<T>,
) -> Result<Vec<SceSolution<T>>, SolveError<T>> {
    let mut out: Vec<SceSolution<T>> = Vec::with_capacity(grid.len());
    for (index, &z) in grid.iter().enumerate() {
        let init = match out.last() {
            Some(prev) => prev.u.clone(),
            None => cold_start(profile, T::one()),
        };
        let sol = solve_sce_from(profile, z, init, opts).map_err(|e| SolveError::GridPoint {
            index,
            z,
            source: Box::new(e),
        })?;
        out.push(sol);
    }
    Ok(out)
}

/// Builds `T` from a solution and computes its spectral radius.
pub fn stability_certificate<T: Real>(
    profile: &LowRankProfile<T>,
    solution: &SceSolution<T>,
) -> StabilityCertificate<T> {
    let r = profile.rank();
    let n = profile.n();
    let inv_n = T::one() / T::of_usize(n);
    let weights: Vec<T> = solution.g.iter().map(|g| g.norm_sqr()).collect();
    let mut matrix = vec![T::zero(); r * r];
    for k in 0..r {
        for l in k..r {
            let gk = profile.gamma(k);
            let gl = profile.gamma(l);
            let mut acc = crate::scalar::CompensatedSum::new();
            for i in 0..n {
                acc.add(gk[i] * gl[i] * weights[i]);
            }
            let v = acc.value() * inv_n;
            matrix[k * r + l] = v;
            matrix[l * r + k] = v;
        }
    }
    let spectral_radius = symmetric_spectral_radius(&matrix, r);
    StabilityCertificate {
        matrix,
        rank: r,
        spectral_radius,
        distance_to_one: T::one() - spectral_radius,
    }
}

pub(crate) fn symmetric_spectral_radius<T: Real>(matrix: &[T], r: usize) -> T {
    if r == 1 {
        return matrix[0].abs();
    }
    let m = Mat::<T>::from_fn(r, r, |i, j| matrix[i * r + j]);
    match m.self_adjoint_eigenvalues(Side::Lower) {
        Ok(ev) => ev.iter().fold(
            T::zero(),
            |acc, v| if v.abs() > acc { v.abs() } else { acc },
        ),
        Err(_) => T::nan(),
    }
}

/// Maximal runs of consecutive grid energies on which `Im m > c` at every
/// probed `η`. Solutions are grouped by `Re z`; an energy is in the bulk when
/// the minimum of `Im m` over its `η` levels exceeds `c_threshold`.
pub fn detect_bulk<T: Real>(solutions: &[SceSolution<T>], c_threshold: T) -> Vec<(T, T)> {
    let mut by_energy: Vec<(T, T)> = Vec::new();
    for s in solutions {
        let e = s.z.re;
        match by_energy.iter_mut().find(|(x, _)| *x == e) {
            Some(entry) => {
                if s.m.im < entry.1 {
                    entry.1 = s.m.im;
                }
            }
            None => by_energy.push((e, s.m.im)),
        }
    }
    by_energy.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = Vec::new();
    let mut current: Option<(T, T)> = None;
    for (e, min_im) in by_energy {
        if min_im > c_threshold {
            current = Some(match current {
                Some((a, _)) => (a, e),
                None => (e, e),
            });
        } else if let Some(iv) = current.take() {
            out.push(iv);
        }
    }
    if let Some(iv) = current {
        out.push(iv);
    }
    out
}

/// `η` levels from 1 down to `eta_probe`, geometric, inclusive.
pub fn probe_levels<T: Real>(eta_probe: T, levels: usize) -> Vec<T> {
    let levels = levels.max(2);
    let lo = eta_probe.ln();
    (0..levels)
        .map(|k| {
            let t = T::of_usize(k) / T::of_usize(levels - 1);
            (lo * t).exp()
        })
        .collect()
}

/// Solves on `energies × probe_levels(eta_probe)` with continuation in `η`
/// and returns the detected bulk intervals with the solutions.
pub fn scan_bulk<T: Real>(
    profile: &LowRankProfile<T>,
    energies: &[T],
    eta_probe: T,
    c_threshold: T,
    opts: &SolverOptions<T>,
) -> Result<(Vec<(T, T)>, Vec<SceSolution<T>>), SolveError<T>> {
    let etas = probe_levels(eta_probe, 8);
    let mut all = Vec::with_capacity(energies.len() * etas.len());
    for &e in energies {
        let grid: Vec<C<T>> = etas.iter().map(|&eta| Complex::new(e, eta)).collect();
        all.extend(solve_grid(profile, &grid, opts)?);
    }
    Ok((detect_bulk(&all, c_threshold), all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::power_law_profile;
    use crate::scalar::semicircle_stieltjes;

    fn constant(n: usize, r: usize, c: f64) -> LowRankProfile<f64> {
        LowRankProfile::new(vec![vec![c; n]; r]).unwrap()
    }

    fn power_law_rank2(n: usize) -> LowRankProfile<f64> {
        LowRankProfile::new(vec![power_law_profile(n, 0.25).unwrap(), vec![1.0; n]]).unwrap()
    }

    #[test]
    fn semicircle_at_2i() {
        let p = constant(10, 1, 1.0);
        let sol = solve_sce(&p, Complex::new(0.0, 2.0), &SolverOptions::default()).unwrap();
        let expected = Complex::new(0.0, 2f64.sqrt() - 1.0);
        assert!((sol.m - expected).norm() < 1e-12);
        assert!((sol.u[0] - expected).norm() < 1e-12);
        assert!(sol.residual <= 1e-12);
    }

    #[test]
    fn constant_two_dilates() {
        let p = constant(10, 1, 2.0);
        let sol = solve_sce(&p, Complex::new(0.0, 2.0), &SolverOptions::default()).unwrap();
        assert!((sol.m - Complex::new(0.0, 0.309_016_994_374_947_4)).norm() < 1e-12);
        assert!((sol.u[0] - Complex::new(0.0, 0.618_033_988_749_894_9)).norm() < 1e-12);
    }

    #[test]
    fn rank_r_constant_reduces_to_semicircle_of_variance_r() {
        for r in 1..=3 {
            let p = constant(7, r, 1.0);
            for &z in &[
                Complex::new(0.4, 0.5),
                Complex::new(-1.0, 0.05),
                Complex::new(2.5, 1e-3),
            ] {
                let sol = solve_sce(&p, z, &SolverOptions::default()).unwrap();
                for k in 1..r {
                    assert!((sol.u[k] - sol.u[0]).norm() < 1e-11);
                }
                let w: C<f64> = sol.u.iter().sum();
                assert!((w + (r as f64) / (z + w)).norm() < 1e-10);
                let exact = semicircle_stieltjes(z, r as f64) * (r as f64);
                assert!((w - exact).norm() < 1e-10, "r={r} z={z}");
            }
        }
    }

    #[test]
    fn grid_matches_closed_form() {
        let p = constant(5, 1, 1.0);
        let grid: Vec<_> = [10.0, 5.0, 2.0]
            .iter()
            .map(|&e| Complex::new(0.0, e))
            .collect();
        let sols = solve_grid(&p, &grid, &SolverOptions::default()).unwrap();
        for (s, eta) in sols.iter().zip([10.0f64, 5.0, 2.0]) {
            let exact = ((eta * eta + 4.0).sqrt() - eta) / 2.0;
            assert!((s.m - Complex::new(0.0, exact)).norm() < 1e-12);
        }
        let single = solve_grid(&p, &grid[..1], &SolverOptions::default()).unwrap();
        let direct = solve_sce(&p, grid[0], &SolverOptions::default()).unwrap();
        assert_eq!(single[0], direct);
    }

    #[test]
    fn grid_reports_failing_index() {
        let p = constant(5, 1, 1.0);
        let grid = vec![Complex::new(0.0, 1.0), Complex::new(0.0, -1.0)];
        match solve_grid(&p, &grid, &SolverOptions::default()) {
            Err(SolveError::GridPoint { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn power_law_descending_grid() {
        let p = LowRankProfile::new(vec![power_law_profile(1000, 0.25).unwrap()]).unwrap();
        let grid: Vec<_> = (0..50)
            .map(|k| {
                let t = k as f64 / 49.0;
                Complex::new(2.0, 10f64.powf(1.0 - 4.0 * t))
            })
            .collect();
        let opts = SolverOptions::default();
        let sols = solve_grid(&p, &grid, &opts).unwrap();
        for s in &sols {
            assert!(s.residual <= opts.tol);
            assert!(sce_residual(&p, s.z, &s.u) <= 10.0 * opts.tol);
        }
    }

    #[test]
    fn certificate_scalar_semicircle() {
        let p = constant(10, 1, 1.0);
        let sol = solve_sce(&p, Complex::new(0.0, 2.0), &SolverOptions::default()).unwrap();
        let cert = stability_certificate(&p, &sol);
        let expected = (2f64.sqrt() - 1.0).powi(2);
        assert!((cert.matrix[0] - expected).abs() < 1e-12);
        assert!((cert.spectral_radius - 0.171_572_875_253_809_9).abs() < 1e-12);
    }

    #[test]
    fn herglotz_and_certificate_on_power_law() {
        let p = power_law_rank2(500);
        let opts = SolverOptions::default();
        for &e in &[-3.0, -1.0, 0.0, 0.5, 2.0, 4.0] {
            for &eta in &[5.0, 0.5, 0.05, 0.005] {
                let z = Complex::new(e, eta);
                let s = solve_sce(&p, z, &opts).unwrap();
                assert!(s.m.im > 0.0 && s.u.iter().all(|u| u.im > 0.0));
                assert!(s.m.norm() <= 1.0 / eta);
                for k in 0..2 {
                    assert!(s.u[k].norm() <= p.mean_gamma(k) / eta * (1.0 + 1e-12));
                }
                let cert = stability_certificate(&p, &s);
                assert!(cert.spectral_radius <= 1.0 + 1e-8);
                for v in &cert.matrix {
                    assert!(*v >= 0.0);
                }
            }
        }
    }

    #[test]
    fn uniqueness_from_two_starts() {
        let p = power_law_rank2(400);
        let opts = SolverOptions::default();
        let z = Complex::new(0.5, 0.01);
        let a = solve_sce_from(&p, z, cold_start(&p, 1.0), &opts).unwrap();
        let b = solve_sce_from(&p, z, cold_start(&p, 2.0), &opts).unwrap();
        for k in 0..2 {
            assert!((a.u[k] - b.u[k]).norm() <= 10.0 * opts.tol);
        }
    }

    #[test]
    fn scaling_covariance_rank_one() {
        // m_c(z) = (1/c) m_1(z/c) for γ ≡ c; γ·c in general is u -> u/c at z/c dilation.
        let base = LowRankProfile::new(vec![power_law_profile(300, 0.3).unwrap()]).unwrap();
        let c = 1.7;
        let scaled =
            LowRankProfile::new(vec![base.gamma(0).iter().map(|g| g * c).collect()]).unwrap();
        let opts = SolverOptions::default();
        let z = Complex::new(0.8, 0.2);
        let s = solve_sce(&scaled, z, &opts).unwrap();
        let b = solve_sce(&base, z / c, &opts).unwrap();
        assert!((s.m - b.m / c).norm() < 1e-10);
        assert!((s.u[0] - b.u[0]).norm() < 1e-10);
    }

    #[test]
    fn perturbation_response_is_linear() {
        let p = power_law_rank2(400);
        let opts = SolverOptions::default();
        let z = Complex::new(0.2, 0.05);
        let base = solve_sce(&p, z, &opts).unwrap();
        let dir = [Complex::new(0.6, -0.8), Complex::new(-0.3, 0.4)];
        let mut ratios = Vec::new();
        for eps in [1e-4, 1e-5, 1e-6] {
            let shift: Vec<_> = dir.iter().map(|d| *d * eps).collect();
            let s = solve_sce_perturbed(&p, z, &shift, base.u.clone(), &opts).unwrap();
            let move_ = (0..2)
                .map(|k| (s.u[k] - base.u[k]).norm())
                .fold(0.0, f64::max);
            let size = shift.iter().map(|v| v.norm()).fold(0.0, f64::max);
            ratios.push(move_ / size);
        }
        assert!(ratios.iter().all(|r| r.is_finite() && *r > 0.0));
        let (lo, hi) = ratios
            .iter()
            .fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(hi / lo < 1.05, "{ratios:?}");
    }

    #[test]
    fn bulk_detection_semicircle() {
        let p = constant(4, 1, 1.0);
        let energies: Vec<f64> = (0..=600).map(|k| -3.0 + 0.01 * k as f64).collect();
        let (bulk, _) = scan_bulk(&p, &energies, 1e-4, 0.1, &SolverOptions::default()).unwrap();
        assert_eq!(bulk.len(), 1);
        let edge = (4.0f64 - 0.04).sqrt();
        assert!((bulk[0].0 + edge).abs() <= 0.011, "{bulk:?}");
        assert!((bulk[0].1 - edge).abs() <= 0.011, "{bulk:?}");
        let (none, _) = scan_bulk(&p, &energies, 1e-4, 1.01, &SolverOptions::default()).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn bulk_detection_power_law() {
        let p = LowRankProfile::new(vec![power_law_profile(1000, 0.25).unwrap()]).unwrap();
        let energies: Vec<f64> = (0..=40).map(|k| -2.0 + 0.1 * k as f64).collect();
        let (bulk, _) = scan_bulk(&p, &energies, 1e-3, 0.05, &SolverOptions::default()).unwrap();
        assert!(bulk.iter().any(|(a, b)| *a <= 0.0 && *b >= 0.0), "{bulk:?}");
    }

    #[test]
    fn f32_solver() {
        let p = LowRankProfile::new(vec![vec![1.0f32; 10]]).unwrap();
        let opts = SolverOptions::<f32> {
            tol: 1e-6,
            ..Default::default()
        };
        let sol = solve_sce(&p, Complex::new(0.0f32, 2.0), &opts).unwrap();
        assert!((sol.m.im - (2f32.sqrt() - 1.0)).abs() < 1e-5);
    }
}
