//! Kernel form of the self-consistent equation on a dyadic grid,
//! `g_a = -1 / (z + (1/n) Σ_b s_ab g_b)`, and the limiting integral system
//! for factor functions sampled on quadrature nodes.
//!
//! The dense kernel path does not exploit low rank, so it serves as an
//! independent check on [`crate::sce`].

use num_complex::Complex;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{LowRankProfile, DEFAULT_FLATNESS_BOUND};
use crate::fixed_point::{solve_fixed_point, IterationOptions};
use crate::scalar::{Real, C};
use crate::sce::{LowRankSystem, SolveError, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum KernelKind {
    LowRank,
    Flat { lower: f64, upper: f64 },
    Explicit,
}

#[derive(Debug, Clone, Error)]
pub enum QveError<T: Real> {
    #[error("grid size {0} is not a power of two")]
    NotDyadic(usize),
    #[error("kernel has {got} values, expected {expected}")]
    Size { got: usize, expected: usize },
    #[error("kernel is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("kernel value at ({a}, {b}) is {value}, outside [{lower}, {upper}]")]
    OutOfBounds {
        a: usize,
        b: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("profile length {len} is not a multiple of the grid size {n}")]
    Incommensurate { len: usize, n: usize },
    #[error("f_{k} = {value} < 1 at node {node}")]
    DomainViolation { k: usize, node: usize, value: f64 },
    #[error("quadrature estimate of the integral of f_{k}^2 is {value}, above the bound {bound}")]
    FlatnessViolation { k: usize, value: f64, bound: f64 },
    #[error("invalid quadrature: {0}")]
    Quadrature(String),
    #[error(transparent)]
    Solve(#[from] SolveError<T>),
}

/// Cell values of a nonnegative symmetric kernel on `n = 2^k` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrid<T> {
    n: usize,
    values: Vec<T>,
    kind: KernelKind,
}

impl<T: Real> KernelGrid<T> {
    /// Validates size, symmetry, nonnegativity and (for flat kernels) bounds.
    pub fn from_values(n: usize, values: Vec<T>, kind: KernelKind) -> Result<Self, QveError<T>> {
        if n == 0 || !n.is_power_of_two() {
            return Err(QveError::NotDyadic(n));
        }
        if values.len() != n * n {
            return Err(QveError::Size {
                got: values.len(),
                expected: n * n,
            });
        }
        let (lower, upper) = match kind {
            KernelKind::Flat { lower, upper } => (lower, upper),
            _ => (0.0, f64::INFINITY),
        };
        let tol = T::epsilon() * T::of(16.0);
        for a in 0..n {
            for b in 0..n {
                let v = values[a * n + b];
                let w = values[b * n + a];
                if (v - w).abs() > tol * (v.abs() + w.abs()) {
                    return Err(QveError::Asymmetric(a, b));
                }
                let vf = v.to_f64_lossy();
                if !(vf >= lower && vf <= upper) {
                    return Err(QveError::OutOfBounds {
                        a,
                        b,
                        value: vf,
                        lower,
                        upper,
                    });
                }
            }
        }
        Ok(Self { n, values, kind })
    }

    /// `s ≡ value`.
    pub fn constant(n: usize, value: T) -> Result<Self, QveError<T>> {
        let v = value.to_f64_lossy();
        Self::from_values(
            n,
            vec![value; n * n],
            KernelKind::Flat { lower: v, upper: v },
        )
    }

    /// Midpoint samples of `f(x, y)` on `[0,1]²`.
    pub fn from_fn(n: usize, f: impl Fn(T, T) -> T) -> Result<Self, QveError<T>> {
        Self::from_values(n, midpoint_samples(n, &f), KernelKind::Explicit)
    }

    /// Midpoint samples of `f`, required to lie in `[lower, upper]`.
    pub fn flat(n: usize, lower: T, upper: T, f: impl Fn(T, T) -> T) -> Result<Self, QveError<T>> {
        Self::from_values(
            n,
            midpoint_samples(n, &f),
            KernelKind::Flat {
                lower: lower.to_f64_lossy(),
                upper: upper.to_f64_lossy(),
            },
        )
    }

    /// Cell averages of `s(x, y) = Σ_k f_k(x) f_k(y)` where `f_k` is the step
    /// function of `γ^(k)`. With `n = N` this is `N s_ij` exactly.
    pub fn from_low_rank(profile: &LowRankProfile<T>, n: usize) -> Result<Self, QveError<T>> {
        let len = profile.n();
        if n == 0 || len % n != 0 {
            return Err(QveError::Incommensurate { len, n });
        }
        let block = len / n;
        let averages: Vec<Vec<T>> = profile
            .gammas()
            .iter()
            .map(|g| {
                g.chunks(block)
                    .map(|c| c.iter().copied().sum::<T>() / T::of_usize(block))
                    .collect()
            })
            .collect();
        let mut values = vec![T::zero(); n * n];
        for a in 0..n {
            for b in a..n {
                let v: T = averages.iter().map(|f| f[a] * f[b]).sum();
                values[a * n + b] = v;
                values[b * n + a] = v;
            }
        }
        Self::from_values(n, values, KernelKind::LowRank)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> T {
        self.values[a * self.n + b]
    }

    pub fn min_value(&self) -> T {
        self.values
            .iter()
            .copied()
            .fold(T::infinity(), |acc, v| if v < acc { v } else { acc })
    }

    /// Same grid, every value mapped through `f` (validity re-checked).
    pub fn map(
        &self,
        kind: KernelKind,
        f: impl Fn(usize, usize, T) -> T,
    ) -> Result<Self, QveError<T>> {
        let n = self.n;
        let values = (0..n * n)
            .map(|idx| f(idx / n, idx % n, self.values[idx]))
            .collect();
        Self::from_values(n, values, kind)
    }

    /// `(Sg)_a = (1/n) Σ_b s_ab g_b`.
    pub fn apply(&self, g: &[C<T>], out: &mut [C<T>]) {
        let n = self.n;
        let inv_n = T::one() / T::of_usize(n);
        for (a, o) in out.iter_mut().enumerate() {
            let row = &self.values[a * n..(a + 1) * n];
            let mut re = T::zero();
            let mut im = T::zero();
            for (s, v) in row.iter().zip(g) {
                re = re + *s * v.re;
                im = im + *s * v.im;
            }
            *o = Complex::new(re * inv_n, im * inv_n);
        }
    }
}

/// `‖S - Ŝ‖`: Frobenius norm of the cell differences scaled by `1/n`.
pub fn kernel_distance<T: Real>(a: &KernelGrid<T>, b: &KernelGrid<T>) -> T {
    assert_eq!(a.n, b.n, "kernels on different grids");
    let sum: T = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .sum();
    sum.sqrt() / T::of_usize(a.n)
}

fn midpoint_samples<T: Real>(n: usize, f: &impl Fn(T, T) -> T) -> Vec<T> {
    let h = T::one() / T::of_usize(n);
    let half = T::of(0.5);
    let mut out = Vec::with_capacity(n * n);
    for a in 0..n {
        let x = (T::of_usize(a) + half) * h;
        for b in 0..n {
            let y = (T::of_usize(b) + half) * h;
            out.push(f(x, y));
        }
    }
    out
}

/// Discretized solution of the kernel equation.
#[derive(Debug, Clone, PartialEq)]
pub struct QveSolution<T> {
    pub z: C<T>,
    pub g: Vec<C<T>>,
    /// Mean of `g` over the cells.
    pub m0: C<T>,
    pub residual: T,
    pub iterations: usize,
}

/// `max_a |g_a + 1/(z + (Sg)_a)|`.
pub fn qve_residual<T: Real>(kernel: &KernelGrid<T>, z: C<T>, g: &[C<T>]) -> T {
    let mut sg = vec![C::<T>::zero(); kernel.n];
    kernel.apply(g, &mut sg);
    g.iter()
        .zip(&sg)
        .map(|(ga, sa)| (*ga + (z + *sa).inv()).norm())
        .fold(T::zero(), |acc, v| if v > acc { v } else { acc })
}

pub fn solve_qve<T: Real>(
    kernel: &KernelGrid<T>,
    z: C<T>,
    opts: &IterationOptions<T>,
) -> Result<QveSolution<T>, SolveError<T>> {
    let init = vec![Complex::new(T::zero(), T::one()); kernel.n];
    solve_qve_from(kernel, z, init, opts)
}

pub fn solve_qve_from<T: Real>(
    kernel: &KernelGrid<T>,
    z: C<T>,
    init: Vec<C<T>>,
    opts: &IterationOptions<T>,
) -> Result<QveSolution<T>, SolveError<T>> {
    solve_qve_impl(kernel, z, init, None, opts)
}

/// Solves `g = -1/(z + Sg) + shift`, i.e. the equation with right-hand side defect `shift`.
pub fn solve_qve_perturbed<T: Real>(
    kernel: &KernelGrid<T>,
    z: C<T>,
    shift: &[C<T>],
    init: Vec<C<T>>,
    opts: &IterationOptions<T>,
) -> Result<QveSolution<T>, SolveError<T>> {
    solve_qve_impl(kernel, z, init, Some(shift), opts)
}

fn solve_qve_impl<T: Real>(
    kernel: &KernelGrid<T>,
    z: C<T>,
    init: Vec<C<T>>,
    shift: Option<&[C<T>]>,
    opts: &IterationOptions<T>,
) -> Result<QveSolution<T>, SolveError<T>> {
    if !(z.im > T::zero()) {
        return Err(SolveError::NotUpperHalfPlane(z));
    }
    if init.len() != kernel.n || shift.is_some_and(|s| s.len() != kernel.n) {
        return Err(SolveError::Dimension(format!(
            "vectors must have {} components",
            kernel.n
        )));
    }
    let mut sg = vec![C::<T>::zero(); kernel.n];
    let out = solve_fixed_point(
        |g, out| {
            kernel.apply(g, &mut sg);
            for (a, o) in out.iter_mut().enumerate() {
                *o = -(z + sg[a]).inv();
                if let Some(s) = shift {
                    *o = *o + s[a];
                }
            }
        },
        init,
        opts,
    )?;
    let m0 = out.x.iter().copied().sum::<C<T>>() / T::of_usize(kernel.n);
    Ok(QveSolution {
        z,
        g: out.x,
        m0,
        residual: out.residual,
        iterations: out.iterations,
    })
}

/// Quadrature nodes and weights on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> Quadrature<T> {
    /// Cell midpoints `(a - 1/2)/n`.
    pub fn midpoint(n: usize) -> Self {
        let h = T::one() / T::of_usize(n);
        Self {
            nodes: (0..n).map(|a| (T::of_usize(a) + T::of(0.5)) * h).collect(),
            weights: vec![h; n],
        }
    }

    /// Right cell endpoints `a/n`; with `f(x) = x^-μ` this reproduces the
    /// power-law profile `γ_i = (i/N)^-μ` exactly.
    pub fn right_endpoint(n: usize) -> Self {
        let h = T::one() / T::of_usize(n);
        Self {
            nodes: (1..=n).map(|a| T::of_usize(a) * h).collect(),
            weights: vec![h; n],
        }
    }

    pub fn sample(&self, f: impl Fn(T) -> T) -> Vec<T> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }
}

/// Solution `(u_1..u_r, m0)` of the limiting integral system.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitSolution<T> {
    pub z: C<T>,
    pub u: Vec<C<T>>,
    pub m0: C<T>,
    pub residual: T,
    pub iterations: usize,
}

/// Solves
/// `u_k = -∫ f_k / (z + Σ_j f_j u_j)`, `m0 = -∫ 1 / (z + Σ_j f_j u_j)`
/// with `f_k` given at the quadrature nodes.
pub fn solve_limit_sce<T: Real>(
    f: &[Vec<T>],
    quadrature: &Quadrature<T>,
    z: C<T>,
    opts: &IterationOptions<T>,
    flatness_bound: Option<T>,
) -> Result<LimitSolution<T>, QveError<T>> {
    let bound = flatness_bound.unwrap_or_else(|| T::of(DEFAULT_FLATNESS_BOUND));
    let n = quadrature.nodes.len();
    if f.is_empty() || quadrature.weights.len() != n || f.iter().any(|fk| fk.len() != n) {
        return Err(QveError::Quadrature(
            "factor samples must match the quadrature nodes".into(),
        ));
    }
    for (k, fk) in f.iter().enumerate() {
        if let Some((node, &v)) = fk.iter().enumerate().find(|(_, &v)| !(v >= T::one())) {
            return Err(QveError::DomainViolation {
                k,
                node,
                value: v.to_f64_lossy(),
            });
        }
        let integral: T = fk
            .iter()
            .zip(&quadrature.weights)
            .map(|(v, w)| *v * *v * *w)
            .sum();
        if integral > bound {
            return Err(QveError::FlatnessViolation {
                k,
                value: integral.to_f64_lossy(),
                bound: bound.to_f64_lossy(),
            });
        }
    }
    let sys = LowRankSystem {
        gammas: f,
        weights: Weights::Explicit(&quadrature.weights),
        z,
    };
    let init: Vec<C<T>> = f
        .iter()
        .map(|fk| {
            let mean: T = fk
                .iter()
                .zip(&quadrature.weights)
                .map(|(v, w)| *v * *w)
                .sum();
            Complex::new(T::zero(), mean)
        })
        .collect();
    let sol = sys.solve(init, None, opts)?;
    Ok(LimitSolution {
        z,
        u: sol.u,
        m0: sol.m,
        residual: sol.residual,
        iterations: sol.iterations,
    })
}

/// Result of comparing solutions for two nearby kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelStability<T> {
    /// `‖ĝ - g‖ / ‖S - Ŝ‖` per grid point (0 when the kernels coincide).
    pub ratios: Vec<T>,
    pub max_ratio: T,
    pub kernel_distance: T,
    /// False when either kernel has a zero cell, where the stability
    /// statement is not backed by a lower bound on `s`.
    pub supported_by_theory: bool,
}

/// `L²([0,1])` norm of a cell vector.
pub fn cell_l2_norm<T: Real>(g: &[C<T>]) -> T {
    (g.iter().map(|v| v.norm_sqr()).sum::<T>() / T::of_usize(g.len())).sqrt()
}

/// Measures the Lipschitz ratio of the solution map in the kernel over a grid.
pub fn kernel_stability_probe<T: Real>(
    kernel: &KernelGrid<T>,
    perturbed: &KernelGrid<T>,
    grid: &[C<T>],
    opts: &IterationOptions<T>,
) -> Result<KernelStability<T>, SolveError<T>> {
    if kernel.n != perturbed.n {
        return Err(SolveError::Dimension(format!(
            "kernels on {} and {} cells",
            kernel.n, perturbed.n
        )));
    }
    let supported = kernel.min_value() > T::zero() && perturbed.min_value() > T::zero();
    if !supported {
        log::warn!("kernel has zero cells; stability ratio is not covered by a lower bound on s");
    }
    let dist = kernel_distance(kernel, perturbed);
    let mut ratios = Vec::with_capacity(grid.len());
    for &z in grid {
        let a = solve_qve(kernel, z, opts)?;
        let b = solve_qve_from(perturbed, z, a.g.clone(), opts)?;
        let diff: Vec<C<T>> = a.g.iter().zip(&b.g).map(|(x, y)| *x - *y).collect();
        let num = cell_l2_norm(&diff);
        ratios.push(if dist.is_zero() {
            T::zero()
        } else {
            num / dist
        });
    }
    let max_ratio = ratios
        .iter()
        .copied()
        .fold(T::zero(), |a, v| if v > a { v } else { a });
    Ok(KernelStability {
        ratios,
        max_ratio,
        kernel_distance: dist,
        supported_by_theory: supported,
    })
}

/// `‖ĝ - g‖ / ‖shift‖` for `shift = ε · direction`, one entry per `ε`.
pub fn rhs_stability_probe<T: Real>(
    kernel: &KernelGrid<T>,
    z: C<T>,
    direction: &[C<T>],
    eps: &[T],
    opts: &IterationOptions<T>,
) -> Result<Vec<T>, SolveError<T>> {
    let base = solve_qve(kernel, z, opts)?;
    let mut out = Vec::with_capacity(eps.len());
    for &e in eps {
        let shift: Vec<C<T>> = direction.iter().map(|d| *d * e).collect();
        let p = solve_qve_perturbed(kernel, z, &shift, base.g.clone(), opts)?;
        let diff: Vec<C<T>> = p.g.iter().zip(&base.g).map(|(x, y)| *x - *y).collect();
        out.push(cell_l2_norm(&diff) / cell_l2_norm(&shift));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::power_law_profile;
    use crate::sce::{solve_sce, SolverOptions};

    fn opts() -> IterationOptions<f64> {
        IterationOptions::default()
    }

    #[test]
    fn flat_unit_kernel_is_semicircle() {
        let k = KernelGrid::constant(8, 1.0f64).unwrap();
        let s = solve_qve(&k, Complex::new(0.0, 2.0), &opts()).unwrap();
        let expected = Complex::new(0.0, 2f64.sqrt() - 1.0);
        for g in &s.g {
            assert!((g - expected).norm() < 1e-12);
        }
        assert!((s.m0 - expected).norm() < 1e-12);
        let two = KernelGrid::from_values(2, vec![1.0; 4], KernelKind::Explicit).unwrap();
        let t = solve_qve(&two, Complex::new(0.0, 2.0), &opts()).unwrap();
        assert!((t.m0 - expected).norm() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(matches!(
            KernelGrid::from_values(3, vec![1.0f64; 9], KernelKind::Explicit),
            Err(QveError::NotDyadic(3))
        ));
        assert!(matches!(
            KernelGrid::from_values(2, vec![1.0f64, 2.0, 1.0, 1.0], KernelKind::Explicit),
            Err(QveError::Asymmetric(0, 1))
        ));
        assert!(matches!(
            KernelGrid::from_values(2, vec![1.0f64, -1.0, -1.0, 1.0], KernelKind::Explicit),
            Err(QveError::OutOfBounds { .. })
        ));
        assert!(matches!(
            KernelGrid::flat(4, 1.0f64, 1.5, |x, y| 1.0 + x * y),
            Err(QveError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn low_rank_kernel_matches_sce() {
        let n = 256;
        let profile = LowRankProfile::new(vec![power_law_profile(n, 0.25).unwrap()]).unwrap();
        let kernel = KernelGrid::from_low_rank(&profile, n).unwrap();
        for &z in &[
            Complex::new(0.5, 0.01),
            Complex::new(-1.0, 0.1),
            Complex::new(0.0, 1.0),
        ] {
            let a = solve_qve(&kernel, z, &opts()).unwrap();
            let b = solve_sce(&profile, z, &SolverOptions::default()).unwrap();
            assert!((a.m0 - b.m).norm() < 1e-9, "z = {z}: {} vs {}", a.m0, b.m);
            for (ga, gb) in a.g.iter().zip(&b.g) {
                assert!((ga - gb).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn herglotz() {
        let k = KernelGrid::flat(64, 0.5f64, 2.0, |x, y| 0.5 + (x + y) * 0.75).unwrap();
        for &z in &[
            Complex::new(0.3, 0.01),
            Complex::new(2.0, 0.5),
            Complex::new(-4.0, 3.0),
        ] {
            let s = solve_qve(&k, z, &opts()).unwrap();
            for g in &s.g {
                assert!(g.im > 0.0);
                assert!(g.norm() <= 1.0 / z.im);
            }
            assert!(qve_residual(&k, z, &s.g) <= 1e-12);
        }
    }

    #[test]
    fn discretization_differences_shrink() {
        let z = Complex::new(0.5, 0.1);
        let m: Vec<C<f64>> = [128usize, 256, 512, 1024]
            .iter()
            .map(|&n| {
                let k = KernelGrid::flat(n, 1.0, 2.0, |x, y| 1.0 + x * y).unwrap();
                solve_qve(&k, z, &opts()).unwrap().m0
            })
            .collect();
        let diffs: Vec<f64> = m.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        assert!(diffs.windows(2).all(|d| d[1] < d[0]), "{diffs:?}");
        // at least first order
        assert!(diffs[2] < diffs[0] / 3.0, "{diffs:?}");
    }

    #[test]
    fn limit_system_semicircle() {
        let q = Quadrature::<f64>::midpoint(16);
        let f = vec![q.sample(|_| 1.0)];
        let s = solve_limit_sce(&f, &q, Complex::new(0.0, 2.0), &opts(), None).unwrap();
        let expected = Complex::new(0.0, 2f64.sqrt() - 1.0);
        assert!((s.u[0] - expected).norm() < 1e-12);
        assert!((s.m0 - expected).norm() < 1e-12);
    }

    #[test]
    fn limit_system_matches_power_law_profile() {
        let n = 2048;
        let z = Complex::new(0.5, 0.01);
        let profile = LowRankProfile::new(vec![power_law_profile(n, 0.25).unwrap()]).unwrap();
        let sce = solve_sce(&profile, z, &SolverOptions::default()).unwrap();
        let right = Quadrature::<f64>::right_endpoint(n);
        let f = vec![right.sample(|x| x.powf(-0.25))];
        let lim = solve_limit_sce(&f, &right, z, &opts(), None).unwrap();
        assert!((lim.m0 - sce.m).norm() < 1e-6);
        assert!((lim.u[0] - sce.u[0]).norm() < 1e-6);
        // the midpoint rule is a different discretization of the same integral
        let mid = Quadrature::<f64>::midpoint(n);
        let f = vec![mid.sample(|x| x.powf(-0.25))];
        let lim_mid = solve_limit_sce(&f, &mid, z, &opts(), None).unwrap();
        assert!((lim_mid.m0 - sce.m).norm() < 1e-2);
        // uniqueness: second start converges to the same point
        let sys_again = solve_limit_sce(&f, &mid, z, &opts(), None).unwrap();
        assert_eq!(sys_again.u, lim_mid.u);
    }

    #[test]
    fn limit_system_domain_checks() {
        let q = Quadrature::<f64>::midpoint(64);
        let f = vec![q.sample(|x| 0.5 + x)];
        assert!(matches!(
            solve_limit_sce(&f, &q, Complex::new(0.0, 1.0), &opts(), None),
            Err(QveError::DomainViolation { k: 0, node: 0, .. })
        ));
        // x^-0.6 is >= 1 but not square integrable: the quadrature estimate grows with n
        let estimate = |n: usize| {
            let q = Quadrature::<f64>::midpoint(n);
            q.sample(|x| x.powf(-1.2)).iter().sum::<f64>() / n as f64
        };
        assert!(estimate(4096) > estimate(256) * 1.5);
        let q = Quadrature::<f64>::midpoint(2048);
        let f = vec![q.sample(|x| x.powf(-0.6))];
        assert!(matches!(
            solve_limit_sce(&f, &q, Complex::new(0.0, 1.0), &opts(), Some(10.0)),
            Err(QveError::FlatnessViolation { .. })
        ));
    }

    #[test]
    fn identical_kernels_have_zero_ratio() {
        let k = KernelGrid::constant(16, 1.0f64).unwrap();
        let probe = kernel_stability_probe(&k, &k, &[Complex::new(0.0, 0.5)], &opts()).unwrap();
        assert_eq!(probe.max_ratio, 0.0);
        assert!(probe.supported_by_theory);
    }

    #[test]
    fn flat_kernel_perturbation_ratio_is_stable() {
        let n = 32;
        let k = KernelGrid::constant(n, 1.0f64).unwrap();
        let grid = [Complex::new(0.0, 0.05), Complex::new(1.0, 0.05)];
        let ratios: Vec<f64> = [1e-4, 1e-5, 1e-6]
            .iter()
            .map(|&eps| {
                let kp = KernelGrid::constant(n, 1.0 + eps).unwrap();
                kernel_stability_probe(&k, &kp, &grid, &opts())
                    .unwrap()
                    .max_ratio
            })
            .collect();
        assert!(ratios.iter().all(|r| r.is_finite() && *r > 0.0));
        let (lo, hi) = ratios
            .iter()
            .fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(hi / lo < 1.1, "{ratios:?}");
    }

    #[test]
    fn rank_perturbation_ratio_within_factor_two() {
        let n = 32;
        let k = KernelGrid::constant(n, 1.0f64).unwrap();
        let grid = [Complex::new(0.5, 0.05)];
        let ratios: Vec<f64> = [1e-3, 1e-4, 1e-5]
            .iter()
            .map(|&eps| {
                let kp = k
                    .map(KernelKind::Explicit, |a, b, v| {
                        let fa = 1.0 + (a as f64 / n as f64);
                        let fb = 1.0 + (b as f64 / n as f64);
                        v + eps * fa * fb
                    })
                    .unwrap();
                kernel_stability_probe(&k, &kp, &grid, &opts())
                    .unwrap()
                    .max_ratio
            })
            .collect();
        let (lo, hi) = ratios
            .iter()
            .fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(hi / lo < 2.0, "{ratios:?}");
    }

    #[test]
    fn rhs_perturbation_bounded_in_bulk() {
        let k = KernelGrid::flat(64, 1.0f64, 2.0, |x, y| 1.0 + x * y).unwrap();
        let dir: Vec<C<f64>> = (0..64)
            .map(|a| Complex::new((a as f64).sin(), 0.5))
            .collect();
        let ratios = rhs_stability_probe(
            &k,
            Complex::new(0.2, 0.01),
            &dir,
            &[1e-4, 1e-5, 1e-6],
            &opts(),
        )
        .unwrap();
        let (lo, hi) = ratios
            .iter()
            .fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(hi.is_finite() && hi / lo < 1.1, "{ratios:?}");
    }
}
