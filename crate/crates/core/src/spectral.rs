//! Dense eigendecomposition of sampled matrices and the empirical statistics
//! built on it: Stieltjes transform, resolvent entries, local-law records,
//! eigenvector delocalization and dyadic eigenvalue counts.
//!
//! Resolvent entries come from the eigen-expansion
//! `G_ij(z) = Σ_α u_α^i u_α^j / (λ_α - z)`, so one decomposition serves any
//! number of spectral parameters. Eigenvectors are stored vertex-major: the
//! components `(u_1^i, ..., u_N^i)` of vertex `i` are contiguous.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};
use num_complex::Complex;
use num_traits::Zero;
use rand::Rng;
use thiserror::Error;

use crate::ensemble::{EnsembleSpec, SampledMatrix, DENSE_DIMENSION_CAP};
use crate::rng::aux_stream;
use crate::scalar::{CompensatedComplexSum, CompensatedSum, Real, C};
use crate::sce::SceSolution;

/// Default number of sampled off-diagonal pairs for `Λ_O`.
pub const DEFAULT_PAIR_BUDGET: usize = 100_000;
/// Default `δ` for the delocalization and dyadic diagnostics.
pub const DEFAULT_DELTA: f64 = 0.1;

const PAIR_STREAM: u64 = 0x7061_6972;
const PAIR_CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("eigendecomposition did not converge (sample seed {seed})")]
    DecompositionFailure { seed: u64 },
    #[error("dimension {n} exceeds the dense cap {cap}")]
    TooLarge { n: usize, cap: usize },
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("eigenvectors were not retained")]
    VectorsNotRetained,
    #[error("spectral parameter {re} + {im}i is not in the upper half-plane")]
    NotUpperHalfPlane { re: f64, im: f64 },
    #[error("no eigenvalue in [{lower}, {upper}]")]
    EmptyBulk { lower: f64, upper: f64 },
    #[error("index {index} out of range for dimension {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Sorted eigenvalues, optionally with orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct Spectrum<T> {
    eigenvalues: Vec<T>,
    /// Column `i` holds `(u_1^i, ..., u_N^i)`.
    vertex_major: Option<Mat<T>>,
    source_seed: u64,
}

impl<T: Real> Spectrum<T> {
    /// Spectrum without vectors from given eigenvalues (sorted on entry).
    pub fn from_eigenvalues(mut eigenvalues: Vec<T>, source_seed: u64) -> Self {
        eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        Self {
            eigenvalues,
            vertex_major: None,
            source_seed,
        }
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    pub fn has_vectors(&self) -> bool {
        self.vertex_major.is_some()
    }

    pub fn source_seed(&self) -> u64 {
        self.source_seed
    }

    fn vectors(&self) -> Result<&Mat<T>, SpectralError> {
        self.vertex_major
            .as_ref()
            .ok_or(SpectralError::VectorsNotRetained)
    }

    /// `u_α^i`.
    pub fn component(&self, i: usize, alpha: usize) -> Result<T, SpectralError> {
        let v = self.vectors()?;
        self.check_index(i)?;
        self.check_index(alpha)?;
        Ok(v[(alpha, i)])
    }

    /// Eigenvector `u_α` in vertex order.
    pub fn eigenvector(&self, alpha: usize) -> Result<Vec<T>, SpectralError> {
        let v = self.vectors()?;
        self.check_index(alpha)?;
        Ok((0..self.n()).map(|i| v[(alpha, i)]).collect())
    }

    /// Components of vertex `i` across all eigenvectors.
    pub fn vertex_components(&self, i: usize) -> Result<Vec<T>, SpectralError> {
        let v = self.vectors()?;
        self.check_index(i)?;
        Ok(v.col(i).iter().copied().collect())
    }

    fn check_index(&self, index: usize) -> Result<(), SpectralError> {
        if index < self.n() {
            Ok(())
        } else {
            Err(SpectralError::IndexOutOfRange { index, n: self.n() })
        }
    }

    /// Compares the spectrum with its source matrix.
    pub fn check_against(&self, matrix: MatRef<'_, T>) -> SpectrumCheck<T> {
        let n = self.n();
        let mut trace = CompensatedSum::new();
        let mut frob = CompensatedSum::new();
        for j in 0..n {
            trace.add(matrix[(j, j)]);
            for i in 0..n {
                frob.add(matrix[(i, j)] * matrix[(i, j)]);
            }
        }
        let mut sum = CompensatedSum::new();
        let mut sum_sq = CompensatedSum::new();
        for &l in &self.eigenvalues {
            sum.add(l);
            sum_sq.add(l * l);
        }
        let scale = |x: T| if x > T::one() { x } else { T::one() };
        let orthonormality_error = self.vertex_major.as_ref().map(|v| {
            let mut gram = Mat::<T>::zeros(n, n);
            matmul(
                gram.as_mut(),
                Accum::Replace,
                v.as_ref(),
                v.transpose(),
                T::one(),
                Par::Seq,
            );
            let mut worst = T::zero();
            for j in 0..n {
                for i in 0..n {
                    let target = if i == j { T::one() } else { T::zero() };
                    let d = (gram[(i, j)] - target).abs();
                    if d > worst {
                        worst = d;
                    }
                }
            }
            worst
        });
        SpectrumCheck {
            trace_error: (sum.value() - trace.value()).abs(),
            frobenius_relative_error: (sum_sq.value() - frob.value()).abs() / scale(frob.value()),
            orthonormality_error,
        }
    }
}

/// Consistency of a spectrum with its source matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumCheck<T> {
    /// `|Σ λ_i - tr H|`.
    pub trace_error: T,
    /// `|Σ λ_i² - Σ h_ij²| / max(1, Σ h_ij²)`.
    pub frobenius_relative_error: T,
    /// `max |U^T U - I|` when vectors are retained.
    pub orthonormality_error: Option<T>,
}

/// Full symmetric eigendecomposition of a sampled matrix.
pub fn eigen_decompose<T: Real>(
    matrix: &SampledMatrix<T>,
    keep_vectors: bool,
) -> Result<Spectrum<T>, SpectralError> {
    if !matrix.is_symmetric() {
        return Err(SpectralError::NotSymmetric);
    }
    decompose_dense(matrix.entries.as_ref(), matrix.seed, keep_vectors)
}

/// Decomposes a symmetric dense matrix; only the lower triangle is read.
pub fn decompose_dense<T: Real>(
    matrix: MatRef<'_, T>,
    seed: u64,
    keep_vectors: bool,
) -> Result<Spectrum<T>, SpectralError> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(SpectralError::Dimension(format!(
            "{}x{} matrix",
            n,
            matrix.ncols()
        )));
    }
    if n > DENSE_DIMENSION_CAP {
        return Err(SpectralError::TooLarge {
            n,
            cap: DENSE_DIMENSION_CAP,
        });
    }
    let failure = SpectralError::DecompositionFailure { seed };
    if !keep_vectors {
        let eigenvalues = matrix
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|_| failure)?;
        return Ok(Spectrum {
            eigenvalues,
            vertex_major: None,
            source_seed: seed,
        });
    }
    let evd = matrix
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| failure)?;
    let s = evd.S().column_vector();
    let eigenvalues: Vec<T> = (0..n).map(|k| s[k]).collect();
    let u = evd.U();
    let vertex_major = Mat::from_fn(n, n, |alpha, i| u[(i, alpha)]);
    Ok(Spectrum {
        eigenvalues,
        vertex_major: Some(vertex_major),
        source_seed: seed,
    })
}

fn check_z<T: Real>(z: C<T>) -> Result<(), SpectralError> {
    if z.im > T::zero() {
        Ok(())
    } else {
        Err(SpectralError::NotUpperHalfPlane {
            re: z.re.to_f64_lossy(),
            im: z.im.to_f64_lossy(),
        })
    }
}

/// `m_N(z) = (1/N) Σ_i 1/(λ_i - z)`.
pub fn empirical_stieltjes<T: Real>(
    spectrum: &Spectrum<T>,
    z: C<T>,
) -> Result<C<T>, SpectralError> {
    check_z(z)?;
    let mut acc = CompensatedComplexSum::new();
    for &l in &spectrum.eigenvalues {
        acc.add((Complex::new(l, T::zero()) - z).inv());
    }
    Ok(acc.value() / T::of_usize(spectrum.n()))
}

fn resolvent_weights<T: Real>(spectrum: &Spectrum<T>, z: C<T>) -> Vec<C<T>> {
    spectrum
        .eigenvalues
        .iter()
        .map(|&l| (Complex::new(l, T::zero()) - z).inv())
        .collect()
}

/// `G_ij(z)` for each requested pair.
pub fn resolvent_entries<T: Real>(
    spectrum: &Spectrum<T>,
    z: C<T>,
    pairs: &[(usize, usize)],
) -> Result<Vec<C<T>>, SpectralError> {
    let out = resolvent_entries_multi(spectrum, &[z], pairs)?;
    Ok(out.into_iter().map(|row| row[0]).collect())
}

/// `G_ij(z_k)` for each pair (outer) and spectral parameter (inner).
///
/// Computed as one real matrix product per chunk of pairs, so the cost of
/// forming `u^i ∘ u^j` is shared across all `z`.
pub fn resolvent_entries_multi<T: Real>(
    spectrum: &Spectrum<T>,
    zs: &[C<T>],
    pairs: &[(usize, usize)],
) -> Result<Vec<Vec<C<T>>>, SpectralError> {
    let v = spectrum.vectors()?;
    for &z in zs {
        check_z(z)?;
    }
    let n = spectrum.n();
    if let Some(&(i, j)) = pairs.iter().find(|(i, j)| *i >= n || *j >= n) {
        return Err(SpectralError::IndexOutOfRange { index: i.max(j), n });
    }
    let nz = zs.len();
    let weights = Mat::<T>::from_fn(n, 2 * nz, |alpha, c| {
        let w = (Complex::new(spectrum.eigenvalues[alpha], T::zero()) - zs[c / 2]).inv();
        if c % 2 == 0 {
            w.re
        } else {
            w.im
        }
    });
    let mut out = Vec::with_capacity(pairs.len());
    let mut products = Mat::<T>::zeros(n, PAIR_CHUNK.min(pairs.len()).max(1));
    let mut result = Mat::<T>::zeros(PAIR_CHUNK.min(pairs.len()).max(1), 2 * nz);
    for chunk in pairs.chunks(PAIR_CHUNK) {
        let b = chunk.len();
        for (p, &(i, j)) in chunk.iter().enumerate() {
            let ci = v.col(i);
            let cj = v.col(j);
            let mut dst = products.col_mut(p);
            for alpha in 0..n {
                dst[alpha] = ci[alpha] * cj[alpha];
            }
        }
        let lhs = products.as_ref().subcols(0, b);
        matmul(
            result.as_mut().subrows_mut(0, b),
            Accum::Replace,
            lhs.transpose(),
            weights.as_ref(),
            T::one(),
            Par::Seq,
        );
        for p in 0..b {
            out.push(
                (0..nz)
                    .map(|k| Complex::new(result[(p, 2 * k)], result[(p, 2 * k + 1)]))
                    .collect(),
            );
        }
    }
    Ok(out)
}

/// Diagonal `G_ii(z)` for all `i`.
pub fn resolvent_diagonal<T: Real>(
    spectrum: &Spectrum<T>,
    z: C<T>,
) -> Result<Vec<C<T>>, SpectralError> {
    let pairs: Vec<(usize, usize)> = (0..spectrum.n()).map(|i| (i, i)).collect();
    resolvent_entries(spectrum, z, &pairs)
}

/// Full row `G_i·(z)`.
pub fn resolvent_row<T: Real>(
    spectrum: &Spectrum<T>,
    i: usize,
    z: C<T>,
) -> Result<Vec<C<T>>, SpectralError> {
    let v = spectrum.vectors()?;
    check_z(z)?;
    spectrum.check_index(i)?;
    let n = spectrum.n();
    let w = resolvent_weights(spectrum, z);
    let ci = v.col(i);
    let wi: Vec<C<T>> = (0..n).map(|alpha| w[alpha] * ci[alpha]).collect();
    Ok((0..n)
        .map(|j| {
            let cj = v.col(j);
            let mut acc = C::<T>::zero();
            for alpha in 0..n {
                acc = acc + wi[alpha] * cj[alpha];
            }
            acc
        })
        .collect())
}

/// Relative defect of the Ward identity `Σ_j |G_ij|² = Im G_ii / η` on row `i`.
pub fn ward_defect<T: Real>(spectrum: &Spectrum<T>, i: usize, z: C<T>) -> Result<T, SpectralError> {
    let row = resolvent_row(spectrum, i, z)?;
    let mut lhs = CompensatedSum::new();
    for g in &row {
        lhs.add(g.norm_sqr());
    }
    let rhs = row[i].im / z.im;
    Ok((lhs.value() - rhs).abs() / rhs.abs())
}

/// Off-diagonal pairs for `Λ_O`: all `i < j` when there are at most `budget`
/// of them, otherwise `budget` uniform draws from the seeded pair stream.
/// The flag reports whether the set is exhaustive.
pub fn sample_pairs(n: usize, budget: usize, seed: u64) -> (Vec<(usize, usize)>, bool) {
    let total = n * n.saturating_sub(1) / 2;
    if total <= budget {
        let pairs = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        return (pairs, true);
    }
    let mut rng = aux_stream(seed, PAIR_STREAM);
    let pairs = (0..budget)
        .map(|_| loop {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j {
                break (i.min(j), i.max(j));
            }
        })
        .collect();
    (pairs, false)
}

/// One local-law observation at one spectral parameter and sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalLawRecord<T> {
    pub z: C<T>,
    pub lambda_d: T,
    pub lambda_o: T,
    /// `max(lambda_d, lambda_o)`.
    pub lambda: T,
    /// `1/√q + 1/√(N Im z)`.
    pub phi: T,
    /// `max_i |R_i| / θ_i`.
    pub max_schur_residual: T,
    pub m_n: C<T>,
    pub m: C<T>,
    pub sample_seed: u64,
    pub pair_budget: usize,
    pub pairs_exhaustive: bool,
}

impl<T: Real> LocalLawRecord<T> {
    pub fn lambda_over_phi(&self) -> T {
        self.lambda / self.phi
    }

    pub fn schur_over_phi(&self) -> T {
        self.max_schur_residual / self.phi
    }

    /// `|m_N - m| / Φ`.
    pub fn m_error_over_phi(&self) -> T {
        (self.m_n - self.m).norm() / self.phi
    }
}

/// `1/√q + 1/√(N η)`.
pub fn control_parameter<T: Real>(q: T, n: usize, eta: T) -> T {
    T::one() / q.sqrt() + T::one() / (T::of_usize(n) * eta).sqrt()
}

/// Off-diagonal entries `G_ij` with their pair.
pub type OffDiagonal<'a, T> = &'a [((usize, usize), C<T>)];

/// Assembles a record from given diagonal and sampled off-diagonal entries.
pub fn record_from_entries<T: Real>(
    ensemble: &EnsembleSpec<T>,
    solution: &SceSolution<T>,
    diagonal: &[C<T>],
    off_diagonal: OffDiagonal<'_, T>,
    sample_seed: u64,
    pair_budget: usize,
    pairs_exhaustive: bool,
) -> Result<LocalLawRecord<T>, SpectralError> {
    let n = ensemble.n();
    if diagonal.len() != n || solution.g.len() != n {
        return Err(SpectralError::Dimension(format!(
            "diagonal has {}, solution {} entries for N = {n}",
            diagonal.len(),
            solution.g.len()
        )));
    }
    let z = solution.z;
    let theta = ensemble.theta();
    let profile = ensemble.profile();
    let max = |acc: T, v: T| if v > acc || v.is_nan() { v } else { acc };

    let lambda_d = (0..n)
        .map(|i| theta[i] * (diagonal[i] - solution.g[i]).norm())
        .fold(T::zero(), max);
    let lambda_o = off_diagonal
        .iter()
        .map(|((i, j), g)| (theta[*i] * theta[*j]).sqrt() * g.norm())
        .fold(T::zero(), max);

    // Σ_k s_ik G_kk = Σ_l γ_i^(l) · (1/N) Σ_k γ_k^(l) G_kk
    let inv_n = T::one() / T::of_usize(n);
    let moments: Vec<C<T>> = profile
        .gammas()
        .iter()
        .map(|gamma| {
            let mut acc = CompensatedComplexSum::new();
            for (gk, d) in gamma.iter().zip(diagonal) {
                acc.add(*d * *gk);
            }
            acc.value() * inv_n
        })
        .collect();
    let max_schur_residual = (0..n)
        .map(|i| {
            let mut r = diagonal[i].inv() + z;
            for (gamma, mom) in profile.gammas().iter().zip(&moments) {
                r = r + *mom * gamma[i];
            }
            r.norm() / theta[i]
        })
        .fold(T::zero(), max);

    let mut m_n = CompensatedComplexSum::new();
    for d in diagonal {
        m_n.add(*d);
    }
    Ok(LocalLawRecord {
        z,
        lambda_d,
        lambda_o,
        lambda: if lambda_d > lambda_o {
            lambda_d
        } else {
            lambda_o
        },
        phi: control_parameter(ensemble.q(), n, z.im),
        max_schur_residual,
        m_n: m_n.value() * inv_n,
        m: solution.m,
        sample_seed,
        pair_budget,
        pairs_exhaustive,
    })
}

/// Local-law record at one spectral parameter.
pub fn local_law_record<T: Real>(
    spectrum: &Spectrum<T>,
    ensemble: &EnsembleSpec<T>,
    solution: &SceSolution<T>,
    pair_budget: usize,
) -> Result<LocalLawRecord<T>, SpectralError> {
    let mut out = local_law_records(
        spectrum,
        ensemble,
        std::slice::from_ref(solution),
        pair_budget,
    )?;
    Ok(out.remove(0))
}

/// Local-law records for several spectral parameters sharing one pair sample.
/// Pairs are drawn from the spectrum's source seed.
pub fn local_law_records<T: Real>(
    spectrum: &Spectrum<T>,
    ensemble: &EnsembleSpec<T>,
    solutions: &[SceSolution<T>],
    pair_budget: usize,
) -> Result<Vec<LocalLawRecord<T>>, SpectralError> {
    let n = spectrum.n();
    if ensemble.n() != n {
        return Err(SpectralError::Dimension(format!(
            "spectrum has N = {n}, ensemble N = {}",
            ensemble.n()
        )));
    }
    let zs: Vec<C<T>> = solutions.iter().map(|s| s.z).collect();
    let diag_pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    let diagonal = resolvent_entries_multi(spectrum, &zs, &diag_pairs)?;
    let (pairs, exhaustive) = sample_pairs(n, pair_budget, spectrum.source_seed);
    let off = resolvent_entries_multi(spectrum, &zs, &pairs)?;
    solutions
        .iter()
        .enumerate()
        .map(|(k, sol)| {
            let diag: Vec<C<T>> = diagonal.iter().map(|row| row[k]).collect();
            let off_k: Vec<((usize, usize), C<T>)> = pairs
                .iter()
                .zip(&off)
                .map(|(p, row)| (*p, row[k]))
                .collect();
            record_from_entries(
                ensemble,
                sol,
                &diag,
                &off_k,
                spectrum.source_seed,
                pair_budget,
                exhaustive,
            )
        })
        .collect()
}

/// Index range of eigenvalues inside `[lower, upper]`.
pub fn bulk_range<T: Real>(
    spectrum: &Spectrum<T>,
    (lower, upper): (T, T),
) -> std::ops::Range<usize> {
    let ev = &spectrum.eigenvalues;
    let a = ev.partition_point(|&l| l < lower);
    let b = ev.partition_point(|&l| l <= upper);
    a..b.max(a)
}

/// `max` over eigenvectors with eigenvalue in the interval of `N max_i |u_k^i|²`.
pub fn delocalization_profile<T: Real>(
    spectrum: &Spectrum<T>,
    bulk_interval: (T, T),
) -> Result<T, SpectralError> {
    let v = spectrum.vectors()?;
    let range = bulk_range(spectrum, bulk_interval);
    if range.is_empty() {
        return Err(SpectralError::EmptyBulk {
            lower: bulk_interval.0.to_f64_lossy(),
            upper: bulk_interval.1.to_f64_lossy(),
        });
    }
    let mut worst = T::zero();
    for i in 0..spectrum.n() {
        let col = v.col(i);
        for alpha in range.clone() {
            let c = col[alpha] * col[alpha];
            if c > worst {
                worst = c;
            }
        }
    }
    Ok(worst * T::of_usize(spectrum.n()))
}

/// Counts `|U_n|`, `n = 0..=floor(log₂ N)`, of eigenvalues in the dyadic
/// annuli around `E` of inner scale `ℓ = N^(δ-1)`: `U_0 = {|λ - E| ≤ ℓ}`,
/// `U_n = {2^(n-1) ℓ < |λ - E| ≤ 2^n ℓ}`.
pub fn dyadic_count_profile<T: Real>(spectrum: &Spectrum<T>, energy: T, delta: T) -> Vec<usize> {
    dyadic_counts(&spectrum.eigenvalues, spectrum.n(), energy, delta)
}

/// Same as [`dyadic_count_profile`] for a raw eigenvalue slice of a size-`n` matrix.
pub fn dyadic_counts<T: Real>(eigenvalues: &[T], n: usize, energy: T, delta: T) -> Vec<usize> {
    let levels = if n == 0 { 1 } else { n.ilog2() as usize + 1 };
    let scale = T::of_usize(n.max(1)).powf(delta - T::one());
    let mut counts = vec![0usize; levels];
    for &l in eigenvalues {
        let d = (l - energy).abs();
        if d <= scale {
            counts[0] += 1;
            continue;
        }
        // smallest n with d ≤ 2^n ℓ
        let mut bound = scale;
        for c in counts.iter_mut().skip(1) {
            bound = bound * T::of(2.0);
            if d <= bound {
                *c += 1;
                break;
            }
        }
    }
    counts
}

/// `max_n |U_n| / (2^n N^δ)`.
pub fn dyadic_ratio<T: Real>(counts: &[usize], n: usize, delta: T) -> T {
    let nd = T::of_usize(n.max(1)).powf(delta);
    counts
        .iter()
        .enumerate()
        .map(|(k, &c)| T::of_usize(c) / (T::of(2.0).powi(k as i32) * nd))
        .fold(T::zero(), |acc, v| if v > acc { v } else { acc })
}
