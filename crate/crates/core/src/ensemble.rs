//! Low-rank variance profiles and the three matrix samplers.
//!
//! A profile is a set of `r` factor vectors `γ^(k)` of length `N` with every
//! entry at least one. The variance matrix is
//! `s_ij = (1/N) Σ_k γ_i^(k) γ_j^(k)`; it is evaluated lazily.

use faer::Mat;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::row_stream;
use crate::scalar::Real;

/// Default bound `M` on `(1/N) Σ_{k,i} (γ_i^(k))²`.
pub const DEFAULT_FLATNESS_BOUND: f64 = 100.0;

/// Largest dimension for which dense matrices are materialized.
pub const DENSE_DIMENSION_CAP: usize = 8192;

/// `max q s_ij` above this value triggers a warning (not an error).
pub const SPARSITY_WARNING_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("profile needs at least one factor vector")]
    EmptyProfile,
    #[error("dimension must be positive (got {0})")]
    InvalidDimension(usize),
    #[error("factor vector {k} has length {len}, expected {expected}")]
    LengthMismatch {
        k: usize,
        len: usize,
        expected: usize,
    },
    #[error("gamma^({k})_{i} = {value} is below 1")]
    ViolatedGammaBound { k: usize, i: usize, value: f64 },
    #[error("(1/N) sum of squared factors is {value}, above the flatness bound {bound}")]
    ViolatedFlatness { value: f64, bound: f64 },
    #[error("q*s_ij = {value} exceeds 1 at (i, j) = ({i}, {j})")]
    ViolatedSparsity { i: usize, j: usize, value: f64 },
    #[error("kappa = {0} is outside (0, 1]")]
    KappaOutOfRange(f64),
    #[error("power-law exponent mu = {0} is outside (0, 1/2)")]
    MuOutOfRange(f64),
    #[error("invalid block profile: {0}")]
    InvalidBlocks(String),
    #[error("dimension {0} exceeds the dense cap {DENSE_DIMENSION_CAP}")]
    TooLarge(usize),
    #[error("entry ({i}, {j}) is outside an {n}x{n} matrix")]
    IndexOutOfRange { i: usize, j: usize, n: usize },
}

/// Matrix model used by a sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// `±1/√q` with probability `q s_ij / 2` each, else `0`.
    RandomSign,
    /// Centered and rescaled 0/1 adjacency entry with `P[a_ij = 1] = q s_ij`.
    CenteredZeroOne,
    /// Gaussian orthogonal ensemble, semicircle on `[-2, 2]`.
    Goe,
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::RandomSign => "random_sign",
            Model::CenteredZeroOne => "centered_zero_one",
            Model::Goe => "goe",
        }
    }
}

/// The factor vectors `γ^(k)` together with `θ_i = Σ_k γ_i^(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankProfile<T> {
    n: usize,
    gammas: Vec<Vec<T>>,
    theta: Vec<T>,
}

impl<T: Real> LowRankProfile<T> {
    /// Checks lengths and the lower bound `γ ≥ 1`.
    pub fn new(gammas: Vec<Vec<T>>) -> Result<Self, EnsembleError> {
        let first = gammas.first().ok_or(EnsembleError::EmptyProfile)?;
        let n = first.len();
        if n == 0 {
            return Err(EnsembleError::InvalidDimension(0));
        }
        for (k, g) in gammas.iter().enumerate() {
            if g.len() != n {
                return Err(EnsembleError::LengthMismatch {
                    k,
                    len: g.len(),
                    expected: n,
                });
            }
            for (i, &v) in g.iter().enumerate() {
                // NaN fails this comparison too.
                if !(v >= T::one()) {
                    return Err(EnsembleError::ViolatedGammaBound {
                        k,
                        i,
                        value: v.to_f64_lossy(),
                    });
                }
            }
        }
        let theta = theta_of(&gammas);
        Ok(Self { n, gammas, theta })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.gammas.len()
    }

    pub fn gamma(&self, k: usize) -> &[T] {
        &self.gammas[k]
    }

    pub fn gammas(&self) -> &[Vec<T>] {
        &self.gammas
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    /// `s_ij = (1/N) Σ_k γ_i^(k) γ_j^(k)`.
    #[inline]
    pub fn s(&self, i: usize, j: usize) -> T {
        let mut acc = T::zero();
        for g in &self.gammas {
            acc = acc + g[i] * g[j];
        }
        acc / T::of_usize(self.n)
    }

    /// `(1/N) Σ_i γ_i^(k)`.
    pub fn mean_gamma(&self, k: usize) -> T {
        self.gammas[k].iter().copied().sum::<T>() / T::of_usize(self.n)
    }

    /// `(1/N) Σ_{k,i} (γ_i^(k))²`.
    pub fn flatness(&self) -> T {
        let total: T = self
            .gammas
            .iter()
            .flat_map(|g| g.iter().map(|&v| v * v))
            .sum();
        total / T::of_usize(self.n)
    }

    /// Dense `s` (row-major), only when `N` is within the dense cap.
    pub fn variance_matrix(&self) -> Option<Vec<T>> {
        if self.n > DENSE_DIMENSION_CAP {
            return None;
        }
        let n = self.n;
        let mut out = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.s(i, j);
            }
        }
        Some(out)
    }
}

/// `θ_i = Σ_k γ_i^(k)` without any validation.
pub fn theta_of<T: Real>(gammas: &[Vec<T>]) -> Vec<T> {
    let n = gammas.first().map_or(0, |g| g.len());
    (0..n)
        .map(|i| gammas.iter().map(|g| g[i]).sum::<T>())
        .collect()
}

/// A validated generalized Chung-Lu ensemble: profile plus sparsity `q = N^κ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec<T> {
    profile: LowRankProfile<T>,
    kappa: T,
    q: T,
    flatness_bound: T,
    max_edge_probability: T,
}

impl<T: Real> EnsembleSpec<T> {
    /// Builds a spec with the default flatness bound.
    pub fn new(n: usize, kappa: T, gammas: Vec<Vec<T>>) -> Result<Self, EnsembleError> {
        Self::with_flatness_bound(n, kappa, gammas, T::of(DEFAULT_FLATNESS_BOUND))
    }

    pub fn with_flatness_bound(
        n: usize,
        kappa: T,
        gammas: Vec<Vec<T>>,
        flatness_bound: T,
    ) -> Result<Self, EnsembleError> {
        if n == 0 {
            return Err(EnsembleError::InvalidDimension(0));
        }
        if !(kappa > T::zero() && kappa <= T::one()) {
            return Err(EnsembleError::KappaOutOfRange(kappa.to_f64_lossy()));
        }
        if let Some((k, g)) = gammas.iter().enumerate().find(|(_, g)| g.len() != n) {
            return Err(EnsembleError::LengthMismatch {
                k,
                len: g.len(),
                expected: n,
            });
        }
        let profile = LowRankProfile::new(gammas)?;
        let flat = profile.flatness();
        if flat > flatness_bound {
            return Err(EnsembleError::ViolatedFlatness {
                value: flat.to_f64_lossy(),
                bound: flatness_bound.to_f64_lossy(),
            });
        }
        let q = T::of_usize(n).powf(kappa);
        let (value, i, j) = max_edge_probability(&profile, q);
        // q s_ij = 1 exactly is allowed; leave room for rounding in q = N^κ.
        let slack = T::one() + T::epsilon() * T::of(64.0);
        if value > slack {
            return Err(EnsembleError::ViolatedSparsity {
                i,
                j,
                value: value.to_f64_lossy(),
            });
        }
        if value > T::of(SPARSITY_WARNING_LEVEL) {
            log::warn!(
                "max q*s_ij = {:.4} at ({i}, {j}) is close to the sparsity limit",
                value.to_f64_lossy()
            );
        }
        Ok(Self {
            profile,
            kappa,
            q,
            flatness_bound,
            max_edge_probability: value,
        })
    }

    pub fn n(&self) -> usize {
        self.profile.n
    }

    pub fn rank(&self) -> usize {
        self.profile.rank()
    }

    pub fn kappa(&self) -> T {
        self.kappa
    }

    /// `q = N^κ`.
    pub fn q(&self) -> T {
        self.q
    }

    pub fn flatness_bound(&self) -> T {
        self.flatness_bound
    }

    pub fn profile(&self) -> &LowRankProfile<T> {
        &self.profile
    }

    pub fn theta(&self) -> &[T] {
        self.profile.theta()
    }

    #[inline]
    pub fn s(&self, i: usize, j: usize) -> T {
        self.profile.s(i, j)
    }

    /// `max_{ij} q s_ij`.
    pub fn max_edge_probability(&self) -> T {
        self.max_edge_probability
    }

    /// Edge probability `p_ij = q s_ij`, clamped to 1 against rounding.
    #[inline]
    pub fn edge_probability(&self, i: usize, j: usize) -> T {
        let p = self.q * self.s(i, j);
        if p > T::one() {
            T::one()
        } else {
            p
        }
    }
}

/// Shorthand for [`EnsembleSpec::new`].
pub fn build_spec<T: Real>(
    n: usize,
    kappa: T,
    gammas: Vec<Vec<T>>,
) -> Result<EnsembleSpec<T>, EnsembleError> {
    EnsembleSpec::new(n, kappa, gammas)
}

fn max_edge_probability<T: Real>(profile: &LowRankProfile<T>, q: T) -> (T, usize, usize) {
    let n = profile.n;
    if profile.rank() == 1 {
        // rank one: the maximum sits on the diagonal at the largest factor
        let g = profile.gamma(0);
        let (i, &gmax) = g
            .iter()
            .enumerate()
            .fold((0, &g[0]), |acc, x| if *x.1 > *acc.1 { x } else { acc });
        return (q * gmax * gmax / T::of_usize(n), i, i);
    }
    let mut best = (T::neg_infinity(), 0, 0);
    for i in 0..n {
        for j in i..n {
            let v = q * profile.s(i, j);
            if v > best.0 {
                best = (v, i, j);
            }
        }
    }
    best
}

/// `γ_i = (i/N)^(-μ)` for `i = 1..N`, `0 < μ < 1/2`.
pub fn power_law_profile<T: Real>(n: usize, mu: T) -> Result<Vec<T>, EnsembleError> {
    if !(mu > T::zero() && mu < T::of(0.5)) {
        return Err(EnsembleError::MuOutOfRange(mu.to_f64_lossy()));
    }
    if n == 0 {
        return Err(EnsembleError::InvalidDimension(0));
    }
    let nn = T::of_usize(n);
    Ok((1..=n)
        .map(|i| {
            if i == n {
                T::one()
            } else {
                (T::of_usize(i) / nn).powf(-mu)
            }
        })
        .collect())
}

/// Degree exponent `β = 1 + 1/μ` of the power-law profile.
pub fn power_law_degree_exponent<T: Real>(mu: T) -> T {
    T::one() + T::one() / mu
}

pub fn constant_profile<T: Real>(n: usize, value: T) -> Vec<T> {
    vec![value; n]
}

/// Piecewise-constant profile: consecutive blocks with the given values whose
/// sizes follow `proportions` (rounded, last block absorbs the remainder).
pub fn two_block_profile<T: Real>(
    n: usize,
    values: &[T],
    proportions: &[T],
) -> Result<Vec<T>, EnsembleError> {
    if values.len() != proportions.len() || values.is_empty() {
        return Err(EnsembleError::InvalidBlocks(format!(
            "{} values vs {} proportions",
            values.len(),
            proportions.len()
        )));
    }
    let total: T = proportions.iter().copied().sum();
    if proportions.iter().any(|&p| !(p > T::zero())) || (total - T::one()).abs() > T::of(1e-6) {
        return Err(EnsembleError::InvalidBlocks(
            "proportions must be positive and sum to 1".into(),
        ));
    }
    let mut out = Vec::with_capacity(n);
    let mut cumulative = T::zero();
    for (b, (&v, &p)) in values.iter().zip(proportions).enumerate() {
        cumulative = cumulative + p;
        let end = if b + 1 == values.len() {
            n
        } else {
            (cumulative * T::of_usize(n))
                .round()
                .to_usize()
                .unwrap_or(n)
                .min(n)
        };
        while out.len() < end {
            out.push(v);
        }
    }
    Ok(out)
}

/// A sampled symmetric matrix.
#[derive(Debug, Clone)]
pub struct SampledMatrix<T: Real> {
    pub entries: Mat<T>,
    pub model: Model,
    pub seed: u64,
}

impl<T: Real> SampledMatrix<T> {
    /// Builds a symmetric matrix from `(i, j, value)` entries; each entry is
    /// mirrored and unlisted entries are zero. A later entry overwrites an earlier one.
    pub fn from_triplets(
        n: usize,
        triplets: &[(usize, usize, T)],
        model: Model,
        seed: u64,
    ) -> Result<Self, EnsembleError> {
        let mut entries = Mat::<T>::zeros(n, n);
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(EnsembleError::IndexOutOfRange { i, j, n });
            }
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
        Ok(Self {
            entries,
            model,
            seed,
        })
    }

    /// Upper-triangle nonzeros `(i, j, h_ij)` with `i <= j`, row by row.
    pub fn upper_triplets(&self) -> Vec<(usize, usize, T)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i..n {
                let v = self.entries[(i, j)];
                if v != T::zero() {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[(i, j)]
    }

    pub fn trace(&self) -> T {
        (0..self.n()).map(|i| self.entries[(i, i)]).sum()
    }

    /// `Σ_ij h_ij²`.
    pub fn frobenius_sq(&self) -> T {
        let n = self.n();
        let mut acc = crate::scalar::CompensatedSum::new();
        for j in 0..n {
            for i in 0..n {
                let v = self.entries[(i, j)];
                acc.add(v * v);
            }
        }
        acc.value()
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..i).all(|j| self.entries[(i, j)] == self.entries[(j, i)]))
    }
}

/// Fills the upper triangle row by row from per-row streams and mirrors it.
fn sample_symmetric<T, F>(n: usize, seed: u64, model: Model, entry: F) -> SampledMatrix<T>
where
    T: Real,
    F: Fn(&mut rand_chacha::ChaCha8Rng, usize, usize) -> T + Sync,
{
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = row_stream(seed, i);
            (i..n).map(|j| entry(&mut rng, i, j)).collect()
        })
        .collect();
    let mut entries = Mat::<T>::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (offset, &v) in row.iter().enumerate() {
            let j = i + offset;
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    SampledMatrix {
        entries,
        model,
        seed,
    }
}

#[inline]
fn uniform<T: Real>(rng: &mut rand_chacha::ChaCha8Rng) -> T {
    T::of(rng.random::<f64>())
}

/// `h_ij = ±1/√q` with probability `q s_ij / 2` each, `0` otherwise.
pub fn sample_random_sign<T: Real>(spec: &EnsembleSpec<T>, seed: u64) -> SampledMatrix<T> {
    let amp = T::one() / spec.q().sqrt();
    let half = T::of(0.5);
    sample_symmetric(spec.n(), seed, Model::RandomSign, |rng, i, j| {
        let p = spec.edge_probability(i, j);
        let u: T = uniform(rng);
        if u < half * p {
            amp
        } else if u < p {
            -amp
        } else {
            T::zero()
        }
    })
}

/// `h_ij = (1 - p)/√q` with probability `p = q s_ij`, else `-p/√q`.
pub fn sample_centered<T: Real>(spec: &EnsembleSpec<T>, seed: u64) -> SampledMatrix<T> {
    let inv_sqrt_q = T::one() / spec.q().sqrt();
    sample_symmetric(spec.n(), seed, Model::CenteredZeroOne, |rng, i, j| {
        let p = spec.edge_probability(i, j);
        let u: T = uniform(rng);
        if u < p {
            (T::one() - p) * inv_sqrt_q
        } else {
            -p * inv_sqrt_q
        }
    })
}

/// GOE with off-diagonal variance `1/N` and diagonal variance `2/N`.
pub fn sample_goe<T: Real>(n: usize, seed: u64) -> SampledMatrix<T> {
    let sd_off = (1.0 / n as f64).sqrt();
    let sd_diag = (2.0 / n as f64).sqrt();
    sample_symmetric(n, seed, Model::Goe, |rng, i, j| {
        let x: f64 = StandardNormal.sample(rng);
        T::of(if i == j { x * sd_diag } else { x * sd_off })
    })
}

/// Dispatches on `model`; GOE ignores the profile except for `N`.
pub fn sample<T: Real>(spec: &EnsembleSpec<T>, model: Model, seed: u64) -> SampledMatrix<T> {
    match model {
        Model::RandomSign => sample_random_sign(spec, seed),
        Model::CenteredZeroOne => sample_centered(spec, seed),
        Model::Goe => sample_goe(spec.n(), seed),
    }
}

/// Vertex degrees of the 0/1 adjacency matrix behind [`sample_centered`]
/// (same seed, same draws; self-loops are not counted).
pub fn adjacency_degrees<T: Real>(spec: &EnsembleSpec<T>, seed: u64) -> Vec<usize> {
    let n = spec.n();
    let rows: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = row_stream(seed, i);
            (i..n)
                .filter(|&j| {
                    let p = spec.edge_probability(i, j);
                    let u: T = uniform(&mut rng);
                    u < p && j != i
                })
                .collect()
        })
        .collect();
    let mut degrees = vec![0usize; n];
    for (i, row) in rows.iter().enumerate() {
        for &j in row {
            degrees[i] += 1;
            degrees[j] += 1;
        }
    }
    degrees
}

/// Exact moments of a single entry under a two-point (or three-point) law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryMoments<T> {
    pub mean: T,
    pub second: T,
    pub fourth: T,
}

/// Closed-form moments for edge probability `p` and sparsity `q`.
pub fn entry_moments<T: Real>(model: Model, p: T, q: T) -> Option<EntryMoments<T>> {
    match model {
        Model::RandomSign => Some(EntryMoments {
            mean: T::zero(),
            second: p / q,
            fourth: p / (q * q),
        }),
        Model::CenteredZeroOne => {
            let one_m = T::one() - p;
            Some(EntryMoments {
                mean: (p * one_m - one_m * p) / q.sqrt(),
                second: p * one_m / q,
                fourth: p * one_m * (one_m.powi(3) + p.powi(3)) / (q * q),
            })
        }
        Model::Goe => None,
    }
}
