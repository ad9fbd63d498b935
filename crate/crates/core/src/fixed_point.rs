//! Damped, Anderson-accelerated fixed-point iteration on `(C⁺)^d`.
//!
//! Shared by the rank-r self-consistent solver and the kernel (QVE) solver.
//! The iterate is kept in the open upper half-plane: an extrapolated step
//! that leaves it is replaced by the plain damped step, which is a convex
//! combination of two points of `C⁺` whenever the map preserves `C⁺`.

use std::collections::VecDeque;

use num_complex::Complex;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::scalar::{Real, C};

/// Iteration controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationOptions<T> {
    /// Stop once `max_k |F(x)_k - x_k| <= tol`.
    pub tol: T,
    pub max_iter: usize,
    /// Damping starts at 1 and is halved on every non-decreasing step, down to this floor.
    pub damping_floor: T,
    /// Anderson history depth; 0 gives the plain damped iteration.
    pub history: usize,
}

impl<T: Real> Default for IterationOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::of(1e-12),
            max_iter: 10_000,
            damping_floor: T::of(1.0 / 64.0),
            history: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixedPointOutcome<T> {
    pub x: Vec<C<T>>,
    pub residual: T,
    pub iterations: usize,
    pub damping: T,
}

#[derive(Debug, Clone)]
pub enum IterationFailure<T> {
    /// Budget exhausted; carries the best iterate seen.
    NoConvergence {
        best: Vec<C<T>>,
        residual: T,
        iterations: usize,
    },
    /// Even the most damped step left the upper half-plane.
    LeftUpperHalfPlane { iteration: usize, damping: T },
}

#[inline]
fn in_upper_half_plane<T: Real>(x: &[C<T>]) -> bool {
    x.iter()
        .all(|v| v.im > T::zero() && v.re.is_finite() && v.im.is_finite())
}

#[inline]
fn max_defect<T: Real>(x: &[C<T>], fx: &[C<T>]) -> T {
    x.iter()
        .zip(fx)
        .map(|(a, b)| (*b - *a).norm())
        .fold(
            T::zero(),
            |acc, v| if v > acc || v.is_nan() { v } else { acc },
        )
}

/// Least-squares coefficients `argmin_γ ||f - D γ||₂` by modified Gram-Schmidt.
/// Columns that are numerically dependent on earlier ones get coefficient 0.
fn least_squares<T: Real>(cols: &VecDeque<Vec<C<T>>>, f: &[C<T>]) -> Vec<C<T>> {
    let m = cols.len();
    let mut q: Vec<Vec<C<T>>> = Vec::with_capacity(m);
    let mut r = vec![vec![C::<T>::zero(); m]; m];
    let mut keep = vec![false; m];
    let cutoff = T::of(1e-13);
    for (j, col) in cols.iter().enumerate() {
        let norm0 = col.iter().map(|v| v.norm_sqr()).sum::<T>().sqrt();
        let mut v = col.clone();
        for (i, qi) in q.iter().enumerate() {
            if !keep[i] {
                continue;
            }
            let proj: C<T> = qi.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
            r[i][j] = proj;
            for (vk, qk) in v.iter_mut().zip(qi) {
                *vk = *vk - *qk * proj;
            }
        }
        let norm = v.iter().map(|x| x.norm_sqr()).sum::<T>().sqrt();
        if norm > cutoff * norm0 && norm > T::min_positive_value() {
            keep[j] = true;
            r[j][j] = Complex::new(norm, T::zero());
            for x in v.iter_mut() {
                *x = *x / norm;
            }
        }
        q.push(v);
    }
    // rhs = Q^H f, then back substitution on kept columns
    let mut rhs = vec![C::<T>::zero(); m];
    for i in 0..m {
        if keep[i] {
            rhs[i] = q[i].iter().zip(f).map(|(a, b)| a.conj() * b).sum();
        }
    }
    let mut gamma = vec![C::<T>::zero(); m];
    for i in (0..m).rev() {
        if !keep[i] {
            continue;
        }
        let mut acc = rhs[i];
        for j in i + 1..m {
            if keep[j] {
                acc = acc - r[i][j] * gamma[j];
            }
        }
        gamma[i] = acc / r[i][i];
    }
    gamma
}

/// Solves `x = F(x)` starting from `x0 ∈ (C⁺)^d`.
///
/// `map(x, out)` writes `F(x)` into `out`.
pub fn solve_fixed_point<T, F>(
    mut map: F,
    x0: Vec<C<T>>,
    opts: &IterationOptions<T>,
) -> Result<FixedPointOutcome<T>, IterationFailure<T>>
where
    T: Real,
    F: FnMut(&[C<T>], &mut [C<T>]),
{
    let d = x0.len();
    let mut x = x0;
    if !in_upper_half_plane(&x) {
        return Err(IterationFailure::LeftUpperHalfPlane {
            iteration: 0,
            damping: T::one(),
        });
    }
    let mut fx = vec![C::<T>::zero(); d];
    map(&x, &mut fx);
    let mut res = max_defect(&x, &fx);
    let mut best = (x.clone(), res);
    let mut since_best = 0usize;
    let mut alpha = T::one();

    let mut dx_hist: VecDeque<Vec<C<T>>> = VecDeque::new();
    let mut df_hist: VecDeque<Vec<C<T>>> = VecDeque::new();
    let mut prev: Option<(Vec<C<T>>, Vec<C<T>>)> = None;
    let mut cand = vec![C::<T>::zero(); d];
    let mut fcand = vec![C::<T>::zero(); d];

    for it in 0..opts.max_iter {
        if res <= opts.tol {
            return Ok(FixedPointOutcome {
                x,
                residual: res,
                iterations: it,
                damping: alpha,
            });
        }
        let f: Vec<C<T>> = fx.iter().zip(&x).map(|(a, b)| *a - *b).collect();
        if opts.history > 0 {
            if let Some((px, pf)) = prev.take() {
                dx_hist.push_back(x.iter().zip(&px).map(|(a, b)| *a - *b).collect());
                df_hist.push_back(f.iter().zip(&pf).map(|(a, b)| *a - *b).collect());
                while dx_hist.len() > opts.history {
                    dx_hist.pop_front();
                    df_hist.pop_front();
                }
            }
        }

        let a = Complex::new(alpha, T::zero());
        for k in 0..d {
            cand[k] = x[k] + a * f[k];
        }
        if !df_hist.is_empty() {
            let gamma = least_squares(&df_hist, &f);
            for (j, g) in gamma.iter().enumerate() {
                if g.is_zero() {
                    continue;
                }
                for k in 0..d {
                    cand[k] = cand[k] - (dx_hist[j][k] + a * df_hist[j][k]) * *g;
                }
            }
            if !in_upper_half_plane(&cand) {
                dx_hist.clear();
                df_hist.clear();
                for k in 0..d {
                    cand[k] = x[k] + a * f[k];
                }
            }
        }
        while !in_upper_half_plane(&cand) {
            alpha = alpha / T::of(2.0);
            if alpha < opts.damping_floor {
                return Err(IterationFailure::LeftUpperHalfPlane {
                    iteration: it,
                    damping: alpha,
                });
            }
            let a = Complex::new(alpha, T::zero());
            for k in 0..d {
                cand[k] = x[k] + a * f[k];
            }
        }

        map(&cand, &mut fcand);
        let rc = max_defect(&cand, &fcand);
        if !(rc < res) {
            let halved = alpha / T::of(2.0);
            alpha = if halved < opts.damping_floor {
                opts.damping_floor
            } else {
                halved
            };
        }
        prev = Some((std::mem::replace(&mut x, cand.clone()), f));
        std::mem::swap(&mut fx, &mut fcand);
        res = rc;
        if res < best.1 {
            best = (x.clone(), res);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > 50 {
                // stagnating history: restart from the best point
                dx_hist.clear();
                df_hist.clear();
                prev = None;
                x = best.0.clone();
                map(&x, &mut fx);
                res = best.1;
                since_best = 0;
            }
        }
    }
    if res <= opts.tol {
        return Ok(FixedPointOutcome {
            x,
            residual: res,
            iterations: opts.max_iter,
            damping: alpha,
        });
    }
    Err(IterationFailure::NoConvergence {
        best: best.0,
        residual: best.1,
        iterations: opts.max_iter,
    })
}
