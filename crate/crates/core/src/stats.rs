//! Small sample statistics used by the harness.

use std::cmp::Ordering;

fn total(a: &f64, b: &f64) -> Ordering {
    a.total_cmp(b)
}

/// Sorts a copy of `xs` ascending (NaN last).
pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(total);
    v
}

/// Linearly interpolated quantile of an ascending slice, `p ∈ [0, 1]`.
/// Returns NaN on an empty slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

pub fn quantile(xs: &[f64], p: f64) -> f64 {
    quantile_sorted(&sorted(xs), p)
}

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Discrete Hill estimator of the tail exponent `β` of `P(d = k) ∝ k^-β`
/// over the values `≥ d_min`, using the continuity-corrected scale `d_min - 1/2`.
/// Returns the estimate and the number of tail values.
pub fn hill_exponent(values: &[f64], d_min: f64) -> Option<(f64, usize)> {
    let scale = d_min - 0.5;
    if scale <= 0.0 {
        return None;
    }
    let (sum, count) = values
        .iter()
        .filter(|&&d| d >= d_min)
        .fold((0.0f64, 0usize), |(s, c), &d| (s + (d / scale).ln(), c + 1));
    if count == 0 || sum <= 0.0 {
        return None;
    }
    Some((1.0 + count as f64 / sum, count))
}
