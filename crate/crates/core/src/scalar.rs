//! Scalar abstraction shared by every numerical module.
//!
//! All solvers and samplers are written against [`Real`], which is
//! implemented for `f32` and `f64`. The dense eigensolver backend
//! additionally needs `faer`'s field trait, so it is folded into the bound.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + faer::traits::RealField
{
    /// Lossy conversion from `f64`; exact for `f64` itself.
    #[inline]
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn of_usize(x: usize) -> Self {
        <Self as FromPrimitive>::from_usize(x).expect("usize is representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex number over a [`Real`] scalar.
pub type C<T> = Complex<T>;

/// Neumaier-compensated accumulator for real sums.
#[derive(Debug, Clone, Copy)]
pub struct CompensatedSum<T> {
    sum: T,
    carry: T,
}

impl<T: Real> Default for CompensatedSum<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> CompensatedSum<T> {
    pub fn new() -> Self {
        Self {
            sum: T::zero(),
            carry: T::zero(),
        }
    }

    #[inline]
    pub fn add(&mut self, x: T) {
        let t = self.sum + x;
        if Float::abs(self.sum) >= Float::abs(x) {
            self.carry = self.carry + ((self.sum - t) + x);
        } else {
            self.carry = self.carry + ((x - t) + self.sum);
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> T {
        self.sum + self.carry
    }
}

/// Compensated accumulator for complex sums (independent real/imaginary parts).
#[derive(Debug, Clone, Copy)]
pub struct CompensatedComplexSum<T> {
    re: CompensatedSum<T>,
    im: CompensatedSum<T>,
}

impl<T: Real> Default for CompensatedComplexSum<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> CompensatedComplexSum<T> {
    pub fn new() -> Self {
        Self {
            re: CompensatedSum::new(),
            im: CompensatedSum::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, x: C<T>) {
        self.re.add(x.re);
        self.im.add(x.im);
    }

    #[inline]
    pub fn value(&self) -> C<T> {
        Complex::new(self.re.value(), self.im.value())
    }
}

/// Stieltjes transform of the semicircle law of variance `sigma2`:
/// `m(z) = (-z + sqrt(z^2 - 4 sigma2)) / (2 sigma2)`, branch in the upper half-plane.
pub fn semicircle_stieltjes<T: Real>(z: C<T>, sigma2: T) -> C<T> {
    let two = T::of(2.0);
    let four = T::of(4.0);
    let disc = z * z - Complex::new(four * sigma2, T::zero());
    // sqrt(z^2 - 4) ~ z at infinity; pick the branch with Im m > 0.
    let s = disc.sqrt();
    let a = (-z + s) / (two * sigma2);
    let b = (-z - s) / (two * sigma2);
    if a.im > b.im {
        a
    } else {
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = CompensatedSum::<f64>::new();
        acc.add(1.0);
        for _ in 0..10_000 {
            acc.add(1e-16);
        }
        acc.add(-1.0);
        assert!((acc.value() - 1e-12).abs() < 1e-20);
    }

    #[test]
    fn semicircle_at_2i() {
        let m = semicircle_stieltjes(Complex::new(0.0f64, 2.0), 1.0);
        assert!((m - Complex::new(0.0, 2f64.sqrt() - 1.0)).norm() < 1e-15);
        // satisfies m^2 + z m + 1 = 0
        let z = Complex::new(0.3f64, 1e-3);
        let m = semicircle_stieltjes(z, 1.0);
        assert!((m * m + z * m + 1.0).norm() < 1e-12);
        assert!(m.im > 0.0);
    }

    #[test]
    fn works_for_f32() {
        let m = semicircle_stieltjes(Complex::new(0.0f32, 2.0), 1.0);
        assert!((m.im - (2f32.sqrt() - 1.0)).abs() < 1e-6);
    }
}
