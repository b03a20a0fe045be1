//! Truncated formal power series in two coefficient modes: exact rationals
//! (arbitrary precision) and `f64`.
//!
//! The coefficient mode is part of the series type, so mixing modes in a
//! binary operation is a compile-time error rather than a runtime one.
//! Truncation order is explicit state: every binary operation returns the
//! minimum of the operand truncations, which keeps tail loss auditable.
//! Series are immutable after construction and all operations are pure, so
//! values can be shared freely across threads.

use num::{BigInt, BigRational, Signed, ToPrimitive, Zero};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Convolutions at or above this output length are computed in parallel,
/// one output index per task. Each index sums its products in the same
/// ascending order as the sequential path, so results are identical for
/// every thread count, in both coefficient modes.
const PAR_MUL_THRESHOLD: usize = 512;

/// Coefficient ring used by [`Series`].
pub trait Coeff: Clone + PartialEq + std::fmt::Debug + Send + Sync {
    fn zero() -> Self;
    fn one() -> Self;
    fn is_zero(&self) -> bool;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn from_u64(v: u64) -> Self;
    fn to_f64(&self) -> f64;
    /// Whether the value is admissible in a publicly exposed series
    /// (floats must be finite; exact rationals always are).
    fn is_admissible(&self) -> bool;
}

impl Coeff for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn from_u64(v: u64) -> Self {
        v as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn is_admissible(&self) -> bool {
        self.is_finite()
    }
}

impl Coeff for BigRational {
    fn zero() -> Self {
        num::zero()
    }
    fn one() -> Self {
        num::one()
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn from_u64(v: u64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }
    fn to_f64(&self) -> f64 {
        rat_to_f64(self)
    }
    fn is_admissible(&self) -> bool {
        true
    }
}

/// `f64` value of a big rational, robust to numerator/denominator far
/// beyond the `f64` range (both are rescaled by a common power of two
/// before the division).
pub fn rat_to_f64(r: &BigRational) -> f64 {
    let numer = r.numer();
    let denom = r.denom();
    if numer.is_zero() {
        return 0.0;
    }
    let nb = numer.bits() as i64;
    let db = denom.bits() as i64;
    // Shift so both operands fit comfortably in f64 (<= ~2^96 bits kept).
    let shift_n = (nb - 96).max(0);
    let shift_d = (db - 96).max(0);
    let n = (numer >> shift_n).to_f64().unwrap_or(f64::NAN);
    let d = (denom >> shift_d).to_f64().unwrap_or(f64::NAN);
    let e = (shift_n - shift_d) as i32;
    (n / d) * f64::powi(2.0, e)
}

/// Base-2 logarithm of a positive big rational, accurate to f64 precision
/// regardless of magnitude.
pub fn rat_log2(r: &BigRational) -> f64 {
    debug_assert!(r.is_positive());
    let f = |x: &BigInt| -> f64 {
        let b = x.bits() as i64;
        let shift = (b - 64).max(0);
        let top = (x >> shift).to_f64().expect("<= 64 bits");
        top.log2() + shift as f64
    };
    f(r.numer()) - f(r.denom())
}

/// A formal power series truncated at an inclusive order.
///
/// Invariant: `coeffs.len() == trunc + 1`; operations never read or write
/// past the truncation order.
#[derive(Clone, Debug, PartialEq)]
pub struct Series<C: Coeff> {
    coeffs: Vec<C>,
}

/// Exact-rational coefficient mode.
pub type ExactSeries = Series<BigRational>;
/// Double-precision coefficient mode.
pub type FloatSeries = Series<f64>;

impl<C: Coeff> Series<C> {
    /// Builds a series from coefficients `[c_0, ..., c_trunc]`.
    pub fn from_coeffs(coeffs: Vec<C>) -> Self {
        assert!(!coeffs.is_empty(), "a series has at least its constant term");
        assert!(
            coeffs.iter().all(Coeff::is_admissible),
            "series coefficients must be admissible (finite)"
        );
        Series { coeffs }
    }

    pub fn zero(trunc: usize) -> Self {
        Series { coeffs: vec![C::zero(); trunc + 1] }
    }

    pub fn constant(value: C, trunc: usize) -> Self {
        let mut coeffs = vec![C::zero(); trunc + 1];
        coeffs[0] = value;
        Series::from_coeffs(coeffs)
    }

    /// The monomial `value * z^n`.
    pub fn monomial(n: usize, value: C, trunc: usize) -> Self {
        assert!(n <= trunc, "monomial degree beyond truncation");
        let mut coeffs = vec![C::zero(); trunc + 1];
        coeffs[n] = value;
        Series::from_coeffs(coeffs)
    }

    /// Inclusive truncation order.
    pub fn trunc(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[C] {
        &self.coeffs
    }

    /// Coefficient of `z^n`. Panics past the truncation order: the tail is
    /// unknown, not zero.
    pub fn coeff(&self, n: usize) -> &C {
        assert!(n <= self.trunc(), "coefficient index {n} beyond truncation {}", self.trunc());
        &self.coeffs[n]
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(Coeff::is_zero)
    }

    /// Restriction to a smaller truncation order.
    pub fn truncated(&self, trunc: usize) -> Self {
        assert!(trunc <= self.trunc(), "cannot extend a series past its known coefficients");
        Series { coeffs: self.coeffs[..=trunc].to_vec() }
    }

    /// Coefficientwise sum, truncated at the finer of the two orders.
    pub fn add(&self, other: &Self) -> Self {
        let trunc = self.trunc().min(other.trunc());
        let coeffs = (0..=trunc).map(|i| self.coeffs[i].add(&other.coeffs[i])).collect();
        Series { coeffs }
    }

    /// Coefficientwise difference, truncated at the finer order.
    pub fn sub(&self, other: &Self) -> Self {
        let trunc = self.trunc().min(other.trunc());
        let coeffs = (0..=trunc).map(|i| self.coeffs[i].sub(&other.coeffs[i])).collect();
        Series { coeffs }
    }

    /// Cauchy product truncated at the finer order. Exact mode is bit-exact.
    pub fn mul(&self, other: &Self) -> Self {
        let trunc = self.trunc().min(other.trunc());
        let conv = |t: usize| -> C {
            let lo = t.saturating_sub(other.trunc());
            let hi = t.min(self.trunc());
            let mut acc = C::zero();
            for i in lo..=hi {
                let a = &self.coeffs[i];
                let b = &other.coeffs[t - i];
                if a.is_zero() || b.is_zero() {
                    continue;
                }
                acc = acc.add(&a.mul(b));
            }
            acc
        };
        let coeffs: Vec<C> = if trunc + 1 >= PAR_MUL_THRESHOLD {
            (0..=trunc).into_par_iter().map(conv).collect()
        } else {
            (0..=trunc).map(conv).collect()
        };
        Series { coeffs }
    }

    /// `self^e` by repeated squaring; `pow(a, 0)` is the constant 1.
    pub fn pow(&self, e: u64) -> Self {
        let mut result = Series::constant(C::one(), self.trunc());
        if e == 0 {
            return result;
        }
        let mut base = self.clone();
        let mut e = e;
        loop {
            if e & 1 == 1 {
                result = result.mul(&base);
            }
            e >>= 1;
            if e == 0 {
                break;
            }
            base = base.mul(&base);
        }
        result
    }

    /// Horner evaluation of `outer` at `inner`, truncated at the finer
    /// order. `inner` must have zero constant term, which makes every
    /// output coefficient a finite sum.
    pub fn compose(outer: &Self, inner: &Self) -> Result<Self> {
        if !inner.coeffs[0].is_zero() {
            return Err(Error::NonzeroConstantTerm);
        }
        let trunc = outer.trunc().min(inner.trunc());
        let mut acc = Series::constant(outer.coeffs[outer.trunc()].clone(), trunc);
        for j in (0..outer.trunc()).rev() {
            acc = acc.mul(inner);
            acc.coeffs[0] = acc.coeffs[0].add(&outer.coeffs[j]);
        }
        Ok(acc)
    }

    /// Horner evaluation of the truncated polynomial at a float point.
    /// Exact coefficients are converted to `f64` first.
    pub fn eval(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for c in self.coeffs.iter().rev() {
            acc = acc * t + c.to_f64();
        }
        acc
    }

    /// Formal derivative; the truncation order drops by one.
    pub fn derivative(&self) -> Self {
        if self.trunc() == 0 {
            return Series::zero(0);
        }
        let coeffs = (1..=self.trunc())
            .map(|n| self.coeffs[n].mul(&C::from_u64(n as u64)))
            .collect();
        Series { coeffs }
    }

    /// Multiplication by `z` at unchanged truncation order; the previous
    /// top coefficient falls off the end.
    pub fn shift_up(&self) -> Self {
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        coeffs.push(C::zero());
        coeffs.extend_from_slice(&self.coeffs[..self.trunc()]);
        Series { coeffs }
    }

    /// Converts coefficients to `f64`.
    pub fn to_float(&self) -> FloatSeries {
        Series { coeffs: self.coeffs.iter().map(Coeff::to_f64).collect() }
    }
}

impl ExactSeries {
    /// Convenience constructor from integer coefficients.
    pub fn from_integers(values: &[i64]) -> Self {
        Series::from_coeffs(
            values.iter().map(|&v| BigRational::from_integer(BigInt::from(v))).collect(),
        )
    }
}
