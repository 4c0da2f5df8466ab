//! Numeric abstraction for the throughput math.
//!
//! All cap and utilization arithmetic is written once, generically, and
//! instantiated with `f64` for the fast path, `f32` where callers want it,
//! and [`num_rational::BigRational`] for exact cross-checks. The exact
//! instantiation is what lets the evaluator verify its floating minimum
//! against rational arithmetic.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, ToPrimitive};

use crate::model::Rational;

/// Scalar type the evaluation kernel is generic over.
pub trait Scalar: Num + FromPrimitive + Clone + PartialOrd + std::fmt::Debug {
    /// Exact-or-nearest conversion from a file rational.
    fn from_ratio(r: &Rational) -> Self;

    /// Lossy view for reporting.
    fn approx(&self) -> f64;

    /// Tie test used when collecting binding constraints. Floating scalars
    /// compare within `rel_tol` relative; exact scalars compare exactly.
    fn tie_eq(&self, other: &Self, rel_tol: f64) -> bool;
}

impl Scalar for f64 {
    fn from_ratio(r: &Rational) -> Self {
        r.num() as f64 / r.den() as f64
    }

    fn approx(&self) -> f64 {
        *self
    }

    fn tie_eq(&self, other: &Self, rel_tol: f64) -> bool {
        rel_close(*self, *other, rel_tol)
    }
}

impl Scalar for f32 {
    fn from_ratio(r: &Rational) -> Self {
        r.num() as f32 / r.den() as f32
    }

    fn approx(&self) -> f64 {
        f64::from(*self)
    }

    fn tie_eq(&self, other: &Self, rel_tol: f64) -> bool {
        rel_close(f64::from(*self), f64::from(*other), rel_tol)
    }
}

impl Scalar for BigRational {
    fn from_ratio(r: &Rational) -> Self {
        BigRational::new(BigInt::from(r.num()), BigInt::from(r.den()))
    }

    fn approx(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn tie_eq(&self, other: &Self, _rel_tol: f64) -> bool {
        self == other
    }
}

/// Relative closeness on finite floats: |a - b| <= tol * max(|a|, |b|).
pub fn rel_close(a: f64, b: f64, rel_tol: f64) -> bool {
    if a == b {
        return true;
    }
    let scale = a.abs().max(b.abs());
    (a - b).abs() <= rel_tol * scale
}
