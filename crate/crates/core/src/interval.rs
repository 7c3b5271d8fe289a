//! Closed real intervals.
//!
//! An [`Interval`] bounds a quantity whose exact value is unknown because a
//! sensor did not transmit: the estimator only knows the value lies within
//! the trigger threshold of its prediction. Bounds may be infinite, which is
//! how an unconstrained threshold propagates through arithmetic.
//!
//! No outward rounding is performed.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum IntervalError {
    #[error("interval radius must be non-negative, got {0}")]
    NegativeRadius(f64),
    #[error("interval bounds are not ordered: [{lo}, {hi}]")]
    Unordered { lo: f64, hi: f64 },
    #[error("interval bound is NaN")]
    NaN,
}

/// A closed interval `[lo, hi]` with `lo <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, IntervalError> {
        if lo.is_nan() || hi.is_nan() {
            return Err(IntervalError::NaN);
        }
        if lo > hi {
            return Err(IntervalError::Unordered { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// `[center - radius, center + radius]`.
    pub fn make(center: f64, radius: f64) -> Result<Self, IntervalError> {
        if radius.is_nan() || center.is_nan() {
            return Err(IntervalError::NaN);
        }
        if radius < 0.0 {
            return Err(IntervalError::NegativeRadius(radius));
        }
        Ok(Self { lo: center - radius, hi: center + radius })
    }

    /// The degenerate interval `[x, x]`.
    pub const fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub const fn lo(&self) -> f64 {
        self.lo
    }

    pub const fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// Smallest interval containing both operands.
    pub fn hull(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }

    /// `a * self`. For `a < 0` the bounds swap.
    pub fn scale(&self, a: f64) -> Interval {
        if a >= 0.0 {
            Interval { lo: mul_bound(a, self.lo), hi: mul_bound(a, self.hi) }
        } else {
            Interval { lo: mul_bound(a, self.hi), hi: mul_bound(a, self.lo) }
        }
    }

    /// Widens both sides by `r >= 0`.
    pub fn inflate(&self, r: f64) -> Interval {
        Interval { lo: self.lo - r, hi: self.hi + r }
    }

    /// Elementwise minimum of two intervals: the image of `min(x, y)`.
    pub fn min(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo.min(other.lo), hi: self.hi.min(other.hi) }
    }

    /// Elementwise maximum of two intervals: the image of `max(x, y)`.
    pub fn max(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo.max(other.lo), hi: self.hi.max(other.hi) }
    }
}

/// `scale(a, x)` as a free function.
pub fn scale(a: f64, x: Interval) -> Interval {
    x.scale(a)
}

// 0 * inf is taken as 0: a zero coefficient removes the term entirely.
fn mul_bound(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

impl Add for Interval {
    type Output = Interval;

    fn add(self, rhs: Interval) -> Interval {
        Interval { lo: self.lo + rhs.lo, hi: self.hi + rhs.hi }
    }
}

impl Sub for Interval {
    type Output = Interval;

    fn sub(self, rhs: Interval) -> Interval {
        Interval { lo: self.lo - rhs.hi, hi: self.hi - rhs.lo }
    }
}

impl Mul for Interval {
    type Output = Interval;

    fn mul(self, rhs: Interval) -> Interval {
        let s = [
            mul_bound(self.lo, rhs.lo),
            mul_bound(self.lo, rhs.hi),
            mul_bound(self.hi, rhs.lo),
            mul_bound(self.hi, rhs.hi),
        ];
        let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval { lo, hi }
    }
}

impl Neg for Interval {
    type Output = Interval;

    fn neg(self) -> Interval {
        Interval { lo: -self.hi, hi: -self.lo }
    }
}

impl Add<f64> for Interval {
    type Output = Interval;

    fn add(self, rhs: f64) -> Interval {
        self + Interval::point(rhs)
    }
}

impl Sub<f64> for Interval {
    type Output = Interval;

    fn sub(self, rhs: f64) -> Interval {
        self - Interval::point(rhs)
    }
}

impl From<f64> for Interval {
    fn from(x: f64) -> Self {
        Interval::point(x)
    }
}

impl TryFrom<(f64, f64)> for Interval {
    type Error = IntervalError;

    fn try_from((lo, hi): (f64, f64)) -> Result<Self, Self::Error> {
        Interval::new(lo, hi)
    }
}

impl From<Interval> for (f64, f64) {
    fn from(x: Interval) -> Self {
        (x.lo, x.hi)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}
