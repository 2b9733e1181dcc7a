//! Log-domain number types for bounds that do not fit in a double.
//!
//! A time constant such as `c_T = c*(1/T+1)e^{c*T²}` has `ln c_T ≈ c*T²`, which is about
//! `1e80` for typical inputs. Any `O(1)` correction (the `ln|y|` or `ln ψ` of a bound) is
//! lost when added to that in plain `f64`, so the double-double pair keeps it in `lo`.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::Serialize;

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2` after normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

impl DoubleDouble {
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };

    pub fn from_f64(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    /// Exact product of two doubles.
    pub fn from_product(a: f64, b: f64) -> Self {
        let hi = a * b;
        if !hi.is_finite() {
            return Self { hi, lo: 0.0 };
        }
        Self {
            hi,
            lo: a.mul_add(b, -hi),
        }
    }

    pub fn add_f64(self, x: f64) -> Self {
        self + Self::from_f64(x)
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }

    /// Relative difference `|a - b| / max(|a|, |b|)` evaluated with the low parts kept.
    pub fn relative_difference(self, other: Self) -> f64 {
        let d = (self - other).to_f64().abs();
        let scale = self.to_f64().abs().max(other.to_f64().abs());
        if scale == 0.0 {
            d
        } else {
            d / scale
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;

    fn add(self, other: Self) -> Self {
        if !self.hi.is_finite() || !other.hi.is_finite() {
            return Self::from_f64(self.hi + other.hi);
        }
        let (s, e) = two_sum(self.hi, other.hi);
        let e = e + self.lo + other.lo;
        let (hi, lo) = two_sum(s, e);
        Self { hi, lo }
    }
}

impl Neg for DoubleDouble {
    type Output = Self;

    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;

    fn sub(self, other: Self) -> Self {
        self + -other
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            ord => Some(ord),
        }
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == 0.0 {
            write!(f, "{:e}", self.hi)
        } else {
            write!(f, "{:e} {:+e}", self.hi, self.lo)
        }
    }
}

/// A positive quantity stored as its natural log.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct LogValue {
    pub ln: DoubleDouble,
}

impl LogValue {
    pub fn from_ln(ln: DoubleDouble) -> Self {
        Self { ln }
    }

    pub fn from_value(x: f64) -> Self {
        Self {
            ln: DoubleDouble::from_f64(x.ln()),
        }
    }

    /// Linear value; `inf` once it exceeds the double range.
    pub fn value(self) -> f64 {
        self.ln.to_f64().exp()
    }

    pub fn ln_f64(self) -> f64 {
        self.ln.to_f64()
    }
}

/// A probability in `[0, 1)` stored as `ln(-ln p)`.
///
/// Larger stored values mean smaller probabilities; the [`PartialOrd`] impl orders by
/// probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogProbability {
    pub log_neg_log: DoubleDouble,
}

impl LogProbability {
    /// From `ln p`, which must be negative.
    pub fn from_log(log_p: f64) -> Self {
        debug_assert!(log_p < 0.0);
        Self {
            log_neg_log: DoubleDouble::from_f64((-log_p).ln()),
        }
    }

    /// From the bound `ln p = -exp(e)`.
    pub fn from_log_neg_log(e: DoubleDouble) -> Self {
        Self { log_neg_log: e }
    }

    /// `ln p` as a double: `-inf` when it does not fit.
    pub fn log_value(&self) -> f64 {
        -self.log_neg_log.to_f64().exp()
    }

    /// The probability itself, usually `0.0` after underflow.
    pub fn probability(&self) -> f64 {
        self.log_value().exp()
    }

    /// True when the probability `p` is strictly larger than this bound.
    pub fn exceeded_by(&self, p: f64) -> bool {
        if p.is_nan() || p <= 0.0 {
            return false;
        }
        if p >= 1.0 {
            return true;
        }
        let lhs = (-p.ln()).ln();
        DoubleDouble::from_f64(lhs) < self.log_neg_log
    }
}

impl PartialOrd for LogProbability {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        other.log_neg_log.partial_cmp(&self.log_neg_log)
    }
}

impl fmt::Display for LogProbability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lv = self.log_value();
        if lv.is_finite() {
            write!(f, "ln p = {lv:e}")
        } else {
            write!(f, "ln p = -exp({})", self.log_neg_log)
        }
    }
}
