//! Log-space arithmetic for quantities carrying Carleman weights.
//!
//! The weights `exp(-2 s eta)` sit far below the smallest positive `f64` for
//! every admissible parameter choice, and neighbouring grid nodes can differ by
//! factors like `exp(-1e4)`. Two representations keep these quantities usable:
//!
//! * [`LogScalar`] stores a nonnegative integral as `exp(shift + ln_rel)`. The
//!   shift is shared by every weighted term built from the same weight set, so
//!   ratios of such terms never subtract two huge logarithms.
//! * [`ScaledField`] stores a nodal field as `mant[i] * exp(log[i])` so that
//!   finite-difference stencils can be applied to `exp(-s eta) q` without
//!   underflow.

use std::f64::consts::LN_2;
use std::fmt;

/// `ln(sum_i exp(x_i))`, returning `-inf` for an empty or all-`-inf` input.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let terms: Vec<f64> = terms.into_iter().collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = terms.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// A nonnegative scalar `2^pow2 exp(shift + ln_rel)`.
///
/// `pow2` absorbs exact power-of-two rescalings of the integrand, so scaling a
/// field by 2 changes a norm by exactly `pow2 += 2` and leaves ratios of
/// equally scaled terms bitwise unchanged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogScalar {
    shift: f64,
    ln_rel: f64,
    pow2: i32,
}

impl LogScalar {
    pub const ZERO: LogScalar = LogScalar {
        shift: 0.0,
        ln_rel: f64::NEG_INFINITY,
        pow2: 0,
    };

    pub fn new(shift: f64, ln_rel: f64) -> Self {
        LogScalar {
            shift,
            ln_rel,
            pow2: 0,
        }
    }

    /// Wraps a plain nonnegative value (shift 0).
    pub fn from_value(value: f64) -> Self {
        debug_assert!(value >= 0.0 || value.is_nan());
        LogScalar::new(0.0, value.ln())
    }

    /// Multiplies by `2^k` exactly.
    pub fn with_pow2(self, k: i32) -> Self {
        LogScalar {
            pow2: self.pow2 + k,
            ..self
        }
    }

    pub fn pow2(&self) -> i32 {
        self.pow2
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn ln_rel(&self) -> f64 {
        self.ln_rel
    }

    pub fn is_zero(&self) -> bool {
        self.ln_rel == f64::NEG_INFINITY
    }

    pub fn is_finite(&self) -> bool {
        !self.ln_rel.is_nan() && self.ln_rel != f64::INFINITY && self.shift.is_finite()
    }

    /// Natural logarithm of the value.
    pub fn ln(&self) -> f64 {
        if self.is_zero() {
            f64::NEG_INFINITY
        } else {
            self.shift + self.pow2 as f64 * LN_2 + self.ln_rel
        }
    }

    /// The value itself; underflows to 0 for deeply weighted terms.
    pub fn value(&self) -> f64 {
        self.ln().exp()
    }

    /// Multiplies by a nonnegative factor.
    pub fn scale(self, factor: f64) -> Self {
        debug_assert!(factor >= 0.0);
        LogScalar {
            ln_rel: self.ln_rel + factor.ln(),
            ..self
        }
    }

    pub fn add(self, other: LogScalar) -> Self {
        if self.is_zero() {
            return other;
        }
        if other.is_zero() {
            return self;
        }
        if self.shift == other.shift && self.pow2 == other.pow2 {
            return LogScalar {
                ln_rel: log_sum_exp([self.ln_rel, other.ln_rel]),
                ..self
            };
        }
        // rebase onto the dominant term's shift
        let (big, small) = if self.ln() >= other.ln() {
            (self, other)
        } else {
            (other, self)
        };
        let rel = small.ln() - big.shift - big.pow2 as f64 * LN_2;
        LogScalar {
            ln_rel: log_sum_exp([big.ln_rel, rel]),
            ..big
        }
    }

    pub fn sum<I: IntoIterator<Item = LogScalar>>(items: I) -> Self {
        items.into_iter().fold(LogScalar::ZERO, LogScalar::add)
    }

    /// `ln(self / other)`; `-inf` when `self` is zero (including 0/0).
    pub fn ln_ratio(&self, other: &LogScalar) -> f64 {
        if self.is_zero() {
            return f64::NEG_INFINITY;
        }
        if other.is_zero() {
            return f64::INFINITY;
        }
        (self.shift - other.shift)
            + (self.pow2 - other.pow2) as f64 * LN_2
            + (self.ln_rel - other.ln_rel)
    }

    /// `self / other`, with 0/0 reported as 0.
    pub fn ratio(&self, other: &LogScalar) -> f64 {
        self.ln_ratio(other).exp()
    }
}

impl fmt::Display for LogScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exp({:.6})", self.ln())
    }
}

/// Binary exponent `e` with `2^e <= max |v| < 2^(e+1)`, or 0 for an all-zero input.
pub fn pow2_exponent<'a, I: IntoIterator<Item = &'a f64>>(values: I) -> i32 {
    let max = values.into_iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 || !max.is_finite() {
        0
    } else {
        max.log2().floor() as i32
    }
}

/// `v * 2^-e`, exact for normal floats.
pub fn scale_pow2(values: &[f64], e: i32) -> Vec<f64> {
    let f = 2f64.powi(-e);
    values.iter().map(|v| v * f).collect()
}

/// A single value `mant * exp(log)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledValue {
    pub mant: f64,
    pub log: f64,
}

impl ScaledValue {
    pub const ZERO: ScaledValue = ScaledValue {
        mant: 0.0,
        log: f64::NEG_INFINITY,
    };

    pub fn new(mant: f64, log: f64) -> Self {
        if mant == 0.0 || log == f64::NEG_INFINITY {
            ScaledValue::ZERO
        } else {
            ScaledValue { mant, log }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.mant == 0.0
    }

    pub fn value(&self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            self.mant * self.log.exp()
        }
    }

    /// `ln |v|^2`.
    pub fn ln_sq(&self) -> f64 {
        if self.is_zero() {
            f64::NEG_INFINITY
        } else {
            2.0 * (self.mant.abs().ln() + self.log)
        }
    }

    pub fn mul(self, factor: f64) -> Self {
        ScaledValue::new(self.mant * factor, self.log)
    }

    /// Multiplies by two values, one of which may be a scaled factor.
    pub fn mul_scaled(self, other: ScaledValue) -> Self {
        ScaledValue::new(self.mant * other.mant, self.log + other.log)
    }

    /// Weighted sum `sum_j a_j v_j`, rescaled to the largest nonzero input scale.
    pub fn combine<I: IntoIterator<Item = (f64, ScaledValue)>>(terms: I) -> Self {
        let terms: Vec<(f64, ScaledValue)> = terms
            .into_iter()
            .filter(|(a, v)| *a != 0.0 && !v.is_zero())
            .collect();
        let top = terms
            .iter()
            .map(|(_, v)| v.log)
            .fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return ScaledValue::ZERO;
        }
        let mant: f64 = terms
            .iter()
            .map(|(a, v)| a * v.mant * (v.log - top).exp())
            .sum();
        ScaledValue::new(mant, top)
    }
}

/// Nodal field stored as `mant[i] * exp(log[i])`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledField {
    pub values: Vec<ScaledValue>,
}

impl ScaledField {
    pub fn zeros(len: usize) -> Self {
        ScaledField {
            values: vec![ScaledValue::ZERO; len],
        }
    }

    /// `exp(log[i]) * field[i]`.
    pub fn from_parts(field: &[f64], log: &[f64]) -> Self {
        assert_eq!(field.len(), log.len());
        ScaledField {
            values: field
                .iter()
                .zip(log)
                .map(|(&m, &l)| ScaledValue::new(m, l))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> ScaledValue {
        self.values[i]
    }

    /// Values as plain floats; deeply scaled entries underflow to 0.
    pub fn to_plain(&self) -> Vec<f64> {
        self.values.iter().map(ScaledValue::value).collect()
    }
}
