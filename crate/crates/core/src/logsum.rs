//! Log-domain arithmetic for sums whose terms overflow `f64`.
//!
//! The weighted sums in this crate carry factors like `exp(rho^3 * phi(lambda))`
//! with exponents in the thousands, far past the ~709 limit of `f64::exp`.
//! [`LogSum`] stores a nonnegative real by its natural logarithm and
//! accumulates sums with the usual log-add-exp trick, so a value is lost to
//! infinity only when its *logarithm* leaves the double range.

use serde::Serialize;

/// `ln(e^a + e^b)` without overflowing the intermediate exponentials.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// A nonnegative real number represented by its natural logarithm.
///
/// `ln = -inf` encodes exact zero; `ln = +inf` encodes "infinite at working
/// precision" (an individual weight whose logarithm already overflowed).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogSum {
    ln: f64,
}

impl LogSum {
    pub const ZERO: LogSum = LogSum {
        ln: f64::NEG_INFINITY,
    };

    /// Wraps a value already in log form.
    pub fn from_ln(ln: f64) -> Self {
        LogSum { ln }
    }

    /// Lifts a plain nonnegative value.
    pub fn from_value(v: f64) -> Self {
        debug_assert!(v >= 0.0 || v.is_nan());
        LogSum { ln: v.ln() }
    }

    pub fn ln(self) -> f64 {
        self.ln
    }

    /// The plain value; saturates to `+inf` once `ln` exceeds ~709.
    pub fn value(self) -> f64 {
        self.ln.exp()
    }

    pub fn is_zero(self) -> bool {
        self.ln == f64::NEG_INFINITY
    }

    /// True when the logarithm itself is a finite double (or the value is 0),
    /// i.e. the value is representable in (mantissa, exponent) form.
    pub fn is_representable(self) -> bool {
        self.ln.is_finite() || self.is_zero()
    }

    /// Adds a term given by its natural logarithm.
    #[inline]
    pub fn add_ln_term(&mut self, ln_term: f64) {
        self.ln = log_add_exp(self.ln, ln_term);
    }

    /// Multiplies by a positive factor given in log form.
    pub fn scale_ln(self, ln_factor: f64) -> Self {
        if self.is_zero() {
            self
        } else {
            LogSum {
                ln: self.ln + ln_factor,
            }
        }
    }

    /// `self <= bound` for a plain nonnegative bound, compared in log domain.
    pub fn at_most(self, bound: f64) -> bool {
        self.ln <= bound.ln()
    }

    /// Decimal scientific form `mantissa * 10^exp10` with `1 <= mantissa < 10`.
    pub fn decimal(self) -> Decimal {
        if self.is_zero() {
            return Decimal::Zero;
        }
        // floor(ln / ln 10) must be an exact integer in f64; anything bigger
        // is reported as infinite at working precision.
        let t = self.ln / std::f64::consts::LN_10;
        if !t.is_finite() || t.abs() >= 1e15 {
            return Decimal::Infinite;
        }
        let mut exp10 = t.floor() as i64;
        let mut mantissa = (self.ln - (exp10 as f64) * std::f64::consts::LN_10).exp();
        if mantissa >= 10.0 {
            mantissa /= 10.0;
            exp10 += 1;
        }
        Decimal::Finite { mantissa, exp10 }
    }
}

/// Decimal rendering of a [`LogSum`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decimal {
    Zero,
    Finite { mantissa: f64, exp10: i64 },
    /// The logarithm itself left working precision.
    Infinite,
}

impl std::fmt::Display for Decimal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Decimal::Zero => write!(f, "0"),
            Decimal::Finite { mantissa, exp10 } => write!(f, "{mantissa:.12}e{exp10}"),
            Decimal::Infinite => write!(f, "inf (beyond working precision)"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log_add_exp_matches_naive_for_small_terms() {
        let a: f64 = 0.3;
        let b: f64 = 2.7;
        let direct = (a.exp() + b.exp()).ln();
        assert_relative_eq!(log_add_exp(a, b), direct, max_relative = 1e-15);
        assert_relative_eq!(log_add_exp(b, a), direct, max_relative = 1e-15);
    }

    #[test]
    fn zero_is_absorbing_identity() {
        let mut s = LogSum::ZERO;
        assert!(s.is_zero());
        assert_eq!(s.value(), 0.0);
        s.add_ln_term(1.5);
        assert_relative_eq!(s.ln(), 1.5);
    }

    #[test]
    fn sum_survives_huge_exponents() {
        let mut s = LogSum::ZERO;
        // Terms with exponents around 1e4: each would overflow f64 on its own.
        for k in 0..100 {
            s.add_ln_term(10_000.0 + k as f64);
        }
        assert!(s.is_representable());
        assert!(!s.value().is_finite()); // plain f64 overflows, ln does not
        match s.decimal() {
            Decimal::Finite { mantissa, exp10 } => {
                assert!((1.0..10.0).contains(&mantissa));
                // ln(sum) = 10099 + ln(sum of e^{-j}) ~ 10099.459
                assert_eq!(exp10, (s.ln() / std::f64::consts::LN_10).floor() as i64);
            }
            other => panic!("expected finite decimal, got {other:?}"),
        }
    }

    #[test]
    fn decimal_round_trips_moderate_values() {
        let s = LogSum::from_value(12345.678);
        match s.decimal() {
            Decimal::Finite { mantissa, exp10 } => {
                assert_eq!(exp10, 4);
                assert_relative_eq!(mantissa, 1.2345678, max_relative = 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn comparison_against_plain_bound() {
        let s = LogSum::from_value(3.0);
        assert!(s.at_most(3.0));
        assert!(s.at_most(3.5));
        assert!(!s.at_most(2.9));
        assert!(LogSum::ZERO.at_most(0.0));
    }
}
