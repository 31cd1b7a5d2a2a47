//! Nonnegative extended values: exact rationals plus a top element `inf`.

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArithError {
    #[error("0 * inf is undefined")]
    ZeroTimesInfinity,
    #[error("negative value {0} where a distance was expected")]
    Negative(String),
}

/// A value in `[0, inf]`. `Fin` always holds a nonnegative scalar.
///
/// The derived order places every finite value below `Inf`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExtValue<S> {
    Fin(S),
    Inf,
}

impl<S: Scalar> ExtValue<S> {
    pub fn zero() -> Self {
        ExtValue::Fin(S::zero())
    }

    pub fn one() -> Self {
        ExtValue::Fin(S::one())
    }

    /// Wraps a nonnegative scalar.
    pub fn new(value: S) -> Result<Self, ArithError> {
        if value.is_negative() {
            Err(ArithError::Negative(value.to_string()))
        } else {
            Ok(ExtValue::Fin(value))
        }
    }

    /// Wraps a scalar the caller knows is nonnegative.
    pub(crate) fn fin(value: S) -> Self {
        debug_assert!(!value.is_negative(), "negative distance {value}");
        ExtValue::Fin(value)
    }

    pub fn ratio(numer: i64, denom: i64) -> Self {
        Self::fin(S::ratio(numer, denom))
    }

    pub fn is_inf(&self) -> bool {
        matches!(self, ExtValue::Inf)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ExtValue::Fin(v) if v.is_zero())
    }

    pub fn finite(&self) -> Option<&S> {
        match self {
            ExtValue::Fin(v) => Some(v),
            ExtValue::Inf => None,
        }
    }

    pub fn into_finite(self) -> Option<S> {
        match self {
            ExtValue::Fin(v) => Some(v),
            ExtValue::Inf => None,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        match (self, other) {
            (ExtValue::Fin(a), ExtValue::Fin(b)) => ExtValue::Fin(a.clone() + b.clone()),
            _ => ExtValue::Inf,
        }
    }

    /// `factor * self` for a nonnegative factor. `0 * inf` is an error.
    pub fn scale(&self, factor: &S) -> Result<Self, ArithError> {
        if factor.is_negative() {
            return Err(ArithError::Negative(factor.to_string()));
        }
        match self {
            ExtValue::Fin(v) => Ok(ExtValue::Fin(factor.clone() * v.clone())),
            ExtValue::Inf if factor.is_zero() => Err(ArithError::ZeroTimesInfinity),
            ExtValue::Inf => Ok(ExtValue::Inf),
        }
    }

    pub fn max(self, other: Self) -> Self {
        std::cmp::max(self, other)
    }

    pub fn min(self, other: Self) -> Self {
        std::cmp::min(self, other)
    }

    /// `min(self, 1)`.
    pub fn truncate(self) -> Self {
        self.min(Self::one())
    }

    /// Absolute difference of two finite values; `None` if either is infinite.
    pub fn abs_diff(&self, other: &Self) -> Option<S> {
        let (a, b) = (self.finite()?, other.finite()?);
        Some((a.clone() - b.clone()).abs())
    }

    /// Supremum of a sequence; the empty supremum is 0.
    pub fn sup<I: IntoIterator<Item = Self>>(values: I) -> Self {
        values.into_iter().fold(Self::zero(), Self::max)
    }
}

impl<S: Scalar> PartialEq<S> for ExtValue<S> {
    fn eq(&self, other: &S) -> bool {
        matches!(self, ExtValue::Fin(v) if v == other)
    }
}

impl<S: Scalar> PartialOrd<S> for ExtValue<S> {
    fn partial_cmp(&self, other: &S) -> Option<Ordering> {
        Some(match self {
            ExtValue::Fin(v) => v.cmp(other),
            ExtValue::Inf => Ordering::Greater,
        })
    }
}

impl<S: Scalar> From<S> for ExtValue<S> {
    /// Panics on negative input; use [`ExtValue::new`] for unchecked data.
    fn from(value: S) -> Self {
        ExtValue::new(value).expect("distance must be nonnegative")
    }
}

impl<S: fmt::Display> fmt::Display for ExtValue<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtValue::Fin(v) => write!(f, "{v}"),
            ExtValue::Inf => f.write_str("inf"),
        }
    }
}

/// Parses `inf` or an exact nonnegative rational.
pub fn parse_ext<S: Scalar>(text: &str) -> Option<ExtValue<S>> {
    let text = text.trim();
    if text == "inf" {
        return Some(ExtValue::Inf);
    }
    S::parse_rational(text).and_then(|v| ExtValue::new(v).ok())
}

/// Sum of finitely many extended values.
pub fn ext_sum<S: Scalar, I: IntoIterator<Item = ExtValue<S>>>(values: I) -> ExtValue<S> {
    values
        .into_iter()
        .fold(ExtValue::zero(), |acc, v| acc.add(&v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use proptest::prelude::*;

    type E = ExtValue<BigRational>;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::ratio(n, d)
    }

    #[test]
    fn infinity_absorbs_addition() {
        assert_eq!(E::ratio(1, 2).add(&E::Inf), E::Inf);
        assert_eq!(E::Inf.add(&E::zero()), E::Inf);
        assert_eq!(E::ratio(1, 2).add(&E::ratio(1, 3)), E::ratio(5, 6));
    }

    #[test]
    fn zero_times_infinity_is_rejected() {
        assert_eq!(E::Inf.scale(&r(0, 1)), Err(ArithError::ZeroTimesInfinity));
        assert_eq!(E::Inf.scale(&r(1, 2)), Ok(E::Inf));
        assert_eq!(E::zero().scale(&r(0, 1)), Ok(E::zero()));
    }

    #[test]
    fn order_has_infinity_on_top() {
        assert!(E::ratio(1000, 1) < E::Inf);
        assert!(E::ratio(1, 3) < E::ratio(1, 2));
        assert_eq!(E::sup([E::ratio(1, 3), E::Inf, E::zero()]), E::Inf);
        assert_eq!(E::sup(std::iter::empty()), E::zero());
        assert_eq!(E::Inf.truncate(), E::one());
    }

    #[test]
    fn parse_and_display() {
        assert_eq!(parse_ext::<BigRational>("inf"), Some(E::Inf));
        assert_eq!(parse_ext::<BigRational>("3/6"), Some(E::ratio(1, 2)));
        assert_eq!(parse_ext::<BigRational>("-1"), None);
        assert_eq!(E::ratio(2, 4).to_string(), "1/2");
        assert_eq!(E::ratio(4, 2).to_string(), "2");
        assert_eq!(E::Inf.to_string(), "inf");
    }

    #[test]
    fn negative_values_are_rejected() {
        assert!(E::new(r(-1, 2)).is_err());
        assert!(E::ratio(1, 2).scale(&r(-1, 1)).is_err());
    }

    proptest! {
        #[test]
        fn scaling_distributes_over_addition(a in 0i64..50, b in 0i64..50, c in 1i64..20, d in 1i64..20) {
            let x = E::ratio(a, d);
            let y = E::ratio(b, d);
            let k = r(c, 7);
            prop_assert_eq!(x.add(&y).scale(&k).unwrap(), x.scale(&k).unwrap().add(&y.scale(&k).unwrap()));
        }
    }
}
