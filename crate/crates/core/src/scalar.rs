//! Exact scalar types.
//!
//! Every distance, weight and discount factor in the engine is a value of a
//! type implementing [`Scalar`]. The trait is implemented for the rational
//! types of `num-rational`, so callers can choose between arbitrary precision
//! ([`num_rational::BigRational`]) and fixed-width ratios such as
//! [`num_rational::Rational64`] when inputs are known to stay small.

use std::fmt::{Debug, Display};
use std::hash::Hash;
use std::str::FromStr;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{Num, Signed};

/// An exact ordered field element.
pub trait Scalar:
    Clone + Ord + Hash + Debug + Display + FromStr + Num + Signed + Send + Sync + 'static
{
    /// The fraction `numer / denom`. Panics if `denom` is zero.
    fn ratio(numer: i64, denom: i64) -> Self;

    fn from_int(n: i64) -> Self {
        Self::ratio(n, 1)
    }

    /// Parses `INT` or `INT/INT`, ignoring surrounding whitespace.
    fn parse_rational(text: &str) -> Option<Self> {
        let text = text.trim();
        match text.split_once('/') {
            Some((n, d)) => {
                let n = n.trim().parse::<Self>().ok()?;
                let d = d.trim().parse::<Self>().ok()?;
                if d.is_zero() {
                    None
                } else {
                    Some(n / d)
                }
            }
            None => text.parse::<Self>().ok(),
        }
    }

    /// True for values in the closed unit interval.
    fn in_unit_interval(&self) -> bool {
        !self.is_negative() && *self <= Self::one()
    }
}

impl<T> Scalar for Ratio<T>
where
    T: Integer
        + Signed
        + Clone
        + Hash
        + Debug
        + Display
        + FromStr
        + From<i64>
        + Send
        + Sync
        + 'static,
{
    fn ratio(numer: i64, denom: i64) -> Self {
        Ratio::new(T::from(numer), T::from(denom))
    }
}
