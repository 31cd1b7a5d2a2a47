//! Number rendering: exact fractions by default, decimals on request.

use num_bigint::BigInt;
use num_traits::{Signed, Zero};

use qeffects::{ExtValue, Rational};

pub struct Render {
    pub decimal: Option<u32>,
}

impl Render {
    pub fn num(&self, q: &Rational) -> String {
        match self.decimal {
            None => q.to_string(),
            Some(places) => decimal(q, places),
        }
    }

    pub fn ext(&self, v: &ExtValue) -> String {
        match v {
            ExtValue::Inf => "inf".into(),
            ExtValue::Fin(q) => self.num(q),
        }
    }
}

/// `q` with `places` digits after the point, rounding half away from zero.
pub fn decimal(q: &Rational, places: u32) -> String {
    let scale = BigInt::from(10u32).pow(places);
    let scaled = q.abs() * Rational::from_integer(scale.clone());
    let mut digits = scaled.floor().to_integer();
    let frac = scaled.fract();
    if frac * Rational::from_integer(2.into()) >= Rational::from_integer(1.into()) {
        digits += 1;
    }
    let int = &digits / &scale;
    let rest = &digits % &scale;
    let sign = if q.is_negative() && !digits.is_zero() {
        "-"
    } else {
        ""
    };
    if places == 0 {
        format!("{sign}{int}")
    } else {
        format!(
            "{sign}{int}.{:0>width$}",
            rest.to_string(),
            width = places as usize
        )
    }
}
