//! Decimal-exact unit scaling.
//!
//! Scaling is done by shifting the decimal exponent of the textual number and
//! parsing once, so "28 GHz" and "28e9 Hz" land on the same `f64` bit pattern,
//! and "+1000000000.0ns" equals "+1.0s".

use regex::Regex;
use std::sync::LazyLock;

static NUMBER_WITH_SUFFIX: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*([+-]?(?:\d+(?:\.\d*)?|\.\d+))(?:[eE]([+-]?\d+))?\s*(.*?)\s*$").unwrap()
});

/// A number split from its unit suffix, with the mantissa kept as text.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitQuantity<'a> {
    pub mantissa: &'a str,
    pub exponent: i32,
    pub suffix: &'a str,
}

impl SplitQuantity<'_> {
    pub fn is_negative(&self) -> bool {
        self.mantissa.starts_with('-') && self.value_scaled(0).is_some_and(|v| v != 0.0)
    }

    /// The value multiplied by `10^shift`, rounded once.
    pub fn value_scaled(&self, shift: i32) -> Option<f64> {
        format!("{}e{}", self.mantissa, self.exponent + shift)
            .parse()
            .ok()
    }
}

/// Splits `"28 GHz"` into mantissa `"28"`, exponent `0`, suffix `"GHz"`.
pub fn split_quantity(text: &str) -> Option<SplitQuantity<'_>> {
    let caps = NUMBER_WITH_SUFFIX.captures(text)?;
    let mantissa = caps.get(1)?.as_str();
    let exponent = match caps.get(2) {
        Some(e) => e.as_str().parse().ok()?,
        None => 0,
    };
    let suffix = caps.get(3).map_or("", |m| m.as_str());
    Some(SplitQuantity {
        mantissa,
        exponent,
        suffix,
    })
}

/// Power of ten for a frequency suffix (case-insensitive; an empty suffix is hertz).
pub fn frequency_exponent(suffix: &str) -> Option<i32> {
    match suffix.to_ascii_lowercase().as_str() {
        "" | "hz" => Some(0),
        "khz" => Some(3),
        "mhz" => Some(6),
        "ghz" => Some(9),
        "thz" => Some(12),
        _ => None,
    }
}

/// Power of ten for a time suffix (an empty suffix is seconds).
pub fn time_exponent(suffix: &str) -> Option<i32> {
    match suffix {
        "" | "s" | "sec" | "secs" | "second" | "seconds" => Some(0),
        "ms" | "msec" | "millisecond" | "milliseconds" => Some(-3),
        "us" | "µs" | "microsecond" | "microseconds" => Some(-6),
        "ns" | "nanosecond" | "nanoseconds" => Some(-9),
        "ps" => Some(-12),
        "fs" => Some(-15),
        _ => None,
    }
}

/// Engineering-notation literal with the shortest round-trip mantissa:
/// `2.8e10 -> "28e9"`, `2e8 -> "200e6"`, `3.5e9 -> "3.5e9"`.
pub fn engineering_literal(value: f64) -> String {
    if value == 0.0 || !value.is_finite() {
        return format!("{value}");
    }
    // `{:e}` yields the shortest digits that round-trip, e.g. "2.8e10".
    let sci = format!("{:e}", value.abs());
    let (mant, exp) = sci.split_once('e').expect("scientific rendering");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mant.chars().filter(|c| *c != '.').collect();
    // value = 0.d1d2d3... * 10^(exp+1)
    let eng_exp = exp.div_euclid(3) * 3;
    let int_len = (exp - eng_exp + 1) as usize;
    let mut int_part = String::new();
    let mut frac_part = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i < int_len {
            int_part.push(c);
        } else {
            frac_part.push(c);
        }
    }
    while int_part.len() < int_len {
        int_part.push('0');
    }
    let sign = if value < 0.0 { "-" } else { "" };
    if frac_part.is_empty() {
        format!("{sign}{int_part}e{eng_exp}")
    } else {
        format!("{sign}{int_part}.{frac_part}e{eng_exp}")
    }
}

/// Shortest round-trip decimal rendering (`10.0 -> "10"`, `0.005 -> "0.005"`).
pub fn plain_decimal(value: f64) -> String {
    format!("{value}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_suffix() {
        let q = split_quantity("28 GHz").unwrap();
        assert_eq!((q.mantissa, q.exponent, q.suffix), ("28", 0, "GHz"));
        let q = split_quantity("+1e+09ns").unwrap();
        assert_eq!((q.mantissa, q.exponent, q.suffix), ("+1", 9, "ns"));
        assert!(split_quantity("GHz").is_none());
    }

    #[test]
    fn scaling_is_decimal_exact() {
        let a = split_quantity("+1000000000.0ns").unwrap().value_scaled(-9).unwrap();
        let b = split_quantity("+1.0s").unwrap().value_scaled(0).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let a = split_quantity("2011800000ns").unwrap().value_scaled(-9).unwrap();
        assert_eq!(a, 2.0118);
    }

    #[test]
    fn engineering_literals() {
        assert_eq!(engineering_literal(2.8e10), "28e9");
        assert_eq!(engineering_literal(2.0e8), "200e6");
        assert_eq!(engineering_literal(3.5e9), "3.5e9");
        assert_eq!(engineering_literal(1.0e8), "100e6");
        assert_eq!(engineering_literal(24.25e9), "24.25e9");
        assert_eq!(engineering_literal(1.0), "1e0");
        assert_eq!(engineering_literal(0.5e9), "500e6");
        assert_eq!(engineering_literal(123_456.0), "123.456e3");
    }

    proptest::proptest! {
        #[test]
        fn engineering_literal_round_trips(v in 1.0f64..2.0e11) {
            let lit = engineering_literal(v);
            let back: f64 = lit.parse().unwrap();
            proptest::prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
