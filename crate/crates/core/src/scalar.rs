//! Two-kind scalar model: arbitrary-precision rationals for exact data,
//! `f64` for solver-facing data. All algebraic identities in this crate are
//! asserted only on the exact kind; float values always carry tolerances.

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use std::fmt;
use std::ops::{Div, Neg, Sub};

pub type Rat = num_rational::BigRational;

/// Coefficient scalar for biforms and certificates.
pub trait Coeff:
    Clone
    + PartialEq
    + fmt::Debug
    + Send
    + Sync
    + Zero
    + One
    + Neg<Output = Self>
    + Sub<Output = Self>
    + Div<Output = Self>
    + 'static
{
    const EXACT: bool;
    const KIND: &'static str;

    fn from_rat(r: &Rat) -> Self;
    fn from_int(v: i64) -> Self;
    fn to_f64(&self) -> f64;
    fn to_json(&self) -> serde_json::Value;
    fn from_json(v: &serde_json::Value) -> Option<Self>;
}

impl Coeff for Rat {
    const EXACT: bool = true;
    const KIND: &'static str = "exact";

    fn from_rat(r: &Rat) -> Self {
        r.clone()
    }
    fn from_int(v: i64) -> Self {
        Rat::from_integer(BigInt::from(v))
    }
    fn to_f64(&self) -> f64 {
        rat_to_f64(self)
    }
    fn to_json(&self) -> serde_json::Value {
        serde_json::Value::String(fmt_rat(self))
    }
    fn from_json(v: &serde_json::Value) -> Option<Self> {
        match v {
            serde_json::Value::String(s) => parse_rat(s).ok(),
            serde_json::Value::Number(n) => n.as_i64().map(Rat::from_int),
            _ => None,
        }
    }
}

impl Coeff for f64 {
    const EXACT: bool = false;
    const KIND: &'static str = "float";

    fn from_rat(r: &Rat) -> Self {
        rat_to_f64(r)
    }
    fn from_int(v: i64) -> Self {
        v as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn to_json(&self) -> serde_json::Value {
        serde_json::json!(self)
    }
    fn from_json(v: &serde_json::Value) -> Option<Self> {
        v.as_f64()
    }
}

pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_int(v: i64) -> Rat {
    Rat::from_integer(BigInt::from(v))
}

/// Canonical `"p/q"` form; plain `"p"` for integers.
pub fn fmt_rat(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid rational literal {0:?}")]
pub struct ParseRatError(pub String);

pub fn parse_rat(s: &str) -> Result<Rat, ParseRatError> {
    let s = s.trim();
    let mk_err = || ParseRatError(s.to_string());
    match s.split_once('/') {
        Some((p, q)) => {
            let p: BigInt = p.trim().parse().map_err(|_| mk_err())?;
            let q: BigInt = q.trim().parse().map_err(|_| mk_err())?;
            if q.is_zero() {
                return Err(mk_err());
            }
            Ok(Rat::new(p, q))
        }
        None => {
            let p: BigInt = s.parse().map_err(|_| mk_err())?;
            Ok(Rat::from_integer(p))
        }
    }
}

/// Loss-aware conversion good far outside the `f64` integer range.
pub fn rat_to_f64(r: &Rat) -> f64 {
    if let (Some(n), Some(d)) = (r.numer().to_f64(), r.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && d != 0.0 {
            return n / d;
        }
    }
    // Fall back on scaled division for extreme magnitudes.
    let num_bits = r.numer().bits() as i64;
    let den_bits = r.denom().bits() as i64;
    let shift = (num_bits.max(den_bits) - 500).max(0) as u64;
    let n = (r.numer() >> shift).to_f64().unwrap_or(f64::NAN);
    let d = (r.denom() >> shift).to_f64().unwrap_or(f64::NAN);
    n / d
}

pub fn factorial(k: u64) -> BigInt {
    let mut acc = BigInt::one();
    for i in 2..=k {
        acc *= i;
    }
    acc
}

/// (k)!! with (-1)!! = 0!! = 1.
pub fn double_factorial(k: u64) -> BigInt {
    let mut acc = BigInt::one();
    let mut i = k;
    while i > 1 {
        acc *= i;
        i -= 2;
    }
    acc
}

pub fn binomial(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Multinomial coefficient d! / (a_1! ... a_r!) for |a| = d.
pub fn multinomial(parts: &[u32]) -> BigInt {
    let total: u32 = parts.iter().sum();
    let mut acc = factorial(total as u64);
    for &p in parts {
        acc /= factorial(p as u64);
    }
    acc
}

/// Nearest rational with the given denominator.
pub fn round_to_denominator(x: f64, den: &BigInt) -> Rat {
    let scaled = x * rat_to_f64(&Rat::from_integer(den.clone()));
    let num = BigInt::from(scaled.round() as i128);
    Rat::new(num, den.clone())
}

/// Largest rational strictly below `x` with denominator at most `max_den`.
pub fn best_rational_below(x: f64, max_den: u64) -> Rat {
    let mut best: Option<Rat> = None;
    for d in 1..=max_den {
        let mut p = (x * d as f64).floor() as i128;
        // Enforce strictness.
        while p as f64 / d as f64 >= x {
            p -= 1;
        }
        let cand = Rat::new(BigInt::from(p), BigInt::from(d));
        if best.as_ref().map_or(true, |b| cand > *b) {
            best = Some(cand);
        }
    }
    best.unwrap()
}

/// Sign of a rational as -1, 0, 1.
pub fn rat_sign(r: &Rat) -> i32 {
    match r.numer().sign() {
        Sign::Minus => -1,
        Sign::NoSign => 0,
        Sign::Plus => 1,
    }
}

/// lcm of the denominators of a slice of rationals.
pub fn denominator_lcm(vals: &[Rat]) -> BigInt {
    let mut acc = BigInt::one();
    for v in vals {
        acc = acc.lcm(v.denom());
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_literals_round_trip() {
        for s in ["3/4", "-7/2", "5", "-12", "0"] {
            let r = parse_rat(s).unwrap();
            assert_eq!(fmt_rat(&r), s);
        }
        assert_eq!(parse_rat("6/8").unwrap(), rat(3, 4));
        assert!(parse_rat("1/0").is_err());
        assert!(parse_rat("x").is_err());
    }

    #[test]
    fn combinatorial_helpers() {
        assert_eq!(double_factorial(0), BigInt::from(1));
        assert_eq!(double_factorial(1), BigInt::from(1));
        assert_eq!(double_factorial(5), BigInt::from(15));
        assert_eq!(double_factorial(6), BigInt::from(48));
        assert_eq!(binomial(6, 2), BigInt::from(15));
        assert_eq!(multinomial(&[2, 1, 1]), BigInt::from(12));
    }

    #[test]
    fn rational_below() {
        let r = best_rational_below(0.75 * 3.41628, 16);
        assert!(r < rat(2562210, 1000000));
        assert!(r >= rat(2, 1));
        // Largest rational with denominator <= 16 strictly below 1/2 is 7/15.
        assert_eq!(best_rational_below(0.5, 16), rat(7, 15));
    }

    #[test]
    fn big_rat_to_f64() {
        let r = rat(1, 3);
        assert!((rat_to_f64(&r) - 1.0 / 3.0).abs() < 1e-15);
        let huge = Rat::new(BigInt::from(10).pow(400u32), BigInt::from(10).pow(398u32));
        assert!((rat_to_f64(&huge) - 100.0).abs() < 1e-9);
    }
}
