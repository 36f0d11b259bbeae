//! Exact rational scalars and helpers shared by every module.

use std::collections::HashMap;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{LabError, Result};

/// Arbitrary-precision rational, always in lowest terms with a positive denominator.
pub type Rational = BigRational;

pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub fn from_u64(n: u64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Parses `"p/q"` or a bare integer `"p"`.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || LabError::Parse(format!("malformed rational {s:?}, expected \"num/den\""));
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s, "1"),
    };
    let num: BigInt = n.parse().map_err(|_| bad())?;
    let den: BigInt = d.parse().map_err(|_| bad())?;
    if den.is_zero() {
        return Err(LabError::Parse(format!("zero denominator in {s:?}")));
    }
    Ok(Rational::new(num, den))
}

/// Renders as `"p/q"` (denominator always present).
pub fn fmt_rational(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Decimal approximation for reports; never used in decisions.
pub fn to_f64(r: &Rational) -> f64 {
    if let (Some(n), Some(d)) = (r.numer().to_f64(), r.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && d != 0.0 {
            return n / d;
        }
    }
    // Large operands: align bit lengths first.
    let nb = r.numer().bits() as i64;
    let db = r.denom().bits() as i64;
    let shift = nb.max(db) - 60;
    let n = shift_right(r.numer(), shift);
    let d = shift_right(r.denom(), shift);
    let (n, d) = (n.to_f64().unwrap_or(0.0), d.to_f64().unwrap_or(1.0));
    if d == 0.0 {
        return if r.is_positive() { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    n / d
}

fn shift_right(x: &BigInt, s: i64) -> BigInt {
    if s > 0 {
        x >> (s as usize)
    } else {
        x.clone()
    }
}

/// Reduces `x` into `[0, 1)`.
pub fn frac(x: &Rational) -> Rational {
    x - x.floor()
}

pub fn min_rat(a: &Rational, b: &Rational) -> Rational {
    if a <= b {
        a.clone()
    } else {
        b.clone()
    }
}

pub fn max_rat(a: &Rational, b: &Rational) -> Rational {
    if a >= b {
        a.clone()
    } else {
        b.clone()
    }
}

pub fn biguint_of(r: &BigInt) -> Option<BigUint> {
    match r.sign() {
        Sign::Minus => None,
        _ => Some(r.magnitude().clone()),
    }
}

/// Sums many rationals without reducing after every step.
///
/// Terms are bucketed by denominator; the final sum is taken over the least
/// common denominator so its cost is linear in the number of distinct
/// denominators times the size of the lcm.
#[derive(Debug, Default, Clone)]
pub struct RationalSum {
    buckets: HashMap<BigInt, BigInt>,
}

impl RationalSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, r: &Rational) {
        if r.is_zero() {
            return;
        }
        *self.buckets.entry(r.denom().clone()).or_insert_with(BigInt::zero) += r.numer();
    }

    /// Adds `num/den` without reducing it first.
    pub fn add_parts(&mut self, num: BigInt, den: BigInt) {
        debug_assert!(den.is_positive());
        if num.is_zero() {
            return;
        }
        *self.buckets.entry(den).or_insert_with(BigInt::zero) += num;
    }

    pub fn total(&self) -> Rational {
        if self.buckets.is_empty() {
            return Rational::zero();
        }
        let mut dens: Vec<&BigInt> = self.buckets.keys().collect();
        dens.sort();
        // Product tree keeps the lcm computation balanced.
        let lcm = lcm_tree(&dens);
        let mut num = BigInt::zero();
        for d in dens {
            let n = &self.buckets[d];
            if n.is_zero() {
                continue;
            }
            num += n * (&lcm / d);
        }
        Rational::new(num, lcm)
    }
}

fn lcm_tree(xs: &[&BigInt]) -> BigInt {
    match xs.len() {
        0 => BigInt::one(),
        1 => xs[0].clone(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            lcm_tree(a).lcm(&lcm_tree(b))
        }
    }
}
