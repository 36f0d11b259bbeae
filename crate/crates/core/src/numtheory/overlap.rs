//! Pair quantities behind the overlap estimates for `E*_q ∩ E*_r`: the
//! `(m, ℓ, n)` split of `qr`, the scale `X(q, r)`, the tail sums `L_t(q, r)`
//! and the solution counts `H(c)`.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::One;
use serde_json::{json, Value};

use super::{factor, Factorization};
use crate::error::{invalid, Result};
use crate::rational::{fmt_rational, max_rat, Rational};

/// Decomposition of a pair `q ≠ r` by comparing prime exponents `u = v_p(q)`, `v = v_p(r)`.
///
/// `n = ∏_{u≠v} p^{max}`, `m = ∏_{u≠v} p^{min}`, `ℓ = ∏_{u=v} p^{u}`, so `m ℓ² n = qr`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapAnalysis {
    pub q: u64,
    pub r: u64,
    pub m: u64,
    pub l: u64,
    pub n: u64,
    pub gcd_qr: u64,
    pub lcm_qr: u64,
    pub x: Option<Rational>,
    pub lt_values: BTreeMap<String, Rational>,
    pub(crate) fq: Factorization,
    pub(crate) fr: Factorization,
}

impl OverlapAnalysis {
    pub fn with_x(mut self, psi_q: &Rational, psi_r: &Rational, b: u64) -> Self {
        self.x = Some(x_from(self.q, self.r, self.lcm_qr, psi_q, psi_r, b));
        self
    }

    pub fn with_lt(mut self, t: &Rational) -> Self {
        let v = l_t_from(&self, t);
        self.lt_values.insert(fmt_rational(t), v);
        self
    }

    /// Primes dividing `qr/(q,r)²`, i.e. those with unequal exponents.
    pub fn unequal_primes(&self) -> Vec<u64> {
        let mut ps: Vec<u64> = self.fq.primes().chain(self.fr.primes()).collect();
        ps.sort_unstable();
        ps.dedup();
        ps.retain(|&p| self.fq.exponent(p) != self.fr.exponent(p));
        ps
    }

    pub fn to_json(&self) -> Value {
        json!({
            "q": self.q, "r": self.r, "m": self.m, "l": self.l, "n": self.n,
            "gcd": self.gcd_qr, "lcm": self.lcm_qr,
            "X": self.x.as_ref().map(fmt_rational),
            "L_t": self.lt_values.iter().map(|(k, v)| (k.clone(), json!(fmt_rational(v)))).collect::<serde_json::Map<_, _>>(),
        })
    }
}

pub fn mln_decompose(q: u64, r: u64) -> Result<OverlapAnalysis> {
    if q == 0 || r == 0 {
        return invalid("q and r must be positive");
    }
    if q == r {
        return invalid(format!("overlap analysis needs q ≠ r (both {q})"));
    }
    let fq = factor(q)?;
    let fr = factor(r)?;
    let mut primes: Vec<u64> = fq.primes().chain(fr.primes()).collect();
    primes.sort_unstable();
    primes.dedup();
    let (mut m, mut l, mut n) = (1u64, 1u64, 1u64);
    for p in primes {
        let (u, v) = (fq.exponent(p), fr.exponent(p));
        if u == v {
            l *= p.pow(u);
        } else {
            n *= p.pow(u.max(v));
            m *= p.pow(u.min(v));
        }
    }
    let g = q.gcd(&r);
    Ok(OverlapAnalysis {
        q,
        r,
        m,
        l,
        n,
        gcd_qr: g,
        lcm_qr: q / g * r,
        x: None,
        lt_values: BTreeMap::new(),
        fq,
        fr,
    })
}

fn x_from(q: u64, r: u64, lcm: u64, psi_q: &Rational, psi_r: &Rational, b: u64) -> Rational {
    let dq = psi_q / Rational::from_integer(q.into());
    let dr = psi_r / Rational::from_integer(r.into());
    max_rat(&dq, &dr) * Rational::from_integer(BigInt::from(2u64) * b * lcm)
}

/// `X(q, r) = 2·max{ψ(q)/q, ψ(r)/r}·B·lcm(q, r)`.
pub fn x_qr(q: u64, r: u64, psi_q: &Rational, psi_r: &Rational, b: u64) -> Result<Rational> {
    if q == 0 || r == 0 || b == 0 {
        return invalid("x_qr requires positive q, r, B");
    }
    let lcm = q.lcm(&r);
    Ok(x_from(q, r, lcm, psi_q, psi_r, b))
}

fn l_t_from(an: &OverlapAnalysis, t: &Rational) -> Rational {
    an.unequal_primes()
        .into_iter()
        .filter(|&p| Rational::from_integer(p.into()) >= *t)
        .map(|p| Rational::new(BigInt::one(), p.into()))
        .sum()
}

/// `L_t(q, r) = Σ 1/p` over primes `p ≥ t` dividing `qr/(q,r)²`.
pub fn l_t(q: u64, r: u64, t: &Rational) -> Result<Rational> {
    Ok(l_t_from(&mln_decompose(q, r)?, t))
}

/// Common data for counting pairs `(a, b)` with `a ∈ ℤ*_{Bq}`, `b ∈ ℤ*_{Br}`,
/// `a ≡ b ≡ A (mod B)`.
struct PairSetup {
    q_red: i64, // q / (q,r)
    r_red: i64, // r / (q,r)
    a_list: Vec<i64>,
    b_list: Vec<i64>,
}

fn admissible(q: u64, f: &Factorization, a0: i64, b: u64) -> Vec<i64> {
    // a = A + jB for j ∈ ℤ_q (mod Bq); (a, Bq) = 1 ⇔ (a, q) = 1 since (A, B) = 1.
    let bq = (b * q) as i64;
    let primes: Vec<i64> = f.primes().map(|p| p as i64).collect();
    let mut out: Vec<i64> = (0..q as i64)
        .map(|j| (a0 + j * b as i64).rem_euclid(bq))
        .filter(|&a| primes.iter().all(|&p| a % p != 0))
        .collect();
    out.sort_unstable();
    out
}

impl PairSetup {
    fn new(an: &OverlapAnalysis, a0: i64, b: u64) -> Result<Self> {
        if b == 0 {
            return invalid("B must be positive");
        }
        if a0.unsigned_abs().gcd(&b) != 1 {
            return invalid(format!("A = {a0} and B = {b} are not coprime"));
        }
        let g = an.gcd_qr;
        Ok(Self {
            q_red: (an.q / g) as i64,
            r_red: (an.r / g) as i64,
            a_list: admissible(an.q, &an.fq, a0, b),
            b_list: admissible(an.r, &an.fr, a0, b),
        })
    }
}

/// `H(c)` by enumerating `b` and solving `c = (r/g)·a − (q/g)·b` for `a`.
pub fn h_c(c: i64, q: u64, r: u64, a0: i64, b: u64) -> Result<u64> {
    let an = mln_decompose(q, r)?;
    let setup = PairSetup::new(&an, a0, b)?;
    Ok(h_c_with(&setup, c))
}

fn h_c_with(s: &PairSetup, c: i64) -> u64 {
    let mut count = 0;
    for &bb in &s.b_list {
        let t = c as i128 + s.q_red as i128 * bb as i128;
        if t % s.r_red as i128 != 0 {
            continue;
        }
        let a = (t / s.r_red as i128) as i64;
        if s.a_list.binary_search(&a).is_ok() {
            count += 1;
        }
    }
    count
}

/// `true` when `H(c)` is forced to vanish: `c ≢ ((r−q)/(q,r))·A (mod B)` or `(c, n) > 1`.
pub fn h_c_must_vanish(c: i64, q: u64, r: u64, a0: i64, b: u64) -> Result<bool> {
    let an = mln_decompose(q, r)?;
    Ok(must_vanish_with(&an, c, a0, b))
}

fn must_vanish_with(an: &OverlapAnalysis, c: i64, a0: i64, b: u64) -> bool {
    let g = an.gcd_qr as i128;
    let shift = (an.r as i128 - an.q as i128) / g * a0 as i128;
    let bb = b as i128;
    (c as i128 - shift).rem_euclid(bb) != 0 || c.unsigned_abs().gcd(&an.n) > 1
}

/// Exact bound on `H(c)` as numerator/denominator, both `u128`.
#[derive(Debug, Clone, Copy)]
struct Bound {
    num: u128,
    den: u128,
}

impl Bound {
    fn mul(self, n: u128, d: u128) -> Self {
        let (mut num, mut den) = (self.num * n, self.den * d);
        let g = num.gcd(&den);
        num /= g;
        den /= g;
        Self { num, den }
    }

    fn admits(self, h: u64) -> bool {
        h as u128 * self.den <= self.num
    }

    fn to_rational(self) -> Rational {
        Rational::new(BigInt::from(self.num), BigInt::from(self.den))
    }
}

fn primes_once(an: &OverlapAnalysis) -> Vec<u64> {
    let mut ps: Vec<u64> = an.fq.primes().chain(an.fr.primes()).collect();
    ps.sort_unstable();
    ps.dedup();
    ps
}

/// The part of the bound that does not depend on `c`:
/// `(q,r)·φ(m)/m·φ(ℓ)²/ℓ²·∏_{p|(B,m)} (1−1/p)^{-1}·∏_{p|(B,ℓ)} (1−1/p)^{-2}`.
fn base_bound(an: &OverlapAnalysis, b: u64) -> Bound {
    let mut bound = Bound { num: an.gcd_qr as u128, den: 1 };
    for p in primes_once(an) {
        let (u, v) = (an.fq.exponent(p), an.fr.exponent(p));
        let pu = p as u128;
        if u == v {
            if !b.is_multiple_of(p) {
                bound = bound.mul((pu - 1) * (pu - 1), pu * pu);
            }
        } else if u.min(v) > 0 && !b.is_multiple_of(p) {
            bound = bound.mul(pu - 1, pu);
        }
    }
    bound
}

fn c_factor(an: &OverlapAnalysis, c: i64, base: Bound) -> Bound {
    let mut bound = base;
    for p in primes_once(an) {
        if an.fq.exponent(p) == an.fr.exponent(p) && c.unsigned_abs().is_multiple_of(p) {
            bound = bound.mul(p as u128, p as u128 - 1);
        }
    }
    bound
}

/// Right-hand side of the solution-count bound for `H(c)`.
pub fn h_c_bound(c: i64, q: u64, r: u64, b: u64) -> Result<Rational> {
    if b == 0 {
        return invalid("B must be positive");
    }
    let an = mln_decompose(q, r)?;
    Ok(c_factor(&an, c, base_bound(&an, b)).to_rational())
}

/// Full `c ↦ H(c)` table built by enumerating every admissible pair once.
#[derive(Debug, Clone)]
pub struct HcTable {
    pub q: u64,
    pub r: u64,
    pub a0: i64,
    pub b: u64,
    /// `(c, H(c))` for every `c` with `H(c) > 0`, sorted by `c`.
    pub nonzero: Vec<(i64, u64)>,
    pub a_count: u64,
    pub b_count: u64,
}

/// Outcome of checking the vanishing conditions and bound across a table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HcCheck {
    pub vanish_violations: Vec<i64>,
    pub bound_violations: Vec<i64>,
    pub total: u64,
}

impl HcCheck {
    pub fn ok(&self) -> bool {
        self.vanish_violations.is_empty() && self.bound_violations.is_empty()
    }
}

impl HcTable {
    pub fn compute(q: u64, r: u64, a0: i64, b: u64) -> Result<Self> {
        let an = mln_decompose(q, r)?;
        let setup = PairSetup::new(&an, a0, b)?;
        let span = (b * an.lcm_qr) as i64;
        let mut counts = vec![0u32; (2 * span + 1) as usize];
        let mut touched = Vec::new();
        for &a in &setup.a_list {
            let ra = setup.r_red * a;
            for &bb in &setup.b_list {
                let idx = (ra - setup.q_red * bb + span) as usize;
                if counts[idx] == 0 {
                    touched.push(idx);
                }
                counts[idx] += 1;
            }
        }
        touched.sort_unstable();
        let nonzero = touched.into_iter().map(|i| (i as i64 - span, counts[i] as u64)).collect();
        Ok(Self {
            q,
            r,
            a0,
            b,
            nonzero,
            a_count: setup.a_list.len() as u64,
            b_count: setup.b_list.len() as u64,
        })
    }

    pub fn get(&self, c: i64) -> u64 {
        self.nonzero.binary_search_by_key(&c, |&(k, _)| k).map_or(0, |i| self.nonzero[i].1)
    }

    /// Checks both parts of the `H(c)` lemma on every `c` with `H(c) > 0`;
    /// for all other `c` both statements hold trivially.
    pub fn check(&self) -> Result<HcCheck> {
        let an = mln_decompose(self.q, self.r)?;
        let base = base_bound(&an, self.b);
        let mut out = HcCheck::default();
        for &(c, h) in &self.nonzero {
            out.total += h;
            if must_vanish_with(&an, c, self.a0, self.b) {
                out.vanish_violations.push(c);
            }
            if !c_factor(&an, c, base).admits(h) {
                out.bound_violations.push(c);
            }
        }
        Ok(out)
    }

    /// `H(c)` for the given `c` via the per-`c` solver, for cross-checking.
    pub fn solve_single(&self, c: i64) -> Result<u64> {
        h_c(c, self.q, self.r, self.a0, self.b)
    }
}
