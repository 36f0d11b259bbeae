//! Arithmetic-function kernel: factorization, `φ`, Möbius, `τ`, the weighted
//! totient `φ(q, b)`, the residue sets `𝓘_q`, and the counting function `F(h, q)`.
//!
//! Overlap quantities for a pair `(q, r)` live in [`overlap`].

pub mod overlap;

use std::sync::OnceLock;

use num_integer::Integer;
use serde::Serialize;

use crate::error::{invalid, Result};

pub use overlap::{
    h_c, h_c_bound, h_c_must_vanish, l_t, mln_decompose, x_qr, HcTable, OverlapAnalysis,
};

/// Default sieve bound; integers up to its square can be factored.
pub const DEFAULT_SIEVE_BOUND: u64 = 1_000_000;

/// Smallest-prime-factor table.
#[derive(Debug, Clone)]
pub struct Sieve {
    spf: Vec<u32>,
    primes: Vec<u32>,
}

impl Sieve {
    pub fn new(bound: u64) -> Self {
        let n = bound.max(2) as usize;
        let mut spf = vec![0u32; n + 1];
        let mut primes = Vec::new();
        for i in 2..=n {
            if spf[i] == 0 {
                spf[i] = i as u32;
                primes.push(i as u32);
            }
            let si = spf[i];
            for &p in &primes {
                let m = i * p as usize;
                if p > si || m > n {
                    break;
                }
                spf[m] = p;
            }
        }
        Self { spf, primes }
    }

    pub fn bound(&self) -> u64 {
        (self.spf.len() - 1) as u64
    }

    pub fn primes(&self) -> &[u32] {
        &self.primes
    }

    pub fn is_prime(&self, q: u64) -> Result<bool> {
        if q < 2 {
            return Ok(false);
        }
        Ok(self.factor(q)?.prime_powers == [(q, 1)])
    }

    /// Deterministic trial-division factorization; rejects inputs beyond `bound²`.
    pub fn factor(&self, q: u64) -> Result<Factorization> {
        if q == 0 {
            return invalid("cannot factor 0");
        }
        let mut pp: Vec<(u64, u32)> = Vec::new();
        let mut push = |p: u64| match pp.last_mut() {
            Some((last, e)) if *last == p => *e += 1,
            _ => pp.push((p, 1)),
        };
        let bound = self.bound();
        if q <= bound {
            let mut x = q as usize;
            while x > 1 {
                let p = self.spf[x] as usize;
                push(p as u64);
                x /= p;
            }
            return Ok(Factorization { prime_powers: pp });
        }
        if q as u128 > bound as u128 * bound as u128 {
            return invalid(format!("{q} exceeds the factorization range (sieve bound {bound})"));
        }
        let mut x = q;
        for &p in &self.primes {
            let p = p as u64;
            if p * p > x {
                break;
            }
            while x.is_multiple_of(p) {
                push(p);
                x /= p;
            }
        }
        if x > 1 {
            push(x);
        }
        Ok(Factorization { prime_powers: pp })
    }
}

/// The shared sieve, built on first use and read-only afterwards.
pub fn global_sieve() -> &'static Sieve {
    static SIEVE: OnceLock<Sieve> = OnceLock::new();
    SIEVE.get_or_init(|| Sieve::new(DEFAULT_SIEVE_BOUND))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Factorization {
    /// `(p, e)` with strictly increasing primes and `e ≥ 1`.
    pub prime_powers: Vec<(u64, u32)>,
}

impl Factorization {
    pub fn value(&self) -> u64 {
        self.prime_powers.iter().map(|&(p, e)| p.pow(e)).product()
    }

    pub fn primes(&self) -> impl Iterator<Item = u64> + '_ {
        self.prime_powers.iter().map(|&(p, _)| p)
    }

    pub fn exponent(&self, p: u64) -> u32 {
        self.prime_powers.iter().find(|&&(x, _)| x == p).map_or(0, |&(_, e)| e)
    }

    pub fn euler_phi(&self) -> u64 {
        self.prime_powers.iter().map(|&(p, e)| p.pow(e - 1) * (p - 1)).product()
    }

    pub fn moebius(&self) -> i8 {
        if self.prime_powers.iter().any(|&(_, e)| e > 1) {
            0
        } else if self.prime_powers.len().is_multiple_of(2) {
            1
        } else {
            -1
        }
    }

    pub fn tau(&self) -> u64 {
        self.prime_powers.iter().map(|&(_, e)| e as u64 + 1).product()
    }

    /// Number of distinct prime factors.
    pub fn omega(&self) -> u32 {
        self.prime_powers.len() as u32
    }
}

pub fn factor(q: u64) -> Result<Factorization> {
    global_sieve().factor(q)
}

pub fn euler_phi(q: u64) -> Result<u64> {
    Ok(factor(q)?.euler_phi())
}

pub fn moebius(q: u64) -> Result<i8> {
    Ok(factor(q)?.moebius())
}

pub fn tau(q: u64) -> Result<u64> {
    Ok(factor(q)?.tau())
}

pub fn is_prime(q: u64) -> bool {
    global_sieve().is_prime(q).unwrap_or_else(|_| num_prime::nt_funcs::is_prime64(q))
}

/// `φ(q, b) = φ(q) ∏_{p | (q,b)} (1 + 1/(p−1))`, always an integer.
///
/// Each factor `p/(p−1)` cancels against the `(p−1)` in `φ`'s local factor,
/// so the local contribution at `p^e ∥ q` is `p^e` when `p | b` and
/// `p^{e−1}(p−1)` otherwise.
pub fn phi_qb(q: u64, b: u64) -> Result<u64> {
    if b == 0 {
        return invalid("phi_qb requires b ≥ 1");
    }
    let f = factor(q)?;
    Ok(phi_qb_from(&f, b))
}

pub(crate) fn phi_qb_from(f: &Factorization, b: u64) -> u64 {
    f.prime_powers
        .iter()
        .map(|&(p, e)| if b.is_multiple_of(p) { p.pow(e) } else { p.pow(e - 1) * (p - 1) })
        .product()
}

/// Sorted subset of `ℤ_q`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResidueSet {
    pub modulus: u64,
    pub members: Vec<u64>,
}

impl ResidueSet {
    pub fn new(modulus: u64, mut members: Vec<u64>) -> Result<Self> {
        if modulus == 0 {
            return invalid("residue set modulus must be positive");
        }
        members.sort_unstable();
        members.dedup();
        if members.last().is_some_and(|&m| m >= modulus) {
            return invalid(format!("residue out of range for modulus {modulus}"));
        }
        Ok(Self { modulus, members })
    }

    pub fn full(q: u64) -> Self {
        Self { modulus: q, members: (0..q).collect() }
    }

    pub fn units(q: u64) -> Self {
        Self { modulus: q, members: (0..q).filter(|&a| a.gcd(&q) == 1).collect() }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub(crate) fn mod_inverse(a: i64, m: i64) -> Option<i64> {
    let e = a.rem_euclid(m).extended_gcd(&m);
    (e.gcd == 1).then(|| e.x.rem_euclid(m))
}

/// Marks `a ∈ ℤ_q` with `p | A + aB` for some prime `p | q` (`p ∤ B`),
/// shifted by `h·B` when `shift` is given.
fn mark_bad(q: u64, f: &Factorization, a0: i64, b: u64, shift: i64, bad: &mut [bool]) {
    for p in f.primes() {
        if b.is_multiple_of(p) {
            continue;
        }
        let pi = p as i64;
        let inv = mod_inverse((b % p) as i64, pi).expect("p ∤ B");
        // A + aB + shift·B ≡ 0 (mod p)  ⇔  a ≡ −A·B⁻¹ − shift (mod p)
        let start = ((-a0).rem_euclid(pi) * inv - shift).rem_euclid(pi) as u64;
        let mut a = start;
        while a < q {
            bad[a as usize] = true;
            a += p;
        }
    }
}

/// `𝓘_q = {a ∈ ℤ_q : (A + aB, q) = 1}`; its size is `φ(q, B)`.
pub fn enumerate_iq(q: u64, a0: i64, b: u64) -> Result<ResidueSet> {
    if q == 0 || b == 0 {
        return invalid("enumerate_iq requires q ≥ 1 and B ≥ 1");
    }
    if a0.unsigned_abs().gcd(&b) != 1 {
        return invalid(format!("A = {a0} and B = {b} are not coprime"));
    }
    let f = factor(q)?;
    let mut bad = vec![false; q as usize];
    mark_bad(q, &f, a0, b, 0, &mut bad);
    let members = (0..q).filter(|&a| !bad[a as usize]).collect();
    Ok(ResidueSet { modulus: q, members })
}

/// Brute-force `F(h, q) = #{a ∈ ℤ_q : (A + aB, q) = (A + aB + hB, q) = 1}`.
pub fn f_hq(h: i64, q: u64, a0: i64, b: u64) -> Result<u64> {
    if q == 0 || b == 0 {
        return invalid("f_hq requires q ≥ 1 and B ≥ 1");
    }
    let primes: Vec<i128> = factor(q)?.primes().map(|p| p as i128).collect();
    let coprime = |x: i128| primes.iter().all(|&p| x % p != 0);
    let (a0, b, h) = (a0 as i128, b as i128, h as i128);
    Ok((0..q as i128)
        .filter(|&a| {
            let t = a0 + a * b;
            coprime(t) && coprime(t + h * b)
        })
        .count() as u64)
}

/// Multiplicative evaluation of `F(h, q)` from its prime-power values.
pub fn f_hq_formula(h: i64, q: u64, b: u64) -> Result<u64> {
    let f = factor(q)?;
    let h = h.unsigned_abs();
    Ok(f.prime_powers
        .iter()
        .map(|&(p, k)| {
            if b.is_multiple_of(p) {
                p.pow(k)
            } else if h.is_multiple_of(p) {
                p.pow(k - 1) * (p - 1)
            } else {
                p.pow(k - 1) * (p - 2)
            }
        })
        .product())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_gcd_count(q: u64, a0: i64, b: u64) -> Vec<u64> {
        (0..q)
            .filter(|&a| (a0 as i128 + a as i128 * b as i128).unsigned_abs().gcd(&(q as u128)) == 1)
            .collect()
    }

    #[test]
    fn small_arithmetic_functions() {
        assert_eq!(euler_phi(12).unwrap(), 4);
        assert_eq!(euler_phi(1).unwrap(), 1);
        assert_eq!(moebius(1).unwrap(), 1);
        assert_eq!(moebius(30).unwrap(), -1);
        assert_eq!(moebius(12).unwrap(), 0);
        assert_eq!(tau(12).unwrap(), 6);
        assert!(factor(0).is_err());
        let coprime = (1..=12u64).filter(|a| a.gcd(&12) == 1).count() as u64;
        assert_eq!(coprime, euler_phi(12).unwrap());
        let divisors = (1..=12u64).filter(|d| 12 % d == 0).count() as u64;
        assert_eq!(divisors, tau(12).unwrap());
    }

    #[test]
    fn factorization_beyond_sieve_bound() {
        let s = Sieve::new(100);
        let f = s.factor(9991).unwrap(); // 97 · 103
        assert_eq!(f.prime_powers, vec![(97, 1), (103, 1)]);
        assert!(s.factor(100 * 100 + 1).is_err());
        assert_eq!(s.factor(9973).unwrap().prime_powers, vec![(9973, 1)]);
    }

    #[test]
    fn weighted_totient_examples() {
        assert_eq!(phi_qb(12, 2).unwrap(), 8);
        assert_eq!(phi_qb(12, 1).unwrap(), 4);
        assert_eq!(phi_qb(9, 3).unwrap(), 9);
        assert_eq!(naive_gcd_count(12, 1, 2).len(), 8);
    }

    #[test]
    fn iq_examples() {
        let i = enumerate_iq(12, 1, 2).unwrap();
        assert_eq!(i.members, vec![0, 2, 3, 5, 6, 8, 9, 11]);
        assert_eq!(enumerate_iq(13, 0, 1).unwrap().len(), 12);
        let i = enumerate_iq(4, 1, 4).unwrap();
        assert_eq!(i.members, vec![0, 1, 2, 3]);
        assert!(enumerate_iq(10, 2, 4).is_err());
    }

    #[test]
    fn iq_matches_naive_gcd_scan() {
        for q in 1..120u64 {
            for b in 1..12u64 {
                for a0 in -6i64..6 {
                    if a0.unsigned_abs().gcd(&b) != 1 {
                        continue;
                    }
                    let fast = enumerate_iq(q, a0, b).unwrap();
                    assert_eq!(fast.members, naive_gcd_count(q, a0, b), "q={q} A={a0} B={b}");
                }
            }
        }
    }

    #[test]
    fn f_examples() {
        assert_eq!(f_hq(3, 4, 0, 1).unwrap(), 0);
        assert_eq!(f_hq_formula(3, 4, 1).unwrap(), 0);
        assert_eq!(f_hq(2, 4, 0, 1).unwrap(), 2);
        assert_eq!(f_hq_formula(2, 4, 1).unwrap(), 2);
        assert_eq!(f_hq(1, 2, 1, 2).unwrap(), 2);
        assert_eq!(f_hq_formula(1, 2, 2).unwrap(), 2);
        assert_eq!(f_hq(0, 9, 0, 1).unwrap(), euler_phi(9).unwrap());
    }

    #[test]
    fn mod_inverse_works() {
        assert_eq!(mod_inverse(3, 7), Some(5));
        assert_eq!(mod_inverse(-3, 7), Some(2));
        assert_eq!(mod_inverse(2, 4), None);
    }

    #[test]
    fn prime_checks() {
        assert!(is_prime(2));
        assert!(is_prime(999_983));
        assert!(!is_prime(1));
        assert!(is_prime(1_000_000_007));
        assert!(!is_prime(1_000_000_007 * 3));
    }
}
