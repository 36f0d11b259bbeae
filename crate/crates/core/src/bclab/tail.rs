use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{invalid, Result};
use crate::rational::{from_u64, Rational, RationalSum};
use crate::targets::TargetFamily;
use crate::unitcircle::CircleSet;

/// Exact `μ(⋃_{q=m}^{Q} E_q)` for an arbitrary builder.
pub fn tail_union_measure_with<F>(build: F, m: u64, big_q: u64) -> Result<Rational>
where
    F: Fn(u64) -> Result<CircleSet>,
{
    if m > big_q {
        return invalid("tail union requires m ≤ Q");
    }
    let mut pieces = Vec::new();
    for q in m..=big_q {
        let s = build(q)?;
        if s.is_full() {
            return Ok(Rational::one());
        }
        pieces.extend(s.intervals().iter().cloned());
    }
    Ok(CircleSet::from_real_intervals(pieces).measure())
}

/// Exact `μ(⋃_{q=m}^{Q} E_q)` for a target family, streaming all arcs through a k-way merge
/// in machine integers when every denominator fits, and through exact set unions otherwise.
pub fn tail_union_measure(family: &TargetFamily, m: u64, big_q: u64) -> Result<Rational> {
    if m > big_q {
        return invalid("tail union requires m ≤ Q");
    }
    let m = m.max(1);
    match merged_measure(family, m, big_q)? {
        Some(v) => Ok(v),
        None => tail_union_measure_with(|q| family.build(q), m, big_q),
    }
}

/// `μ(⋃_{q=m}^{Q} E_q)` at each `Q` in `checkpoints`.
pub fn tail_union_curve(family: &TargetFamily, m: u64, checkpoints: &[u64]) -> Result<Vec<(u64, Rational)>> {
    checkpoints.iter().map(|&q| Ok((q, tail_union_measure(family, m, q)?))).collect()
}

#[derive(Clone, Copy)]
enum Member {
    All,
    Coprime { k: u64 },
    Residue { k: u64, a0: i64, b: u64 },
    Star { bq: u64 },
}

/// Arcs of one `E_q` in increasing order, as endpoints over the common denominator `den`.
struct Stream {
    q: u64,
    member: Member,
    alpha: u64,
    beta: u64,
    scale: u64,
    radius: u64,
    den: u64,
    next: u64,
    head: Option<(u64, u64)>,
    tail: Option<(u64, u64)>,
}

impl Stream {
    fn is_member(&self, j: u64) -> bool {
        let q = self.q;
        match self.member {
            Member::All => true,
            Member::Coprime { k } => ((j + q - k) % q).gcd(&q) == 1,
            Member::Residue { k, a0, b } => {
                let a = ((j + q - k) % q) as i128;
                ((a0 as i128 + a * b as i128).rem_euclid(q as i128) as u64).gcd(&q) == 1
            }
            Member::Star { bq } => (self.alpha + j * self.beta).gcd(&bq) == 1,
        }
    }

    fn center(&self, j: u64) -> u64 {
        (self.alpha + j * self.beta) * self.scale
    }

    fn advance(&mut self) -> Option<(u64, u64)> {
        if let Some(h) = self.head.take() {
            return Some(h);
        }
        while self.next < self.q {
            let j = self.next;
            self.next += 1;
            if self.is_member(j) {
                let c = self.center(j);
                return Some((c.saturating_sub(self.radius), (c + self.radius).min(self.den)));
            }
        }
        self.tail.take()
    }
}

#[derive(Clone, Copy)]
struct Piece {
    lo: u64,
    hi: u64,
    den: u64,
    stream: usize,
}

fn cmp_frac(a: u64, da: u64, b: u64, db: u64) -> Ordering {
    (a as u128 * db as u128).cmp(&(b as u128 * da as u128))
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Piece {}

impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        cmp_frac(other.lo, other.den, self.lo, self.den).then(other.stream.cmp(&self.stream))
    }
}

const MAX_DEN: u64 = 1 << 62;

/// Builds the stream for `E_q`; `Ok(None)` signals machine-integer overflow, `Err(true)` a full circle.
fn make_stream(family: &TargetFamily, q: u64) -> Result<std::result::Result<Option<Stream>, bool>> {
    let psi = family.psi().value(q)?;
    if psi.is_zero() {
        return Ok(Ok(None));
    }
    let radius = &psi / from_u64(q);
    let (Some(rn), Some(rd)) = (radius.numer().to_u64(), radius.denom().to_u64()) else {
        return Ok(Err(false));
    };
    let shifted = |gamma: &Rational| -> Option<(u64, u64, u64, u64)> {
        let k = gamma.floor().to_integer().mod_floor(&BigInt::from(q)).to_u64()?;
        let g = gamma - gamma.floor();
        Some((g.numer().to_u64()?, g.denom().to_u64()?, k, g.denom().to_u64()?.checked_mul(q)?))
    };
    let (alpha, beta, dc, member) = match family {
        TargetFamily::Eq { gamma, .. } | TargetFamily::EqPrime { gamma, .. } | TargetFamily::EqI { gamma, .. } => {
            let Some((gn, gd, k, dc)) = shifted(gamma) else { return Ok(Err(false)) };
            let member = match family {
                TargetFamily::Eq { .. } => Member::All,
                TargetFamily::EqPrime { .. } => Member::Coprime { k },
                TargetFamily::EqI { a0, b, .. } => Member::Residue { k, a0: *a0, b: *b },
                TargetFamily::EqStar { .. } => unreachable!(),
            };
            (gn, gd, dc, member)
        }
        TargetFamily::EqStar { a0, b, .. } => {
            if *b == 0 || a0.unsigned_abs().gcd(b) != 1 {
                return invalid(format!("A = {a0} and B = {b} must be coprime with B ≥ 1"));
            }
            let Some(bq) = b.checked_mul(q) else { return Ok(Err(false)) };
            (a0.rem_euclid(*b as i64) as u64, *b, bq, Member::Star { bq })
        }
    };
    let den = dc.lcm(&rd);
    if den >= MAX_DEN || dc == 0 {
        return Ok(Err(false));
    }
    let scale = den / dc;
    let Some(r) = rn.checked_mul(den / rd) else { return Ok(Err(false)) };
    if r >= den / 2 + den % 2 {
        return Ok(Err(true));
    }
    let mut s = Stream { q, member, alpha, beta, scale, radius: r, den, next: 0, head: None, tail: None };
    let first = (0..q).find(|&j| s.is_member(j));
    let Some(first) = first else { return Ok(Ok(None)) };
    let last = (0..q).rev().find(|&j| s.is_member(j)).expect("non-empty");
    let (c_min, c_max) = (s.center(first), s.center(last));
    if c_max + r > den {
        s.head = Some((0, c_max + r - den));
    }
    if c_min < r {
        s.tail = Some((den + c_min - r, den));
    }
    Ok(Ok(Some(s)))
}

fn merged_measure(family: &TargetFamily, m: u64, big_q: u64) -> Result<Option<Rational>> {
    let mut streams = Vec::new();
    for q in m..=big_q {
        match make_stream(family, q)? {
            Ok(Some(s)) => streams.push(s),
            Ok(None) => {}
            Err(true) => return Ok(Some(Rational::one())),
            Err(false) => return Ok(None),
        }
    }
    let mut heap = BinaryHeap::with_capacity(streams.len());
    for (i, s) in streams.iter_mut().enumerate() {
        if let Some((lo, hi)) = s.advance() {
            heap.push(Piece { lo, hi, den: s.den, stream: i });
        }
    }
    let mut sums = vec![0i128; streams.len()];
    let mut cur: Option<(Piece, Piece)> = None;
    while let Some(p) = heap.pop() {
        if let Some((lo, hi)) = streams[p.stream].advance() {
            heap.push(Piece { lo, hi, den: p.den, stream: p.stream });
        }
        cur = Some(match cur {
            None => (p, p),
            Some((start, end)) => {
                if cmp_frac(p.lo, p.den, end.hi, end.den) != Ordering::Greater {
                    let end = if cmp_frac(p.hi, p.den, end.hi, end.den) == Ordering::Greater { p } else { end };
                    (start, end)
                } else {
                    sums[end.stream] += end.hi as i128;
                    sums[start.stream] -= start.lo as i128;
                    (p, p)
                }
            }
        });
    }
    if let Some((start, end)) = cur {
        sums[end.stream] += end.hi as i128;
        sums[start.stream] -= start.lo as i128;
    }
    let mut acc = RationalSum::new();
    for (s, v) in streams.iter().zip(sums) {
        if v != 0 {
            acc.add_parts(BigInt::from(v), BigInt::from(s.den));
        }
    }
    let total = acc.total();
    debug_assert!(!total.is_negative());
    Ok(Some(total))
}
