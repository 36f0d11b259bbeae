//! Finite unions of closed arcs on the circle `R/Z` with exact rational endpoints.
//!
//! A [`CircleSet`] is kept in a canonical form: intervals inside `[0, 1]`,
//! sorted, pairwise disjoint, touching neighbours merged. A component that
//! wraps through `0 ≡ 1` is stored as the two pieces `[0, b]` and `[a, 1]`.
//! Zero-length components are dropped; every quantity computed here is a
//! Lebesgue measure, so isolated points never matter.

use std::fmt;

use num_traits::{One, Signed, Zero};

use crate::error::{invalid, Result};
use crate::rational::{fmt_rational, frac, Rational, RationalSum};

#[derive(Clone, PartialEq, Eq, Default)]
pub struct CircleSet {
    intervals: Vec<(Rational, Rational)>,
}

impl fmt::Debug for CircleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.intervals.is_empty() {
            return write!(f, "∅");
        }
        let parts: Vec<String> = self
            .intervals
            .iter()
            .map(|(a, b)| format!("[{}, {}]", fmt_rational(a), fmt_rational(b)))
            .collect();
        write!(f, "{}", parts.join(" ∪ "))
    }
}

impl CircleSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn full() -> Self {
        Self { intervals: vec![(Rational::zero(), Rational::one())] }
    }

    /// Builds a set from real intervals `[lo, hi]` (any real endpoints, `lo <= hi`),
    /// projecting each onto the circle.
    pub fn from_real_intervals<I>(raw: I) -> Self
    where
        I: IntoIterator<Item = (Rational, Rational)>,
    {
        let one = Rational::one();
        let mut pieces = Vec::new();
        for (lo, hi) in raw {
            let len = &hi - &lo;
            if !len.is_positive() {
                continue;
            }
            if len >= one {
                return Self::full();
            }
            let a = frac(&lo);
            let b = &a + &len;
            if b <= one {
                pieces.push((a, b));
            } else {
                pieces.push((Rational::zero(), &b - &one));
                pieces.push((a, one.clone()));
            }
        }
        Self::normalize(pieces)
    }

    /// Union of the closed arcs `‖x − center‖ ≤ radius`.
    pub fn from_arcs(arcs: &[(Rational, Rational)]) -> Result<Self> {
        let half = Rational::new(1.into(), 2.into());
        let mut raw = Vec::with_capacity(arcs.len());
        for (c, r) in arcs {
            if r.is_negative() {
                return invalid(format!("negative arc radius {}", fmt_rational(r)));
            }
            if *r >= half {
                return Ok(Self::full());
            }
            raw.push((c - r, c + r));
        }
        Ok(Self::from_real_intervals(raw))
    }

    /// Sorts and merges pieces already lying inside `[0, 1]`.
    fn normalize(mut pieces: Vec<(Rational, Rational)>) -> Self {
        pieces.retain(|(a, b)| a < b);
        pieces.sort_by(|x, y| x.0.cmp(&y.0).then_with(|| x.1.cmp(&y.1)));
        let mut out: Vec<(Rational, Rational)> = Vec::with_capacity(pieces.len());
        for (a, b) in pieces {
            match out.last_mut() {
                Some(last) if a <= last.1 => {
                    if b > last.1 {
                        last.1 = b;
                    }
                }
                _ => out.push((a, b)),
            }
        }
        Self { intervals: out }
    }

    pub fn intervals(&self) -> &[(Rational, Rational)] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.intervals.len() == 1 && self.intervals[0].0.is_zero() && self.intervals[0].1.is_one()
    }

    pub fn measure(&self) -> Rational {
        if self.intervals.len() <= 16 {
            return self.intervals.iter().map(|(a, b)| b - a).sum();
        }
        let mut acc = RationalSum::new();
        for (a, b) in &self.intervals {
            acc.add(&(b - a));
        }
        acc.total()
    }

    pub fn union(&self, other: &Self) -> Self {
        if self.is_empty() {
            return other.clone();
        }
        if other.is_empty() {
            return self.clone();
        }
        let mut all = Vec::with_capacity(self.len() + other.len());
        all.extend(self.intervals.iter().cloned());
        all.extend(other.intervals.iter().cloned());
        Self::normalize(all)
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let (xs, ys) = (&self.intervals, &other.intervals);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < xs.len() && j < ys.len() {
            let lo = if xs[i].0 >= ys[j].0 { &xs[i].0 } else { &ys[j].0 };
            let hi = if xs[i].1 <= ys[j].1 { &xs[i].1 } else { &ys[j].1 };
            if lo < hi {
                out.push((lo.clone(), hi.clone()));
            }
            if xs[i].1 < ys[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        // Inputs are canonical, so the sweep output is sorted and disjoint.
        Self { intervals: out }
    }

    /// `μ(self ∩ other)` without materializing the intersection.
    pub fn intersect_measure(&self, other: &Self) -> Rational {
        let (xs, ys) = (&self.intervals, &other.intervals);
        let (mut i, mut j) = (0, 0);
        let mut acc = RationalSum::new();
        while i < xs.len() && j < ys.len() {
            let lo = if xs[i].0 >= ys[j].0 { &xs[i].0 } else { &ys[j].0 };
            let hi = if xs[i].1 <= ys[j].1 { &xs[i].1 } else { &ys[j].1 };
            if lo < hi {
                acc.add(&(hi - lo));
            }
            if xs[i].1 < ys[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        acc.total()
    }

    /// Closure of the complement.
    pub fn complement(&self) -> Self {
        let mut out = Vec::with_capacity(self.len() + 1);
        let mut cursor = Rational::zero();
        for (a, b) in &self.intervals {
            if *a > cursor {
                out.push((cursor.clone(), a.clone()));
            }
            cursor = b.clone();
        }
        if cursor < Rational::one() {
            out.push((cursor, Rational::one()));
        }
        Self { intervals: out }
    }

    pub fn difference(&self, other: &Self) -> Self {
        self.intersect(&other.complement())
    }

    /// `true` when every component of `self` lies inside a component of `other`.
    pub fn is_subset(&self, other: &Self) -> bool {
        let mut j = 0;
        for (a, b) in &self.intervals {
            while j < other.intervals.len() && other.intervals[j].1 < *b {
                j += 1;
            }
            match other.intervals.get(j) {
                Some((c, d)) if c <= a && b <= d => {}
                _ => return false,
            }
        }
        true
    }

    pub fn contains(&self, x: &Rational) -> bool {
        let x = frac(x);
        self.intervals.iter().any(|(a, b)| *a <= x && x <= *b)
            || (x.is_zero() && self.intervals.last().is_some_and(|(_, b)| b.is_one()))
    }

    /// Rigid translation `x ↦ x + t (mod 1)`.
    pub fn translate(&self, t: &Rational) -> Self {
        Self::from_real_intervals(self.intervals.iter().map(|(a, b)| (a + t, b + t)))
    }

    /// Exact preimage under `x ↦ b·x (mod 1)`: the union of `(S + j)/b`, `0 ≤ j < b`.
    pub fn preimage_mul(&self, b: u64) -> Result<Self> {
        if b < 2 {
            return invalid(format!("multiplier must be at least 2, got {b}"));
        }
        let bb = Rational::from_integer(b.into());
        let mut pieces = Vec::with_capacity(self.len() * b as usize);
        for j in 0..b {
            let shift = Rational::from_integer(j.into());
            for (lo, hi) in &self.intervals {
                pieces.push(((lo + &shift) / &bb, (hi + &shift) / &bb));
            }
        }
        Ok(Self::normalize(pieces))
    }

    /// Builds a set directly from canonical data; used by tests and decoders.
    pub fn from_sorted_unchecked(intervals: Vec<(Rational, Rational)>) -> Self {
        Self::normalize(intervals)
    }
}
