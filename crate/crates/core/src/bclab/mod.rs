//! Finite-space Borel–Cantelli oracles, quasi-independence condition checkers,
//! exact tail unions and Monte Carlo hit counting on the circle.

mod hits;
mod tail;

pub use hits::{
    congruence_rescale, dichotomy_probe, hit_summary, montecarlo_hits, write_hits_csv, DichotomyReport,
    DichotomyRow, FixedPoint, Hit, HitMode, HitOptions, HitRecord, RNG_ALGORITHM,
};
pub use tail::{tail_union_curve, tail_union_measure, tail_union_measure_with};

use std::collections::BTreeSet;

use num_traits::{One, Signed, Zero};
use serde_json::{json, Value};

use crate::error::{invalid, Result};
use crate::moments::IndexWindow;
use crate::rational::{fmt_rational, from_u64, Rational, RationalSum};
use crate::unitcircle::CircleSet;

/// Finite probability space with an eventually periodic event sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FinSpace {
    weights: Vec<Rational>,
    pre: Vec<BTreeSet<usize>>,
    period: Vec<BTreeSet<usize>>,
}

impl FinSpace {
    pub fn new(weights: Vec<Rational>, pre: Vec<BTreeSet<usize>>, period: Vec<BTreeSet<usize>>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_positive()) {
            return invalid("atom weights must be positive");
        }
        if weights.iter().sum::<Rational>() != Rational::one() {
            return invalid("atom weights must sum to 1");
        }
        if period.is_empty() {
            return invalid("period must contain at least one event");
        }
        let n = weights.len();
        if pre.iter().chain(&period).any(|e| e.iter().any(|&a| a >= n)) {
            return invalid(format!("event refers to an atom outside 0..{n}"));
        }
        Ok(Self { weights, pre, period })
    }

    pub fn from_lists(weights: Vec<Rational>, pre: &[&[usize]], period: &[&[usize]]) -> Result<Self> {
        let conv = |v: &[&[usize]]| v.iter().map(|e| e.iter().copied().collect()).collect();
        Self::new(weights, conv(pre), conv(period))
    }

    pub fn weights(&self) -> &[Rational] {
        &self.weights
    }

    pub fn preperiod(&self) -> usize {
        self.pre.len()
    }

    pub fn period_len(&self) -> usize {
        self.period.len()
    }

    /// Event `E_i`, `i ≥ 1`.
    pub fn event(&self, i: u64) -> &BTreeSet<usize> {
        let k = (i - 1) as usize;
        if k < self.pre.len() {
            &self.pre[k]
        } else {
            &self.period[(k - self.pre.len()) % self.period.len()]
        }
    }

    pub fn measure(&self, e: &BTreeSet<usize>) -> Rational {
        e.iter().map(|&a| &self.weights[a]).sum()
    }

    pub fn intersect_measure(&self, e: &BTreeSet<usize>, f: &BTreeSet<usize>) -> Rational {
        e.intersection(f).map(|&a| &self.weights[a]).sum()
    }

    fn block_pairs(&self, x: &[BTreeSet<usize>], y: &[BTreeSet<usize>]) -> Rational {
        let mut acc = RationalSum::new();
        for e in x {
            for f in y {
                acc.add(&self.intersect_measure(e, f));
            }
        }
        acc.total()
    }

    fn block_sum(&self, x: &[BTreeSet<usize>]) -> Rational {
        x.iter().map(|e| self.measure(e)).sum()
    }
}

/// `μ(E_∞)`: atoms that occur in some event of the period.
pub fn finspace_limsup_measure(space: &FinSpace) -> Rational {
    let atoms: BTreeSet<usize> = space.period.iter().flatten().copied().collect();
    space.measure(&atoms)
}

/// Outcome of a finite-space lemma check.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    /// Hypotheses hold and `μ(E_∞) ≥ bound`.
    Confirmed { limsup: Rational, bound: Rational, witness_q: Option<u64> },
    /// Hypotheses hold but the conclusion fails: a counterexample.
    Violated { limsup: Rational, bound: Rational, witness_q: Option<u64> },
    /// Hypotheses could not be verified.
    Inconclusive { reason: String },
}

impl Verdict {
    pub fn is_confirmed(&self) -> bool {
        matches!(self, Verdict::Confirmed { .. })
    }

    pub fn is_inconclusive(&self) -> bool {
        matches!(self, Verdict::Inconclusive { .. })
    }

    pub fn to_json(&self) -> Value {
        match self {
            Verdict::Confirmed { limsup, bound, witness_q } | Verdict::Violated { limsup, bound, witness_q } => json!({
                "verdict": if self.is_confirmed() { "confirmed" } else { "violated" },
                "limsup_measure": fmt_rational(limsup),
                "bound": fmt_rational(bound),
                "witness_q": witness_q,
            }),
            Verdict::Inconclusive { reason } => json!({ "verdict": "inconclusive", "reason": reason }),
        }
    }
}

/// `D(Q) − C·S(Q)²` along `Q = L + n·p + r` as a quadratic in `n`, coefficients `[a2, a1, a0]`.
fn dbc_quadratic(space: &FinSpace, c: &Rational, r: usize) -> [Rational; 3] {
    let (pre, per) = (&space.pre[..], &space.period[..]);
    let part = &per[..r];
    let sigma = space.block_sum(per);
    let s0 = space.block_sum(pre) + space.block_sum(part);
    let two = from_u64(2);
    let a2 = space.block_pairs(per, per) - c * &sigma * &sigma;
    let a1 = &two * (space.block_pairs(pre, per) + space.block_pairs(per, part)) - &two * c * &sigma * &s0;
    let a0 = space.block_pairs(pre, pre) + &two * space.block_pairs(pre, part) + space.block_pairs(part, part)
        - c * &s0 * &s0;
    [a2, a1, a0]
}

fn eventually_nonpositive(coeffs: &[Rational; 3]) -> bool {
    coeffs.iter().find(|a| !a.is_zero()).is_none_or(|a| a.is_negative())
}

/// Exact `(S(Q), D(Q))` for `Q ≥ 1`.
fn dbc_sums(space: &FinSpace, q: u64) -> (Rational, Rational) {
    let events: Vec<BTreeSet<usize>> = (1..=q).map(|i| space.event(i).clone()).collect();
    (space.block_sum(&events), space.block_pairs(&events, &events))
}

/// Divergence Borel–Cantelli on a finite space: `Σμ(E_i) = ∞` and `Σ_{s,t≤Q} μ(E_s∩E_t) ≤ C(Σ_{s≤Q} μ(E_s))²`
/// for infinitely many `Q` imply `μ(E_∞) ≥ 1/C`. The asymptotic condition is decided exactly; a witness
/// `Q ≤ horizon` is also required.
pub fn verify_dbc(space: &FinSpace, c: &Rational, horizon: u64) -> Result<Verdict> {
    if !c.is_positive() {
        return invalid("C must be positive");
    }
    if space.block_sum(&space.period).is_zero() {
        return Ok(Verdict::Inconclusive { reason: "measure sum converges: every periodic event is null".into() });
    }
    let p = space.period.len();
    if !(0..p).any(|r| eventually_nonpositive(&dbc_quadratic(space, c, r))) {
        return Ok(Verdict::Inconclusive {
            reason: format!("second-moment inequality fails for all large Q at C = {}", fmt_rational(c)),
        });
    }
    let l = space.pre.len() as u64;
    let mut witness = None;
    for q in 1..=horizon {
        let holds = if q <= l {
            let (s, d) = dbc_sums(space, q);
            s.is_positive() && d <= c * &s * &s
        } else {
            let n = (q - l) / p as u64;
            let r = ((q - l) % p as u64) as usize;
            let [a2, a1, a0] = dbc_quadratic(space, c, r);
            let nn = from_u64(n);
            let val = a2 * &nn * &nn + a1 * &nn + a0;
            let s = dbc_sums_fast(space, n, r);
            s.is_positive() && !val.is_positive()
        };
        if holds {
            witness = Some(q);
            break;
        }
    }
    let Some(wq) = witness else {
        return Ok(Verdict::Inconclusive { reason: format!("no Q ≤ {horizon} satisfies the second-moment inequality") });
    };
    let limsup = finspace_limsup_measure(space);
    let bound = c.recip();
    Ok(if limsup >= bound {
        Verdict::Confirmed { limsup, bound, witness_q: Some(wq) }
    } else {
        Verdict::Violated { limsup, bound, witness_q: Some(wq) }
    })
}

fn dbc_sums_fast(space: &FinSpace, n: u64, r: usize) -> Rational {
    space.block_sum(&space.pre) + from_u64(n) * space.block_sum(&space.period) + space.block_sum(&space.period[..r])
}

/// General divergence Borel–Cantelli on a finite space: windows with `Σ_{S_k} μ(E_i) ≥ c` and
/// `Σ_{s<t ∈ S_k} μ(E_s∩E_t) ≤ C′(Σ_{S_k} μ(E_i))²` imply `μ(E_∞) ≥ 1/(2C′ + 1/c)`.
pub fn verify_gdbc(space: &FinSpace, windows: &[IndexWindow], c: &Rational, c_prime: &Rational) -> Result<Verdict> {
    if !c.is_positive() || !c_prime.is_positive() {
        return invalid("c and C′ must be positive");
    }
    if windows.is_empty() || windows.iter().any(|w| w.is_empty() || w.min() == Some(0)) {
        return invalid("windows must be non-empty sets of indices ≥ 1");
    }
    if windows.windows(2).any(|w| w[0].min() >= w[1].min()) {
        return Ok(Verdict::Inconclusive { reason: "window minima are not increasing".into() });
    }
    for w in windows {
        let events: Vec<BTreeSet<usize>> = w.members().iter().map(|&i| space.event(i).clone()).collect();
        let psi = space.block_sum(&events);
        let full = space.block_pairs(&events, &events);
        let off = (full - &psi) / from_u64(2);
        if psi < *c {
            return Ok(Verdict::Inconclusive { reason: format!("window at {} has mass below c", w.min().unwrap()) });
        }
        if off > c_prime * &psi * &psi {
            return Ok(Verdict::Inconclusive {
                reason: format!("window at {} violates the second-moment inequality", w.min().unwrap()),
            });
        }
    }
    let limsup = finspace_limsup_measure(space);
    let bound = (from_u64(2) * c_prime + c.recip()).recip();
    Ok(if limsup >= bound {
        Verdict::Confirmed { limsup, bound, witness_q: None }
    } else {
        Verdict::Violated { limsup, bound, witness_q: None }
    })
}

/// Measure-algebra operations the condition checkers need.
pub trait EventAlgebra {
    type Set: Clone;
    fn measure(&self, s: &Self::Set) -> Rational;
    fn union(&self, a: &Self::Set, b: &Self::Set) -> Self::Set;
    fn intersect_measure(&self, a: &Self::Set, b: &Self::Set) -> Rational;
}

/// Lebesgue measure on the circle.
pub struct Circle;

impl EventAlgebra for Circle {
    type Set = CircleSet;
    fn measure(&self, s: &CircleSet) -> Rational {
        s.measure()
    }
    fn union(&self, a: &CircleSet, b: &CircleSet) -> CircleSet {
        a.union(b)
    }
    fn intersect_measure(&self, a: &CircleSet, b: &CircleSet) -> Rational {
        a.intersect_measure(b)
    }
}

impl EventAlgebra for FinSpace {
    type Set = BTreeSet<usize>;
    fn measure(&self, s: &Self::Set) -> Rational {
        FinSpace::measure(self, s)
    }
    fn union(&self, a: &Self::Set, b: &Self::Set) -> Self::Set {
        a.union(b).copied().collect()
    }
    fn intersect_measure(&self, a: &Self::Set, b: &Self::Set) -> Rational {
        FinSpace::intersect_measure(self, a, b)
    }
}

/// Result of probing `μ(A∩E_i) ≤ (1+δ)μ(A)μ(E_i)` over a range of indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionReport {
    pub probe: (u64, u64),
    /// Least `i₀` from which the inequality holds through the end of the range.
    pub i0: Option<u64>,
    pub violations: Vec<u64>,
}

impl ConditionReport {
    pub fn to_json(&self) -> Value {
        json!({ "probe": [self.probe.0, self.probe.1], "i0": self.i0, "violations": self.violations })
    }
}

fn probe_condition<M, F>(alg: &M, a: &M::Set, events: F, delta: &Rational, probe: (u64, u64)) -> Result<ConditionReport>
where
    M: EventAlgebra,
    F: Fn(u64) -> Result<M::Set>,
{
    if probe.0 > probe.1 {
        return invalid("probe range is empty");
    }
    if delta.is_negative() {
        return invalid("δ must be non-negative");
    }
    let mu_a = alg.measure(a);
    let factor = Rational::one() + delta;
    let mut violations = Vec::new();
    for i in probe.0..=probe.1 {
        let e = events(i)?;
        if alg.intersect_measure(a, &e) > &factor * &mu_a * alg.measure(&e) {
            violations.push(i);
        }
    }
    let i0 = match violations.last() {
        None => Some(probe.0),
        Some(&v) if v < probe.1 => Some(v + 1),
        Some(_) => None,
    };
    Ok(ConditionReport { probe, i0, violations })
}

/// Condition (M1) with `A = ⋃_{j=q1}^{q2} E_j`.
pub fn check_m1<M, F>(alg: &M, events: F, delta: &Rational, q1: u64, q2: u64, probe: (u64, u64)) -> Result<ConditionReport>
where
    M: EventAlgebra,
    F: Fn(u64) -> Result<M::Set>,
{
    if q1 >= q2 {
        return invalid("check_m1 requires q1 < q2");
    }
    let mut a = events(q1)?;
    for j in q1 + 1..=q2 {
        a = alg.union(&a, &events(j)?);
    }
    probe_condition(alg, &a, events, delta, probe)
}

/// Condition (B1) with `A` the closed ball of the given center and radius.
pub fn check_b1<F>(events: F, center: &Rational, radius: &Rational, delta: &Rational, probe: (u64, u64)) -> Result<ConditionReport>
where
    F: Fn(u64) -> Result<CircleSet>,
{
    let ball = CircleSet::from_arcs(&[(center.clone(), radius.clone())])?;
    probe_condition(&Circle, &ball, events, delta, probe)
}
