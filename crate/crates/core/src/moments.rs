//! Divergence sums, pairwise second moments, the Reduction Lemma, and the
//! hypothesis checkers for windows of approximation sets.

use std::collections::BTreeMap;
use std::io::Write;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{Pow, ToPrimitive, Zero};
use serde_json::{json, Value};

use crate::contfrac::CFExpansion;
use crate::error::{invalid, LabError, Result};
use crate::numtheory::{euler_phi, phi_qb};
use crate::rational::{fmt_rational, from_u64, to_f64, Rational, RationalSum};
use crate::targets::ApproxFn;
use crate::unitcircle::CircleSet;

/// Windows larger than this are refused by [`overlap_moments`].
pub const DEFAULT_MAX_WINDOW: usize = 4096;

/// Finite sorted set of indices `S_k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexWindow {
    members: Vec<u64>,
}

impl IndexWindow {
    pub fn new(mut members: Vec<u64>) -> Self {
        members.sort_unstable();
        members.dedup();
        Self { members }
    }

    /// `{lo, …, hi}`.
    pub fn range(lo: u64, hi: u64) -> Self {
        Self { members: (lo..=hi).collect() }
    }

    pub fn members(&self) -> &[u64] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn min(&self) -> Option<u64> {
        self.members.first().copied()
    }

    pub fn without(&self, m: u64) -> Self {
        Self { members: self.members.iter().copied().filter(|&x| x != m).collect() }
    }
}

/// Weight `w(q)` in `Σ ψ(q)·w(q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weight {
    Unit,
    PhiOverQ,
    /// `|𝓘_q|/q = φ(q, B)/q`.
    IOverQ { a0: i64, b: u64 },
}

impl Weight {
    pub fn at(&self, q: u64) -> Result<Rational> {
        Ok(match *self {
            Weight::Unit => Rational::from_integer(1.into()),
            Weight::PhiOverQ => from_u64(euler_phi(q)?) / from_u64(q),
            Weight::IOverQ { a0, b } => {
                if b == 0 || a0.unsigned_abs().gcd(&b) != 1 {
                    return invalid(format!("A = {a0}, B = {b} must be coprime with B ≥ 1"));
                }
                from_u64(phi_qb(q, b)?) / from_u64(q)
            }
        })
    }
}

/// `Σ_{q ∈ S} ψ(q)·w(q)`, exact.
pub fn psi_sum(window: &IndexWindow, psi: &ApproxFn, weight: Weight) -> Result<Rational> {
    let mut acc = RationalSum::new();
    for &q in window.members() {
        let v = psi.value(q)?;
        if !v.is_zero() {
            acc.add(&(v * weight.at(q)?));
        }
    }
    Ok(acc.total())
}

/// Exact second-moment data of `{E_i}_{i ∈ S}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub window: IndexWindow,
    /// `Ψ = Σ μ(E_i)`.
    pub psi: Rational,
    /// `Σ_{s<t} μ(E_s ∩ E_t)`.
    pub overlap_offdiag: Rational,
    /// `Σ_{s,t} μ(E_s ∩ E_t)`.
    pub overlap_full: Rational,
    /// `overlap_offdiag / Ψ²`.
    pub c_prime: Option<Rational>,
    /// `overlap_full / Ψ²`.
    pub c_full: Option<Rational>,
}

impl MomentReport {
    pub fn to_json(&self) -> Value {
        let opt = |r: &Option<Rational>| r.as_ref().map(fmt_rational);
        json!({
            "window": self.window.members(),
            "psi": fmt_rational(&self.psi),
            "overlap_offdiag": fmt_rational(&self.overlap_offdiag),
            "overlap_full": fmt_rational(&self.overlap_full),
            "C_prime": opt(&self.c_prime),
            "C_full": opt(&self.c_full),
        })
    }

    /// One row per quantity: `quantity,exact,approx`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["quantity", "exact", "approx"])?;
        let mut row = |name: &str, v: &Option<Rational>| -> Result<()> {
            match v {
                Some(v) => w.write_record([name, &fmt_rational(v), &format!("{:.12e}", to_f64(v))])?,
                None => w.write_record([name, "", ""])?,
            }
            Ok(())
        };
        row("psi", &Some(self.psi.clone()))?;
        row("overlap_offdiag", &Some(self.overlap_offdiag.clone()))?;
        row("overlap_full", &Some(self.overlap_full.clone()))?;
        row("C_prime", &self.c_prime)?;
        row("C_full", &self.c_full)?;
        w.flush()?;
        Ok(())
    }
}

/// Pairwise data for a window: measures and the symmetric intersection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTable {
    pub window: IndexWindow,
    pub measures: Vec<Rational>,
    /// `pairs[i][j] = μ(E_{s_i} ∩ E_{s_j})` for `i < j`; other entries unused.
    pub pairs: Vec<Vec<Rational>>,
}

impl PairTable {
    pub fn from_sets(window: &IndexWindow, sets: &[CircleSet]) -> Self {
        let n = sets.len();
        let measures = sets.iter().map(CircleSet::measure).collect();
        let mut pairs = vec![vec![Rational::zero(); n]; n];
        for i in 0..n {
            for j in i + 1..n {
                pairs[i][j] = sets[i].intersect_measure(&sets[j]);
            }
        }
        Self { window: window.clone(), measures, pairs }
    }

    /// Builds the table from explicit maps; pairs absent from the map count as disjoint.
    pub fn from_maps(
        window: &IndexWindow,
        measures: &BTreeMap<u64, Rational>,
        pair_measures: &BTreeMap<(u64, u64), Rational>,
    ) -> Result<Self> {
        let s = window.members();
        let mut ms = Vec::with_capacity(s.len());
        for q in s {
            ms.push(measures.get(q).cloned().ok_or_else(|| LabError::InvalidArgument(format!("no measure for {q}")))?);
        }
        let n = s.len();
        let mut pairs = vec![vec![Rational::zero(); n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = pair_measures.get(&(s[i], s[j])).or_else(|| pair_measures.get(&(s[j], s[i])));
                if let Some(v) = v {
                    pairs[i][j] = v.clone();
                }
            }
        }
        Ok(Self { window: window.clone(), measures: ms, pairs })
    }

    fn pair(&self, i: usize, j: usize) -> &Rational {
        if i < j {
            &self.pairs[i][j]
        } else {
            &self.pairs[j][i]
        }
    }

    /// Sums over the sub-window of positions `alive`.
    fn totals(&self, alive: &[bool]) -> (Rational, Rational) {
        let mut psi = RationalSum::new();
        let mut off = RationalSum::new();
        let n = self.measures.len();
        for i in (0..n).filter(|&i| alive[i]) {
            psi.add(&self.measures[i]);
            for j in (i + 1..n).filter(|&j| alive[j]) {
                off.add(&self.pairs[i][j]);
            }
        }
        (psi.total(), off.total())
    }
}

/// Exact pairwise intersections of `{E_i}_{i ∈ S}`; windows above `max_window` are refused.
pub fn overlap_moments<F>(window: &IndexWindow, build: F, max_window: usize) -> Result<MomentReport>
where
    F: Fn(u64) -> Result<CircleSet>,
{
    if window.is_empty() {
        return invalid("overlap moments need a non-empty window");
    }
    if window.len() > max_window {
        return Err(LabError::Resource(format!(
            "window of {} indices exceeds the pairwise limit {max_window}",
            window.len()
        )));
    }
    let sets = window.members().iter().map(|&q| build(q)).collect::<Result<Vec<_>>>()?;
    Ok(report_from(&PairTable::from_sets(window, &sets)))
}

pub fn report_from(t: &PairTable) -> MomentReport {
    let alive = vec![true; t.measures.len()];
    let (psi, off) = t.totals(&alive);
    let full = &off * from_u64(2) + &psi;
    let (c_prime, c_full) = if psi.is_zero() {
        (None, None)
    } else {
        let sq = &psi * &psi;
        (Some(&off / &sq), Some(&full / &sq))
    };
    MomentReport { window: t.window.clone(), psi, overlap_offdiag: off, overlap_full: full, c_prime, c_full }
}

fn holds(off: &Rational, psi: &Rational, c_prime: &Rational) -> bool {
    *off <= c_prime * psi * psi
}

/// Smallest `m ∈ S` whose removal keeps `Σ_{s<t} μ(E_s∩E_t) ≤ C′(Σ μ(E_i))²`.
pub fn reduction_step(t: &PairTable, c_prime: &Rational) -> Result<u64> {
    let alive = vec![true; t.measures.len()];
    reduction_step_alive(t, &alive, c_prime)
}

fn reduction_step_alive(t: &PairTable, alive: &[bool], c_prime: &Rational) -> Result<u64> {
    let s = t.window.members();
    let idx: Vec<usize> = (0..s.len()).filter(|&i| alive[i]).collect();
    if idx.is_empty() {
        return invalid("reduction step needs a non-empty window");
    }
    let (psi, off) = t.totals(alive);
    if !holds(&off, &psi, c_prime) {
        return invalid(format!(
            "window violates the quasi-independence inequality: {} > {}·{}²",
            fmt_rational(&off),
            fmt_rational(c_prime),
            fmt_rational(&psi)
        ));
    }
    if idx.len() <= 2 {
        return Ok(s[idx[0]]);
    }
    for &m in &idx {
        let mut row = RationalSum::new();
        for &j in idx.iter().filter(|&&j| j != m) {
            row.add(t.pair(m, j));
        }
        let off_m = &off - row.total();
        let psi_m = &psi - &t.measures[m];
        if holds(&off_m, &psi_m, c_prime) {
            return Ok(s[m]);
        }
    }
    Err(LabError::Internal("no removable index exists, contradicting the Reduction Lemma".into()))
}

/// Shrinks `S` by repeated reduction steps until `ε* ≤ Σ μ(E_i) ≤ ε`, `ε* = min{c, ε/2}`.
pub fn reduce_to_band(t: &PairTable, eps: &Rational, c: &Rational, c_prime: &Rational) -> Result<IndexWindow> {
    let half = eps / from_u64(2);
    let eps_star = if *c < half { c.clone() } else { half };
    if let Some((i, m)) = t.measures.iter().enumerate().find(|(_, m)| **m >= eps_star) {
        return invalid(format!(
            "term μ(E_{}) = {} is not below ε* = {}",
            t.window.members()[i],
            fmt_rational(m),
            fmt_rational(&eps_star)
        ));
    }
    let mut alive = vec![true; t.measures.len()];
    let (mut psi, off) = t.totals(&alive);
    if psi < eps_star {
        return invalid(format!("window sum {} is below ε* = {}", fmt_rational(&psi), fmt_rational(&eps_star)));
    }
    if !holds(&off, &psi, c_prime) {
        return invalid("window violates the quasi-independence inequality");
    }
    let s = t.window.members();
    while psi > *eps {
        let m = reduction_step_alive(t, &alive, c_prime)?;
        let pos = s.binary_search(&m).expect("member");
        alive[pos] = false;
        psi -= &t.measures[pos];
    }
    let (psi, off) = t.totals(&alive);
    if psi < eps_star || psi > *eps || !holds(&off, &psi, c_prime) {
        return Err(LabError::Internal("band reduction failed its own revalidation".into()));
    }
    Ok(IndexWindow::new((0..s.len()).filter(|&i| alive[i]).map(|i| s[i]).collect()))
}

/// Partial sums `Σ_{q≤Q} ψ(q)`, `Σ_{q≤Q} φ(q)ψ(q)/q` and their ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct DsRatio {
    pub sum_psi: Rational,
    pub sum_ds: Rational,
    pub ratio: Option<Rational>,
}

pub fn ds_condition_ratio(big_q: u64, psi: &ApproxFn) -> Result<DsRatio> {
    if big_q == 0 {
        return invalid("Q must be at least 1");
    }
    let mut a = RationalSum::new();
    let mut b = RationalSum::new();
    for (q, v) in psi.support(1, big_q)? {
        b.add(&(&v * from_u64(euler_phi(q)?) / from_u64(q)));
        a.add(&v);
    }
    let (sum_psi, sum_ds) = (a.total(), b.total());
    let ratio = (!sum_psi.is_zero()).then(|| &sum_ds / &sum_psi);
    Ok(DsRatio { sum_psi, sum_ds, ratio })
}

/// Outcome of checking one window against the hypotheses of the general criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralDsCheck {
    /// `|γ − p_k/q_k| ≤ ψ(q)` for every `q ∈ S_k`, certified through `1/(q_k q_{k+1})`.
    pub c1: bool,
    /// `Σ_{q∈S_k} ψφ/q ≥ q_k^e` for the requested exponent `e`.
    pub c2: bool,
    pub mass: Rational,
    /// `max ψ(q)φ(q, q_k)/q` over `q ∈ S_k` with `ψ(q) ≥ 1/2`, zero if there are none.
    pub c3_term: Rational,
}

pub fn check_general_ds_window(
    window: &IndexWindow,
    psi: &ApproxFn,
    cf: &CFExpansion,
    k: usize,
    exponent: u32,
) -> Result<GeneralDsCheck> {
    let err = cf.approx_error_upper(k)?;
    let qk: BigUint = cf.denominator(k)?.clone();
    let half = Rational::new(1.into(), 2.into());
    let mut c1 = true;
    let mut mass = RationalSum::new();
    let mut c3 = Rational::zero();
    for &q in window.members() {
        let v = psi.value(q)?;
        if err > v {
            c1 = false;
        }
        if v.is_zero() {
            continue;
        }
        mass.add(&(&v * from_u64(euler_phi(q)?) / from_u64(q)));
        if v >= half {
            let g = (&qk % q).to_u64().expect("residue below q").gcd(&q);
            let term = &v * from_u64(phi_qb(q, g.max(1))?) / from_u64(q);
            if term > c3 {
                c3 = term;
            }
        }
    }
    let mass = mass.total();
    let c2 = mass >= Rational::from_integer(BigInt::from(Pow::pow(&qk, exponent)));
    Ok(GeneralDsCheck { c1, c2, mass, c3_term: c3 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contfrac::{construct_gamma_for_psi, GammaOptions};
    use crate::rational::rat;
    use crate::targets::build_eq_star;

    fn half() -> CircleSet {
        CircleSet::from_real_intervals([(rat(0, 1), rat(1, 2))])
    }

    #[test]
    fn psi_sum_examples() {
        let s = IndexWindow::range(1, 3);
        let psi = ApproxFn::expr("1/2").unwrap();
        assert_eq!(psi_sum(&s, &psi, Weight::PhiOverQ).unwrap(), rat(13, 12));
        assert_eq!(psi_sum(&s, &psi, Weight::Unit).unwrap(), rat(3, 2));
        let zero = ApproxFn::expr("0").unwrap();
        assert_eq!(psi_sum(&s, &zero, Weight::PhiOverQ).unwrap(), rat(0, 1));
        assert_eq!(psi_sum(&IndexWindow::range(12, 12), &psi, Weight::IOverQ { a0: 1, b: 2 }).unwrap(), rat(1, 3));
    }

    #[test]
    fn constant_sets_are_sharp() {
        for n in [4u64, 16, 64] {
            let r = overlap_moments(&IndexWindow::range(1, n), |_| Ok(half()), DEFAULT_MAX_WINDOW).unwrap();
            let nn = Rational::from_integer(n.into());
            assert_eq!(r.psi, &nn / from_u64(2));
            assert_eq!(r.c_full, Some(rat(2, 1)));
            assert_eq!(r.overlap_full, &r.overlap_offdiag * from_u64(2) + &r.psi);
            if n == 4 {
                assert_eq!(r.overlap_offdiag, rat(3, 1));
                assert_eq!(r.overlap_full, rat(8, 1));
            }
        }
    }

    #[test]
    fn disjoint_and_prime_windows() {
        let sets = [(0, 1), (1, 4), (2, 4)];
        let r = overlap_moments(
            &IndexWindow::range(0, 1),
            |i| {
                let (a, b) = sets[i as usize];
                Ok(CircleSet::from_real_intervals([(rat(a, 4), rat(b, 4))]))
            },
            16,
        )
        .unwrap();
        assert_eq!(r.c_prime, Some(rat(0, 1)));
        let psi = rat(1, 4);
        let r = overlap_moments(&IndexWindow::new(vec![2, 3, 5, 7]), |q| build_eq_star(q, 0, 1, &psi), 16).unwrap();
        assert!(r.c_prime.is_some());
        assert!(overlap_moments(&IndexWindow::range(1, 20), |_| Ok(half()), 10).is_err());
    }

    #[test]
    fn reduction_examples() {
        let w = IndexWindow::range(1, 3);
        let t = PairTable::from_sets(&w, &[half(), half(), half()]);
        assert_eq!(reduction_step(&t, &rat(2, 3)).unwrap(), 1);
        assert!(reduction_step(&t, &rat(1, 3)).is_err());
        let w2 = IndexWindow::range(5, 6);
        let t2 = PairTable::from_sets(&w2, &[half(), half()]);
        assert_eq!(reduction_step(&t2, &rat(1, 2)).unwrap(), 5);
    }

    #[test]
    fn band_reduction() {
        let w = IndexWindow::range(1, 40);
        let small = CircleSet::from_real_intervals([(rat(0, 1), rat(1, 40))]);
        let t = PairTable::from_sets(&w, &vec![small; 40]);
        // Σ = 1, offdiag = 780/40, so C′ = 20 admits the window.
        let band = reduce_to_band(&t, &rat(1, 2), &rat(1, 1), &rat(20, 1)).unwrap();
        let total: Rational = band.members().iter().map(|_| rat(1, 40)).sum();
        assert!(total >= rat(1, 4) && total <= rat(1, 2));
        let same = reduce_to_band(&t, &rat(2, 1), &rat(1, 1), &rat(20, 1)).unwrap();
        assert_eq!(same, w);
        assert!(reduce_to_band(&t, &rat(1, 100), &rat(1, 1), &rat(20, 1)).is_err());
    }

    #[test]
    fn ds_ratio_examples() {
        let psi = ApproxFn::table([(12u64, rat(1, 3))].into_iter().collect()).unwrap();
        let r = ds_condition_ratio(100, &psi).unwrap();
        assert_eq!(r.ratio, Some(rat(1, 3)));
        let r = ds_condition_ratio(100, &ApproxFn::expr("0").unwrap()).unwrap();
        assert_eq!(r.ratio, None);
    }

    #[test]
    fn general_ds_checks() {
        let cf = crate::contfrac::cf_of_rational(1, 3).unwrap();
        let psi = ApproxFn::expr("1/(4q)").unwrap();
        let r = check_general_ds_window(&IndexWindow::range(10, 20), &psi, &cf, 1, 8).unwrap();
        assert!(r.c1);
        assert_eq!(r.c3_term, rat(0, 1));

        let psi = ApproxFn::expr("q^8").unwrap();
        let (cf, cert) = construct_gamma_for_psi(&psi, &GammaOptions { steps: 3, ..Default::default() }).unwrap();
        for s in &cert.steps {
            let w = IndexWindow::range(s.window.0.to_u64().unwrap(), s.window.1.to_u64().unwrap());
            let r = check_general_ds_window(&w, &psi, &cf, s.k - 1, 9).unwrap();
            assert!(r.c1 && r.c2, "step {}", s.i);
        }
    }
}
