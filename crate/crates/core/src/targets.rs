//! Approximating functions, inhomogeneous shifts, and the approximation sets
//! `E_q`, `E′_q`, `E^𝓘_q`, `E*_q` as exact [`CircleSet`]s.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, Zero};
use serde_json::{json, Value};

use crate::contfrac::CFExpansion;
use crate::error::{invalid, LabError, Result};
use crate::expr::Expr;
use crate::numtheory::{enumerate_iq, euler_phi, factor, phi_qb, ResidueSet};
use crate::rational::{fmt_rational, from_u64, parse_rational, Rational};
use crate::unitcircle::CircleSet;

#[derive(Debug, Clone, PartialEq)]
enum PsiRule {
    Table(BTreeMap<u64, Rational>),
    Expr(Expr),
}

/// Approximating function `ψ: ℕ → ℚ≥0`, given by a finite table or an expression in `q`.
///
/// Expression rules may carry a cut-off `max_q` beyond which `ψ` vanishes.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxFn {
    rule: PsiRule,
    max_q: Option<u64>,
}

/// Where an [`ApproxFn`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Table,
    Family,
    CongruenceRestricted,
}

impl ApproxFn {
    pub fn expr(source: &str) -> Result<Self> {
        Ok(Self { rule: PsiRule::Expr(Expr::parse(source)?), max_q: None })
    }

    pub fn constant(v: Rational) -> Result<Self> {
        if v.is_negative() {
            return invalid("ψ must be non-negative");
        }
        Self::expr(&fmt_rational(&v))
    }

    pub fn table(values: BTreeMap<u64, Rational>) -> Result<Self> {
        if values.contains_key(&0) {
            return invalid("ψ table indices start at 1");
        }
        if let Some((q, v)) = values.iter().find(|(_, v)| v.is_negative()) {
            return invalid(format!("ψ({q}) = {} is negative", fmt_rational(v)));
        }
        let values = values.into_iter().filter(|(_, v)| !v.is_zero()).collect();
        Ok(Self { rule: PsiRule::Table(values), max_q: None })
    }

    /// Restricts the support to `q ≤ max_q`.
    pub fn truncated(mut self, max_q: u64) -> Self {
        self.max_q = Some(self.max_q.map_or(max_q, |m| m.min(max_q)));
        self
    }

    /// Reads a CSV table with header `q,psi_num,psi_den`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let want = ["q", "psi_num", "psi_den"];
        if headers.len() != 3 || headers.iter().zip(want).any(|(h, w)| h != w) {
            return Err(LabError::Parse(format!("ψ table header must be q,psi_num,psi_den, got {headers:?}")));
        }
        let mut values = BTreeMap::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let q: u64 = rec[0].parse().map_err(|_| LabError::Parse(format!("row {}: bad q {:?}", line + 2, &rec[0])))?;
            let v = parse_rational(&format!("{}/{}", &rec[1], &rec[2]))?;
            if values.insert(q, v).is_some() {
                return Err(LabError::Parse(format!("row {}: duplicate q = {q}", line + 2)));
            }
        }
        Self::table(values)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn provenance(&self) -> Provenance {
        match &self.rule {
            PsiRule::Table(_) => Provenance::Table,
            PsiRule::Expr(e) if e.source().contains("restrict") => Provenance::CongruenceRestricted,
            PsiRule::Expr(_) => Provenance::Family,
        }
    }

    pub fn max_q(&self) -> Option<u64> {
        match &self.rule {
            PsiRule::Table(t) => {
                let last = t.keys().next_back().copied().unwrap_or(0);
                Some(self.max_q.map_or(last, |m| m.min(last)))
            }
            PsiRule::Expr(_) => self.max_q,
        }
    }

    pub fn value(&self, q: u64) -> Result<Rational> {
        if q == 0 || self.max_q.is_some_and(|m| q > m) {
            return Ok(Rational::zero());
        }
        let v = match &self.rule {
            PsiRule::Table(t) => t.get(&q).cloned().unwrap_or_else(Rational::zero),
            PsiRule::Expr(e) => e.eval_at(q)?,
        };
        if v.is_negative() {
            return invalid(format!("ψ({q}) = {} is negative", fmt_rational(&v)));
        }
        Ok(v)
    }

    /// `(q, ψ(q))` for `q ∈ [lo, hi]` with `ψ(q) > 0`.
    pub fn support(&self, lo: u64, hi: u64) -> Result<Vec<(u64, Rational)>> {
        let lo = lo.max(1);
        let hi = self.max_q().map_or(hi, |m| m.min(hi));
        let mut out = Vec::new();
        match &self.rule {
            PsiRule::Table(t) => {
                if lo <= hi {
                    out.extend(t.range(lo..=hi).map(|(&q, v)| (q, v.clone())));
                }
            }
            PsiRule::Expr(_) => {
                for q in lo..=hi {
                    let v = self.value(q)?;
                    if !v.is_zero() {
                        out.push((q, v));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn describe(&self) -> String {
        let base = match &self.rule {
            PsiRule::Table(t) => format!("table({} entries)", t.len()),
            PsiRule::Expr(e) => e.source().to_string(),
        };
        match self.max_q {
            Some(m) => format!("{base} for q ≤ {m}"),
            None => base,
        }
    }

    pub fn to_json(&self) -> Value {
        match &self.rule {
            PsiRule::Table(t) => json!({
                "kind": "table",
                "max_q": self.max_q,
                "rows": t.iter().map(|(q, v)| json!([q, fmt_rational(v)])).collect::<Vec<_>>(),
            }),
            PsiRule::Expr(e) => json!({ "kind": "expr", "source": e.source(), "max_q": self.max_q }),
        }
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |m: &str| LabError::Parse(format!("ψ description: {m}"));
        let max_q = match v.get("max_q") {
            None | Some(Value::Null) => None,
            Some(m) => Some(m.as_u64().ok_or_else(|| bad("max_q must be an integer"))?),
        };
        let base = match v.get("kind").and_then(Value::as_str) {
            Some("expr") => Self::expr(v.get("source").and_then(Value::as_str).ok_or_else(|| bad("missing source"))?)?,
            Some("table") => {
                let rows = v.get("rows").and_then(Value::as_array).ok_or_else(|| bad("missing rows"))?;
                let mut t = BTreeMap::new();
                for row in rows {
                    let q = row.get(0).and_then(Value::as_u64).ok_or_else(|| bad("row index"))?;
                    let val = row.get(1).and_then(Value::as_str).ok_or_else(|| bad("row value"))?;
                    t.insert(q, parse_rational(val)?);
                }
                Self::table(t)?
            }
            _ => return Err(bad("kind must be \"expr\" or \"table\"")),
        };
        Ok(match max_q {
            Some(m) => base.truncated(m),
            None => base,
        })
    }
}

/// The inhomogeneous shift `γ`: exact rational, or a convergent surrogate of an expansion.
#[derive(Debug, Clone, PartialEq)]
pub enum InhomShift {
    Rational(Rational),
    Convergent { cf: CFExpansion, k: usize },
}

impl InhomShift {
    pub fn rational(a: i64, b: u64) -> Result<Self> {
        if b == 0 {
            return invalid("γ denominator must be positive");
        }
        Ok(Self::Rational(Rational::new(a.into(), b.into())))
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(Self::Rational(parse_rational(s)?))
    }

    /// The rational used for set construction (`p_k/q_k` for a surrogate).
    pub fn value(&self) -> Result<Rational> {
        match self {
            Self::Rational(r) => Ok(r.clone()),
            Self::Convergent { cf, k } => {
                let (p, q) = cf.convergent(*k)?;
                Ok(Rational::new(p, q.into()))
            }
        }
    }

    /// Certified bound on `|γ − value()|`.
    pub fn error_budget(&self) -> Result<Rational> {
        match self {
            Self::Rational(_) => Ok(Rational::zero()),
            Self::Convergent { cf, k } => cf.approx_error_upper(*k),
        }
    }

    pub fn depth(&self) -> Option<usize> {
        match self {
            Self::Rational(_) => None,
            Self::Convergent { k, .. } => Some(*k),
        }
    }

    /// `(A, B)` with `γ = A/B` in lowest terms.
    pub fn num_den(&self) -> Result<(BigInt, BigInt)> {
        let v = self.value()?;
        Ok((v.numer().clone(), v.denom().clone()))
    }
}

fn arcs_at(q: u64, gamma: &Rational, psi: &Rational, residues: impl Iterator<Item = u64>) -> Result<CircleSet> {
    if psi.is_zero() {
        return Ok(CircleSet::empty());
    }
    let qq = from_u64(q);
    let radius = psi / &qq;
    let arcs: Vec<_> = residues.map(|a| ((from_u64(a) + gamma) / &qq, radius.clone())).collect();
    CircleSet::from_arcs(&arcs)
}

fn require_q(q: u64) -> Result<()> {
    if q == 0 {
        return invalid("q must be positive");
    }
    Ok(())
}

/// `E_q = ⋃_{a ∈ ℤ_q} B((a+γ)/q, ψ(q)/q)`.
pub fn build_eq(q: u64, gamma: &Rational, psi: &Rational) -> Result<CircleSet> {
    require_q(q)?;
    arcs_at(q, gamma, psi, 0..q)
}

/// `E′_q`: as [`build_eq`] but over `a ∈ ℤ*_q`.
pub fn build_eq_prime(q: u64, gamma: &Rational, psi: &Rational) -> Result<CircleSet> {
    require_q(q)?;
    arcs_at(q, gamma, psi, (0..q).filter(|a| a.gcd(&q) == 1))
}

/// `E^𝓘_q`: arcs at `(a+γ)/q` for `a ∈ I`.
pub fn build_eq_i(q: u64, gamma: &Rational, psi: &Rational, iset: &ResidueSet) -> Result<CircleSet> {
    require_q(q)?;
    if iset.modulus != q {
        return invalid(format!("residue set modulus {} does not match q = {q}", iset.modulus));
    }
    arcs_at(q, gamma, psi, iset.members.iter().copied())
}

/// Numerators `a ∈ [0, Bq)` with `a ≡ A (mod B)` and `(a, Bq) = 1`.
pub fn star_numerators(q: u64, a0: i64, b: u64) -> Result<Vec<u64>> {
    require_q(q)?;
    if b == 0 || a0.unsigned_abs().gcd(&b) != 1 {
        return invalid(format!("A = {a0} and B = {b} must be coprime with B ≥ 1"));
    }
    let bq = b * q;
    let start = a0.rem_euclid(b as i64) as u64;
    Ok((0..q).map(|j| start + j * b).filter(|a| a.gcd(&bq) == 1).collect())
}

/// `E*_q`: arcs at `a/(Bq)`, radius `ψ(q)/q`, over `a ∈ ℤ*_{Bq}` with `a ≡ A (mod B)`.
pub fn build_eq_star(q: u64, a0: i64, b: u64, psi: &Rational) -> Result<CircleSet> {
    let nums = star_numerators(q, a0, b)?;
    if psi.is_zero() {
        return Ok(CircleSet::empty());
    }
    let den = from_u64(b * q);
    let radius = psi / from_u64(q);
    let arcs: Vec<_> = nums.into_iter().map(|a| (from_u64(a) / &den, radius.clone())).collect();
    CircleSet::from_arcs(&arcs)
}

/// `μ(E^𝓘_q) = 2ψφ(q,B)/q − T/q` with `T` the total overlap of neighbouring arcs.
#[derive(Debug, Clone, PartialEq)]
pub struct LargePsiParts {
    pub main: Rational,
    pub t: Rational,
    pub exact: Rational,
}

pub fn large_psi_measure_parts(q: u64, a0: i64, b: u64, psi: &Rational) -> Result<LargePsiParts> {
    let iset = enumerate_iq(q, a0, b)?;
    if iset.is_empty() {
        return invalid(format!("𝓘_{q} is empty for A = {a0}, B = {b}"));
    }
    let two_psi = psi * from_u64(2);
    let m = &iset.members;
    let mut t = Rational::zero();
    for i in 0..m.len() {
        let gap = if i + 1 < m.len() { m[i + 1] - m[i] } else { m[0] + q - m[i] };
        let gap = from_u64(gap);
        if gap <= two_psi {
            t += &two_psi - gap;
        }
    }
    let qq = from_u64(q);
    let main = &two_psi * from_u64(phi_qb(q, b)?) / &qq;
    let exact = &main - &t / &qq;
    let gamma = Rational::new(a0.into(), b.into());
    let measured = build_eq_i(q, &gamma, psi, &iset)?.measure();
    if measured != exact {
        return Err(LabError::Internal(format!(
            "gap decomposition {} disagrees with set measure {} at q = {q}",
            fmt_rational(&exact),
            fmt_rational(&measured)
        )));
    }
    Ok(LargePsiParts { main, t, exact })
}

/// Worst grid discrepancy of `{a/q : a ∈ I}` and the calibrated bound `4·2^{ω(q)}`.
pub fn discrepancy_iq(q: u64, iset: &ResidueSet, grid: u64) -> Result<(Rational, Rational)> {
    if grid < 2 {
        return invalid("grid denominator must be at least 2");
    }
    if iset.modulus != q {
        return invalid("residue set modulus does not match q");
    }
    let size = from_u64(iset.len() as u64);
    let mut worst = Rational::zero();
    let mut idx = 0usize;
    for j in 0..=grid {
        // count a with a/q < j/grid, i.e. a·grid < q·j
        while idx < iset.members.len() && (iset.members[idx] as u128) * (grid as u128) < (q as u128) * (j as u128) {
            idx += 1;
        }
        let y = Rational::new(j.into(), grid.into());
        let err = (from_u64(idx as u64) - y * &size).abs();
        if err > worst {
            worst = err;
        }
    }
    let bound = from_u64(4u64 << factor(q)?.omega());
    Ok((worst, bound))
}

/// One of the four approximation-set families with its parameters fixed.
#[derive(Debug, Clone)]
pub enum TargetFamily {
    Eq { gamma: Rational, psi: ApproxFn },
    EqPrime { gamma: Rational, psi: ApproxFn },
    /// `E^𝓘_q` with `𝓘_q` taken from `(A, B)` and an independent shift `γ`.
    EqI { gamma: Rational, a0: i64, b: u64, psi: ApproxFn },
    EqStar { a0: i64, b: u64, psi: ApproxFn },
}

impl TargetFamily {
    pub fn psi(&self) -> &ApproxFn {
        match self {
            Self::Eq { psi, .. } | Self::EqPrime { psi, .. } | Self::EqI { psi, .. } | Self::EqStar { psi, .. } => psi,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Eq { .. } => "eq",
            Self::EqPrime { .. } => "eq-prime",
            Self::EqI { .. } => "eq-i",
            Self::EqStar { .. } => "eq-star",
        }
    }

    pub fn build(&self, q: u64) -> Result<CircleSet> {
        let psi = self.psi().value(q)?;
        match self {
            Self::Eq { gamma, .. } => build_eq(q, gamma, &psi),
            Self::EqPrime { gamma, .. } => build_eq_prime(q, gamma, &psi),
            Self::EqI { gamma, a0, b, .. } => build_eq_i(q, gamma, &psi, &enumerate_iq(q, *a0, *b)?),
            Self::EqStar { a0, b, .. } => build_eq_star(q, *a0, *b, &psi),
        }
    }

    /// Arc centres as `(numerators, common denominator)` together with the radius.
    pub fn arcs(&self, q: u64) -> Result<(Vec<BigInt>, BigInt, Rational)> {
        require_q(q)?;
        let psi = self.psi().value(q)?;
        let radius = &psi / from_u64(q);
        let shifted = |gamma: &Rational, residues: Vec<u64>| {
            // (a + A/B)/q = (aB + A)/(Bq)
            let (a, b) = (gamma.numer(), gamma.denom());
            let nums = residues.into_iter().map(|r| BigInt::from(r) * b + a).collect();
            (nums, b * BigInt::from(q))
        };
        let (nums, den) = match self {
            Self::Eq { gamma, .. } => shifted(gamma, (0..q).collect()),
            Self::EqPrime { gamma, .. } => shifted(gamma, (0..q).filter(|a| a.gcd(&q) == 1).collect()),
            Self::EqI { gamma, a0, b, .. } => shifted(gamma, enumerate_iq(q, *a0, *b)?.members),
            Self::EqStar { a0, b, .. } => {
                (star_numerators(q, *a0, *b)?.into_iter().map(BigInt::from).collect(), BigInt::from(b * q))
            }
        };
        Ok((nums, den, radius))
    }

    /// Expected measure when arcs do not overlap: `2ψ(q)·(number of arcs)/q`.
    pub fn nominal_measure(&self, q: u64) -> Result<Rational> {
        let psi = self.psi().value(q)?;
        let count = match self {
            Self::Eq { .. } => q,
            Self::EqPrime { .. } => euler_phi(q)?,
            Self::EqI { b, .. } | Self::EqStar { b, .. } => phi_qb(q, *b)?,
        };
        Ok(psi * from_u64(2 * count) / from_u64(q))
    }

    pub fn to_json(&self) -> Value {
        let mut v = match self {
            Self::Eq { gamma, .. } | Self::EqPrime { gamma, .. } => json!({ "gamma": fmt_rational(gamma) }),
            Self::EqI { gamma, a0, b, .. } => json!({ "gamma": fmt_rational(gamma), "A": a0, "B": b }),
            Self::EqStar { a0, b, .. } => json!({ "A": a0, "B": b }),
        };
        v["set"] = json!(self.name());
        v["psi"] = self.psi().to_json();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;

    #[test]
    fn eq_examples() {
        assert_eq!(build_eq(4, &rat(0, 1), &rat(1, 4)).unwrap().measure(), rat(1, 2));
        assert!(build_eq(4, &rat(0, 1), &rat(0, 1)).unwrap().is_empty());
        let a = build_eq(5, &rat(1, 3), &rat(1, 4)).unwrap().measure();
        let b = build_eq(5, &rat(0, 1), &rat(1, 4)).unwrap().measure();
        assert_eq!(a, b);
        assert_eq!(a, rat(1, 2));
    }

    #[test]
    fn eq_prime_examples() {
        assert_eq!(build_eq_prime(4, &rat(0, 1), &rat(1, 4)).unwrap().measure(), rat(1, 4));
        assert_eq!(build_eq_prime(3, &rat(0, 1), &rat(1, 1)).unwrap().measure(), rat(1, 1));
        assert_eq!(build_eq_prime(7, &rat(2, 9), &rat(1, 3)).unwrap().measure(), rat(2, 3) * rat(6, 7));
    }

    #[test]
    fn eq_i_examples() {
        let i = enumerate_iq(12, 1, 2).unwrap();
        assert_eq!(build_eq_i(12, &rat(0, 1), &rat(1, 4), &i).unwrap().measure(), rat(1, 3));
        let empty = ResidueSet::new(12, vec![]).unwrap();
        assert!(build_eq_i(12, &rat(0, 1), &rat(1, 4), &empty).unwrap().is_empty());
        let full = ResidueSet::full(9);
        assert_eq!(
            build_eq_i(9, &rat(1, 5), &rat(1, 3), &full).unwrap(),
            build_eq(9, &rat(1, 5), &rat(1, 3)).unwrap()
        );
        assert!(build_eq_i(10, &rat(0, 1), &rat(1, 4), &full).is_err());
    }

    #[test]
    fn eq_star_examples() {
        let s = build_eq_star(2, 0, 1, &rat(1, 2)).unwrap();
        assert_eq!(s.intervals(), &[(rat(1, 4), rat(3, 4))]);
        let s = build_eq_star(3, 0, 1, &rat(1, 2)).unwrap();
        assert_eq!(s.intervals(), &[(rat(1, 6), rat(5, 6))]);
        assert_eq!(s.measure(), rat(2, 3));
        let e2 = build_eq_star(2, 0, 1, &rat(1, 100)).unwrap();
        let e3 = build_eq_star(3, 0, 1, &rat(1, 100)).unwrap();
        assert!(e2.intersect(&e3).is_empty());
        assert!(build_eq_star(3, 2, 4, &rat(1, 4)).is_err());
    }

    #[test]
    fn large_psi_examples() {
        let p = large_psi_measure_parts(3, 0, 1, &rat(1, 1)).unwrap();
        assert_eq!((p.main, p.t, p.exact), (rat(4, 3), rat(1, 1), rat(1, 1)));
        let p = large_psi_measure_parts(4, 0, 1, &rat(1, 1)).unwrap();
        assert_eq!((p.t.clone(), p.exact.clone()), (rat(0, 1), rat(1, 1)));
        let p = large_psi_measure_parts(12, 1, 2, &rat(1, 5)).unwrap();
        assert_eq!(p.t, rat(0, 1));
        assert_eq!(p.exact, p.main);
    }

    #[test]
    fn discrepancy_examples() {
        let i = enumerate_iq(12, 1, 2).unwrap();
        let (err, bound) = discrepancy_iq(12, &i, 64).unwrap();
        assert_eq!(bound, rat(16, 1));
        assert!(err <= bound);
        let (err, _) = discrepancy_iq(10, &ResidueSet::full(10), 64).unwrap();
        assert!(err <= rat(1, 1));
        assert!(discrepancy_iq(10, &ResidueSet::full(10), 1).is_err());
    }

    #[test]
    fn approx_fn_table_and_json() {
        let csv = "q,psi_num,psi_den\n1,1,2\n3,1,6\n4,0,1\n";
        let f = ApproxFn::from_csv_reader(csv.as_bytes()).unwrap();
        assert_eq!(f.value(3).unwrap(), rat(1, 6));
        assert_eq!(f.value(2).unwrap(), rat(0, 1));
        assert_eq!(f.support(1, 10).unwrap().len(), 2);
        assert_eq!(f.provenance(), Provenance::Table);
        let g = ApproxFn::from_json(&f.to_json()).unwrap();
        assert_eq!(f, g);
        let e = ApproxFn::expr("1/(2q)").unwrap().truncated(50);
        assert_eq!(ApproxFn::from_json(&e.to_json()).unwrap(), e);
        assert_eq!(e.value(51).unwrap(), rat(0, 1));
        assert!(ApproxFn::from_csv_reader("q,num,den\n1,1,2\n".as_bytes()).is_err());
        assert!(ApproxFn::expr("q - 5").unwrap().value(2).is_err());
    }

    #[test]
    fn family_arcs_match_builders() {
        let psi = ApproxFn::expr("1/(3q)").unwrap();
        let fams = [
            TargetFamily::Eq { gamma: rat(1, 3), psi: psi.clone() },
            TargetFamily::EqPrime { gamma: rat(2, 5), psi: psi.clone() },
            TargetFamily::EqI { gamma: rat(1, 3), a0: 1, b: 3, psi: psi.clone() },
            TargetFamily::EqStar { a0: 1, b: 3, psi },
        ];
        for fam in &fams {
            for q in 1..30 {
                let (nums, den, radius) = fam.arcs(q).unwrap();
                let arcs: Vec<_> =
                    nums.into_iter().map(|n| (Rational::new(n, den.clone()), radius.clone())).collect();
                assert_eq!(CircleSet::from_arcs(&arcs).unwrap(), fam.build(q).unwrap(), "{} q={q}", fam.name());
            }
        }
    }
}
