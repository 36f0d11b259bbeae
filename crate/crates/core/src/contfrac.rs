//! Continued fractions with big-integer convergents, and the two explicit
//! constructions of Liouville shifts `γ` together with checkable certificates.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_prime::nt_funcs::is_prime;
use num_prime::PrimalityTestConfig;
use num_traits::{One, Pow, Signed, ToPrimitive, Zero};
use serde_json::{json, Value};

use crate::error::{invalid, LabError, Result};
use crate::numtheory::euler_phi;
use crate::rational::{fmt_rational, from_u64, parse_rational, to_f64, Rational, RationalSum};
use crate::targets::ApproxFn;

/// `[a0; a1, a2, …]` with convergents `p_k/q_k` for `k = 0..=len`.
#[derive(Clone, PartialEq, Eq)]
pub struct CFExpansion {
    a0: BigInt,
    quotients: Vec<BigUint>,
    convergents: Vec<(BigInt, BigUint)>,
}

impl fmt::Debug for CFExpansion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let qs: Vec<String> = self.quotients.iter().map(|a| a.to_string()).collect();
        write!(f, "[{}; {}]", self.a0, qs.join(", "))
    }
}

impl CFExpansion {
    pub fn new(a0: BigInt, quotients: Vec<BigUint>) -> Result<Self> {
        let mut cf = Self { convergents: vec![(a0.clone(), BigUint::one())], a0, quotients: Vec::new() };
        for a in quotients {
            cf.push(a)?;
        }
        Ok(cf)
    }

    pub fn from_u64s(a0: i64, quotients: &[u64]) -> Result<Self> {
        Self::new(a0.into(), quotients.iter().map(|&a| BigUint::from(a)).collect())
    }

    /// Appends `a_{k+1}` and its convergent.
    pub fn push(&mut self, a: BigUint) -> Result<()> {
        if a.is_zero() {
            return invalid("partial quotients after a0 must be at least 1");
        }
        let k = self.convergents.len();
        let (p1, q1) = &self.convergents[k - 1];
        let (p2, q2) = if k >= 2 {
            self.convergents[k - 2].clone()
        } else {
            (BigInt::one(), BigUint::zero())
        };
        let p = BigInt::from(a.clone()) * p1 + p2;
        let q = &a * q1 + q2;
        self.convergents.push((p, q));
        self.quotients.push(a);
        Ok(())
    }

    pub fn a0(&self) -> &BigInt {
        &self.a0
    }

    pub fn quotients(&self) -> &[BigUint] {
        &self.quotients
    }

    /// Index of the last convergent.
    pub fn len(&self) -> usize {
        self.quotients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quotients.is_empty()
    }

    /// `a_k` for `k ≥ 1`.
    pub fn quotient(&self, k: usize) -> Result<&BigUint> {
        if k == 0 || k > self.len() {
            return invalid(format!("quotient index {k} outside 1..={}", self.len()));
        }
        Ok(&self.quotients[k - 1])
    }

    pub fn convergent(&self, k: usize) -> Result<(BigInt, BigUint)> {
        self.convergents
            .get(k)
            .cloned()
            .ok_or_else(|| LabError::InvalidArgument(format!("convergent index {k} beyond length {}", self.len())))
    }

    pub fn denominator(&self, k: usize) -> Result<&BigUint> {
        self.convergents
            .get(k)
            .map(|(_, q)| q)
            .ok_or_else(|| LabError::InvalidArgument(format!("convergent index {k} beyond length {}", self.len())))
    }

    /// Value of the finite expansion.
    pub fn value(&self) -> Rational {
        let (p, q) = self.convergents.last().expect("at least a0");
        Rational::new(p.clone(), BigInt::from(q.clone()))
    }

    /// `1/(q_k q_{k+1})`, or `0` at the final index where the expansion is exact.
    pub fn approx_error_upper(&self, k: usize) -> Result<Rational> {
        if k > self.len() {
            return invalid(format!("index {k} beyond expansion length {}", self.len()));
        }
        if k == self.len() {
            return Ok(Rational::zero());
        }
        let d = &self.convergents[k].1 * &self.convergents[k + 1].1;
        Ok(Rational::new(BigInt::one(), d.into()))
    }

    pub fn to_json(&self) -> Value {
        json!({
            "a0": self.a0.to_string(),
            "quotients": self.quotients.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
        })
    }
}

/// `p_k/q_k` of an expansion.
pub fn convergents(cf: &CFExpansion, k: usize) -> Result<(BigInt, BigUint)> {
    cf.convergent(k)
}

/// Expansion of `A/B` by the Euclidean algorithm.
pub fn cf_of_rational(a: i64, b: u64) -> Result<CFExpansion> {
    if b == 0 {
        return invalid("denominator must be positive");
    }
    if a.unsigned_abs().gcd(&b) != 1 {
        return invalid(format!("{a}/{b} is not in lowest terms"));
    }
    cf_of(&Rational::new(a.into(), b.into()))
}

pub fn cf_of(x: &Rational) -> Result<CFExpansion> {
    let a0 = x.floor().to_integer();
    let mut rest = x - Rational::from_integer(a0.clone());
    let mut qs = Vec::new();
    while !rest.is_zero() {
        let inv = rest.recip();
        let a = inv.floor().to_integer();
        rest = inv - Rational::from_integer(a.clone());
        qs.push(a.to_biguint().expect("positive quotient"));
    }
    CFExpansion::new(a0, qs)
}

const LOG_FRAC_BITS: u32 = 32;
const MANT: u32 = 62;

/// Certified `(lower, upper)` bounds on `log₂ x` for `x ≥ 1`, with 32 fractional bits.
pub fn log2_bounds(x: &BigUint) -> (Rational, Rational) {
    assert!(!x.is_zero(), "log of zero");
    let n = x.bits() - 1;
    let (m, exact) = if n >= MANT as u64 {
        let shift = n - MANT as u64;
        let m = (x >> shift).to_u128().expect("63-bit mantissa");
        (m, x.trailing_zeros().is_some_and(|t| t >= shift))
    } else {
        ((x.to_u128().expect("small")) << (MANT as u64 - n), true)
    };
    let one = 1u128 << MANT;
    let two = one << 1;
    let run = |mut y: u128, up: bool| -> u64 {
        let mut bits = 0u64;
        for _ in 0..LOG_FRAC_BITS {
            let sq = y * y;
            y = if up { sq.div_ceil(one) } else { sq >> MANT };
            bits <<= 1;
            if y >= two {
                bits |= 1;
                y = if up { y.div_ceil(2) } else { y >> 1 };
            }
        }
        bits
    };
    let scale = BigInt::from(1u64 << LOG_FRAC_BITS);
    let base = BigInt::from(n) * &scale;
    let lo = run(m, false);
    let hi = run(if exact { m } else { m + 1 }, true) + 1;
    (Rational::new(&base + lo, scale.clone()), Rational::new(&base + hi, scale))
}

/// Largest `j` with `a ≥ q^j` (for `q ≥ 2`).
fn integer_log_floor(a: &BigUint, q: &BigUint) -> u64 {
    let mut j = 0;
    let mut pw = q.clone();
    while &pw <= a {
        j += 1;
        pw *= q;
    }
    j
}

/// Certified lower bound on `max_{k ≤ K} log a_{k+1} / log q_k` (indices with `q_k = 1` skipped).
pub fn liouville_margin(cf: &CFExpansion, k_max: usize) -> Rational {
    let mut best = Rational::zero();
    let last = k_max.min(cf.len().saturating_sub(1));
    if cf.is_empty() {
        return best;
    }
    for k in 0..=last {
        let q = &cf.convergents[k].1;
        if q <= &BigUint::one() {
            continue;
        }
        let a = &cf.quotients[k];
        let (a_lo, _) = log2_bounds(a);
        let (_, q_hi) = log2_bounds(q);
        let ratio = a_lo / q_hi;
        let j = from_u64(integer_log_floor(a, q));
        let m = if ratio > j { ratio } else { j };
        if m > best {
            best = m;
        }
    }
    best
}

/// Monotone integer function `f` used by the ψ-independent construction.
#[derive(Debug, Clone, PartialEq)]
pub enum FRule {
    /// Sorted `(q, f(q))` rows with `f` non-decreasing.
    Table(Vec<(BigUint, BigUint)>),
    /// `f(q) = q^s`.
    Power(u32),
}

impl FRule {
    pub fn table(rows: Vec<(BigUint, BigUint)>) -> Result<Self> {
        for w in rows.windows(2) {
            if w[1].0 <= w[0].0 {
                return invalid("f table indices must be strictly increasing");
            }
            if w[1].1 < w[0].1 {
                return invalid(format!("f is not monotone between q = {} and q = {}", w[0].0, w[1].0));
            }
        }
        Ok(Self::Table(rows))
    }

    pub fn power(s: u32) -> Result<Self> {
        if s == 0 {
            return invalid("f(q) = q^0 is bounded");
        }
        Ok(Self::Power(s))
    }

    /// Reads a CSV table with header `q,f`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let h = rdr.headers()?.clone();
        if h.len() != 2 || &h[0] != "q" || &h[1] != "f" {
            return Err(LabError::Parse(format!("f table header must be q,f, got {h:?}")));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let p = |s: &str| s.parse::<BigUint>().map_err(|_| LabError::Parse(format!("bad integer {s:?} in f table")));
            rows.push((p(&rec[0])?, p(&rec[1])?));
        }
        Self::table(rows)
    }

    /// `min{q : f(q) ≥ t}` with its value `f(q)`.
    pub fn threshold(&self, t: &BigUint) -> Result<(BigUint, BigUint)> {
        match self {
            Self::Table(rows) => rows
                .iter()
                .find(|(_, f)| f >= t)
                .cloned()
                .ok_or_else(|| LabError::DivergenceHorizon(format!("f table never reaches {t}"))),
            Self::Power(s) => {
                let mut q = t.nth_root(*s).max(BigUint::one());
                if Pow::pow(&q, *s) < *t {
                    q += 1u32;
                }
                let f = Pow::pow(&q, *s);
                Ok((q, f))
            }
        }
    }

    /// The largest tabulated (or computed) argument below `q` whose value is still `< t`,
    /// used to confirm minimality.
    fn below_threshold(&self, q: &BigUint, t: &BigUint) -> bool {
        match self {
            Self::Table(rows) => rows.iter().take_while(|(x, _)| x < q).all(|(_, f)| f < t),
            Self::Power(s) => q <= &BigUint::one() || Pow::pow(&(q - 1u32), *s) < *t,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Self::Table(rows) => json!({
                "kind": "table",
                "rows": rows.iter().map(|(q, f)| json!([q.to_string(), f.to_string()])).collect::<Vec<_>>(),
            }),
            Self::Power(s) => json!({ "kind": "power", "s": s }),
        }
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |m: &str| LabError::Parse(format!("f description: {m}"));
        match v.get("kind").and_then(Value::as_str) {
            Some("power") => {
                let s = v.get("s").and_then(Value::as_u64).ok_or_else(|| bad("missing s"))?;
                Self::power(u32::try_from(s).map_err(|_| bad("s too large"))?)
            }
            Some("table") => {
                let rows = v.get("rows").and_then(Value::as_array).ok_or_else(|| bad("missing rows"))?;
                let mut out = Vec::new();
                for r in rows {
                    let get = |i: usize| -> Result<BigUint> {
                        r.get(i)
                            .and_then(Value::as_str)
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| bad("row entries must be decimal strings"))
                    };
                    out.push((get(0)?, get(1)?));
                }
                Self::table(out)
            }
            _ => Err(bad("kind must be \"table\" or \"power\"")),
        }
    }
}

/// What a certificate was built from.
#[derive(Debug, Clone, PartialEq)]
pub enum CertSource {
    Psi(ApproxFn),
    F(FRule),
}

/// One chosen quotient `a_{k_i}` with the inequalities that justify it.
#[derive(Debug, Clone, PartialEq)]
pub struct CertStep {
    pub i: usize,
    pub k: usize,
    pub window: (BigUint, BigUint),
    /// `Q_i` for the ψ construction, `min{q : f(q) ≥ q_{k−1}⁹}` for the f construction.
    pub threshold: BigUint,
    /// Window sum `Σ ψφ/q`, or `f(threshold)`.
    pub sum: Rational,
    /// `q_{k_i−1}⁹`.
    pub bound: Rational,
    pub a_k: BigUint,
    pub q_prev: BigUint,
    pub q_k: BigUint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaCertificate {
    pub source: CertSource,
    pub fixed: BTreeMap<usize, BigUint>,
    pub prime_denominators: bool,
    pub horizon: u64,
    pub trim_small: bool,
    pub quotients: Vec<BigUint>,
    pub steps: Vec<CertStep>,
}

/// Options shared by both constructions.
#[derive(Debug, Clone)]
pub struct GammaOptions {
    pub steps: usize,
    pub prime_denominators: bool,
    /// Largest `q` scanned while closing a ψ window.
    pub horizon: u64,
    /// Quotients prescribed on the finite index set `𝒦₀`.
    pub fixed: BTreeMap<usize, BigUint>,
    /// Drop terms with `ψ(q) < 1/q²` from the window sums.
    pub trim_small: bool,
}

impl Default for GammaOptions {
    fn default() -> Self {
        Self { steps: 1, prime_denominators: false, horizon: 1 << 20, fixed: BTreeMap::new(), trim_small: false }
    }
}

fn check_fixed(fixed: &BTreeMap<usize, BigUint>) -> Result<()> {
    if fixed.contains_key(&0) {
        return invalid("a0 is fixed to 0; prescribed indices start at 1");
    }
    if let Some((k, _)) = fixed.iter().find(|(_, a)| a.is_zero()) {
        return invalid(format!("prescribed a_{k} must be at least 1"));
    }
    Ok(())
}

fn bpsw(n: &BigUint) -> bool {
    is_prime(n, Some(PrimalityTestConfig::bpsw())).probably()
}

/// Smallest `a ≥ lower` with `a·q_prev + q_pp` prime (when requested).
fn choose_quotient(lower: BigUint, q_prev: &BigUint, q_pp: &BigUint, prime: bool) -> BigUint {
    let mut a = lower.max(BigUint::one());
    if prime {
        while !bpsw(&(&a * q_prev + q_pp)) {
            a += 1u32;
        }
    }
    a
}

/// `ψ(q)φ(q)/q`, optionally discarding values `ψ(q) < 1/q²`.
fn window_term(psi: &ApproxFn, q: u64, trim: bool) -> Result<Rational> {
    let v = psi.value(q)?;
    if v.is_zero() || (trim && v.clone() * from_u64(q) * from_u64(q) < Rational::one()) {
        return Ok(Rational::zero());
    }
    Ok(v * from_u64(euler_phi(q)?) / from_u64(q))
}

/// Smallest `Q > start` with `Σ_{start<q≤Q} term(q) ≥ bound`, and that sum.
fn close_window(psi: &ApproxFn, start: u64, bound: &Rational, horizon: u64, trim: bool) -> Result<(u64, Rational)> {
    let target = to_f64(bound) * (1.0 - 1e-9);
    let (mut s, mut c) = (0.0f64, 0.0f64); // Neumaier summation
    let mut acc = RationalSum::new();
    let mut q = start;
    let end = psi.max_q().map_or(horizon, |m| m.min(horizon));
    loop {
        if q >= end {
            return Err(LabError::DivergenceHorizon(format!(
                "Σ_{{{start}<q≤{end}}} ψ(q)φ(q)/q ≈ {:.6e} stays below the required {} ({})",
                s + c,
                fmt_rational(bound),
                psi.describe()
            )));
        }
        q += 1;
        let t = window_term(psi, q, trim)?;
        if t.is_zero() {
            continue;
        }
        let tf = to_f64(&t);
        let y = s + tf;
        c += if s.abs() >= tf.abs() { (s - y) + tf } else { (tf - y) + s };
        s = y;
        acc.add(&t);
        if s + c >= target {
            break;
        }
    }
    let mut exact = acc.total();
    while exact < *bound {
        if q >= end {
            return Err(LabError::DivergenceHorizon(format!(
                "window starting after {start} needs Σ ≥ {} within q ≤ {end}",
                fmt_rational(bound)
            )));
        }
        q += 1;
        exact += window_term(psi, q, trim)?;
    }
    loop {
        let t = window_term(psi, q, trim)?;
        if &exact - &t >= *bound {
            exact -= t;
            q -= 1;
        } else {
            return Ok((q, exact));
        }
    }
}

fn ninth_power(q: &BigUint) -> Rational {
    Rational::from_integer(BigInt::from(Pow::pow(q, 9u32)))
}

struct Builder {
    cf: CFExpansion,
    fixed: BTreeMap<usize, BigUint>,
}

impl Builder {
    /// Appends prescribed quotients until the next free index; returns that index.
    fn advance(&mut self) -> Result<usize> {
        loop {
            let k = self.cf.len() + 1;
            match self.fixed.get(&k) {
                Some(a) => self.cf.push(a.clone())?,
                None => return Ok(k),
            }
        }
    }

    fn q_prev_pp(&self) -> (BigUint, BigUint) {
        let k = self.cf.len();
        let q1 = self.cf.convergents[k].1.clone();
        let q2 = if k >= 1 { self.cf.convergents[k - 1].1.clone() } else { BigUint::zero() };
        (q1, q2)
    }
}

/// Builds `γ = [0; a_1, a_2, …]` so that each window of the ψ divergent sum
/// beats `q_{k_i−1}⁹`, with `a_{k_i} ≥ Q_i²` and `a_{k_i} ≥ q_{k_i−1}^i`.
pub fn construct_gamma_for_psi(psi: &ApproxFn, opts: &GammaOptions) -> Result<(CFExpansion, GammaCertificate)> {
    check_fixed(&opts.fixed)?;
    let mut b = Builder { cf: CFExpansion::new(BigInt::zero(), Vec::new())?, fixed: opts.fixed.clone() };
    let mut steps = Vec::with_capacity(opts.steps);
    let mut prev_q = 0u64;
    for i in 1..=opts.steps {
        let k = b.advance()?;
        let (q_prev, q_pp) = b.q_prev_pp();
        let bound = ninth_power(&q_prev);
        let (big_q, sum) = close_window(psi, prev_q, &bound, opts.horizon, opts.trim_small)?;
        let big_q_u = BigUint::from(big_q);
        let lower = (&big_q_u * &big_q_u).max(Pow::pow(&q_prev, i as u32));
        let a = choose_quotient(lower, &q_prev, &q_pp, opts.prime_denominators);
        b.cf.push(a.clone())?;
        let q_k = b.cf.convergents[k].1.clone();
        steps.push(CertStep {
            i,
            k,
            window: (BigUint::from(prev_q + 1), big_q_u.clone()),
            threshold: big_q_u,
            sum,
            bound,
            a_k: a,
            q_prev,
            q_k,
        });
        prev_q = big_q;
    }
    let cert = GammaCertificate {
        source: CertSource::Psi(psi.clone()),
        fixed: opts.fixed.clone(),
        prime_denominators: opts.prime_denominators,
        horizon: opts.horizon,
        trim_small: opts.trim_small,
        quotients: b.cf.quotients.clone(),
        steps,
    };
    Ok((b.cf, cert))
}

/// Builds `γ` from a monotone unbounded `f` alone: `a_{k_i} ≥ min{q : f(q) ≥ q_{k_i−1}⁹}`
/// together with the Liouville margin `a_{k_i} ≥ q_{k_i−1}^i`.
pub fn construct_gamma_for_f(f: &FRule, opts: &GammaOptions) -> Result<(CFExpansion, GammaCertificate)> {
    check_fixed(&opts.fixed)?;
    let mut b = Builder { cf: CFExpansion::new(BigInt::zero(), Vec::new())?, fixed: opts.fixed.clone() };
    let mut steps = Vec::with_capacity(opts.steps);
    for i in 1..=opts.steps {
        let k = b.advance()?;
        let (q_prev, q_pp) = b.q_prev_pp();
        let bound_int = Pow::pow(&q_prev, 9u32);
        let (t, ft) = f.threshold(&bound_int)?;
        let lower = t.clone().max(Pow::pow(&q_prev, i as u32));
        let a = choose_quotient(lower, &q_prev, &q_pp, opts.prime_denominators);
        b.cf.push(a.clone())?;
        let q_k = b.cf.convergents[k].1.clone();
        steps.push(CertStep {
            i,
            k,
            window: (&q_prev + 1u32, q_k.clone()),
            threshold: t,
            sum: Rational::from_integer(ft.into()),
            bound: Rational::from_integer(bound_int.into()),
            a_k: a,
            q_prev,
            q_k,
        });
    }
    let cert = GammaCertificate {
        source: CertSource::F(f.clone()),
        fixed: opts.fixed.clone(),
        prime_denominators: opts.prime_denominators,
        horizon: opts.horizon,
        trim_small: opts.trim_small,
        quotients: b.cf.quotients.clone(),
        steps,
    };
    Ok((b.cf, cert))
}

/// Outcome of re-checking a certificate from scratch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertificateCheck {
    pub failures: Vec<String>,
}

impl CertificateCheck {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

impl GammaCertificate {
    pub fn options(&self) -> GammaOptions {
        GammaOptions {
            steps: self.steps.len(),
            prime_denominators: self.prime_denominators,
            horizon: self.horizon,
            fixed: self.fixed.clone(),
            trim_small: self.trim_small,
        }
    }

    pub fn expansion(&self) -> Result<CFExpansion> {
        CFExpansion::new(BigInt::zero(), self.quotients.clone())
    }

    pub fn to_json(&self) -> Value {
        let steps: Vec<Value> = self
            .steps
            .iter()
            .map(|s| {
                json!({
                    "i": s.i,
                    "k": s.k,
                    "window": [s.window.0.to_string(), s.window.1.to_string()],
                    "threshold": s.threshold.to_string(),
                    "sum": fmt_rational(&s.sum),
                    "bound": fmt_rational(&s.bound),
                    "a_k": s.a_k.to_string(),
                    "q_prev": s.q_prev.to_string(),
                    "q_k": s.q_k.to_string(),
                })
            })
            .collect();
        let mut v = json!({
            "fixed": self.fixed.iter().map(|(k, a)| (k.to_string(), json!(a.to_string()))).collect::<serde_json::Map<_, _>>(),
            "prime_denominators": self.prime_denominators,
            "horizon": self.horizon,
            "trim_small": self.trim_small,
            "quotients": self.quotients.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
            "steps": steps,
        });
        match &self.source {
            CertSource::Psi(psi) => {
                v["construction"] = json!("psi");
                v["psi"] = psi.to_json();
            }
            CertSource::F(f) => {
                v["construction"] = json!("f");
                v["f"] = f.to_json();
            }
        }
        v
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |m: String| LabError::Parse(format!("certificate: {m}"));
        let big = |x: &Value, what: &str| -> Result<BigUint> {
            x.as_str().and_then(|s| s.parse().ok()).ok_or_else(|| bad(format!("{what} must be a decimal string")))
        };
        let source = match v.get("construction").and_then(Value::as_str) {
            Some("psi") => CertSource::Psi(ApproxFn::from_json(v.get("psi").ok_or_else(|| bad("missing psi".into()))?)?),
            Some("f") => CertSource::F(FRule::from_json(v.get("f").ok_or_else(|| bad("missing f".into()))?)?),
            _ => return Err(bad("construction must be \"psi\" or \"f\"".into())),
        };
        let mut fixed = BTreeMap::new();
        if let Some(obj) = v.get("fixed").and_then(Value::as_object) {
            for (k, a) in obj {
                let k: usize = k.parse().map_err(|_| bad(format!("fixed index {k:?}")))?;
                fixed.insert(k, big(a, "fixed quotient")?);
            }
        }
        let quotients = v
            .get("quotients")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing quotients".into()))?
            .iter()
            .map(|a| big(a, "quotient"))
            .collect::<Result<Vec<_>>>()?;
        let mut steps = Vec::new();
        for s in v.get("steps").and_then(Value::as_array).ok_or_else(|| bad("missing steps".into()))? {
            let field = |name: &str| s.get(name).ok_or_else(|| bad(format!("step missing {name}")));
            let idx = |name: &str| -> Result<usize> {
                field(name)?.as_u64().map(|x| x as usize).ok_or_else(|| bad(format!("{name} must be an integer")))
            };
            let window = field("window")?.as_array().filter(|w| w.len() == 2).ok_or_else(|| bad("window".into()))?;
            let ratio = |name: &str| -> Result<Rational> {
                parse_rational(field(name)?.as_str().ok_or_else(|| bad(format!("{name} must be \"p/q\"")))?)
            };
            steps.push(CertStep {
                i: idx("i")?,
                k: idx("k")?,
                window: (big(&window[0], "window")?, big(&window[1], "window")?),
                threshold: big(field("threshold")?, "threshold")?,
                sum: ratio("sum")?,
                bound: ratio("bound")?,
                a_k: big(field("a_k")?, "a_k")?,
                q_prev: big(field("q_prev")?, "q_prev")?,
                q_k: big(field("q_k")?, "q_k")?,
            });
        }
        Ok(Self {
            source,
            fixed,
            prime_denominators: v.get("prime_denominators").and_then(Value::as_bool).unwrap_or(false),
            trim_small: v.get("trim_small").and_then(Value::as_bool).unwrap_or(false),
            horizon: v.get("horizon").and_then(Value::as_u64).ok_or_else(|| bad("missing horizon".into()))?,
            quotients,
            steps,
        })
    }
}

/// Re-derives every recorded quantity of a certificate and checks each inequality.
pub fn verify_certificate(cert: &GammaCertificate) -> Result<CertificateCheck> {
    let mut failures = Vec::new();
    let cf = match cert.expansion() {
        Ok(cf) => cf,
        Err(e) => return Ok(CertificateCheck { failures: vec![format!("quotients: {e}")] }),
    };
    for (&k, a) in &cert.fixed {
        if k <= cf.len() && cf.quotients[k - 1] != *a {
            failures.push(format!("a_{k} differs from the prescribed value {a}"));
        }
    }
    for k in 1..=cf.len() {
        let (p, q) = &cf.convergents[k];
        if p.magnitude().gcd(q) != BigUint::one() {
            failures.push(format!("gcd(p_{k}, q_{k}) ≠ 1"));
        }
        if k >= 2 && q <= &cf.convergents[k - 1].1 {
            failures.push(format!("q_{k} does not increase"));
        }
    }
    for s in &cert.steps {
        let tag = format!("step {} (k = {})", s.i, s.k);
        if s.k == 0 || s.k > cf.len() {
            failures.push(format!("{tag}: index outside the expansion"));
            continue;
        }
        if cf.quotients[s.k - 1] != s.a_k {
            failures.push(format!("{tag}: a_k does not match the expansion"));
        }
        if cf.convergents[s.k - 1].1 != s.q_prev || cf.convergents[s.k].1 != s.q_k {
            failures.push(format!("{tag}: recorded denominators do not match the recurrence"));
        }
        if s.bound != ninth_power(&s.q_prev) {
            failures.push(format!("{tag}: bound is not q_prev^9"));
        }
        if s.sum < s.bound {
            failures.push(format!("{tag}: sum {} < bound {}", fmt_rational(&s.sum), fmt_rational(&s.bound)));
        }
        if s.a_k < Pow::pow(&s.q_prev, s.i as u32) {
            failures.push(format!("{tag}: Liouville margin a_k ≥ q_prev^{} fails", s.i));
        }
        if cert.prime_denominators && !bpsw(&s.q_k) {
            failures.push(format!("{tag}: q_k = {} is not prime", s.q_k));
        }
        match &cert.source {
            CertSource::Psi(psi) => {
                if s.a_k < &s.threshold * &s.threshold {
                    failures.push(format!("{tag}: a_k < Q²"));
                }
                let (Some(lo), Some(hi)) = (s.window.0.to_u64(), s.window.1.to_u64()) else {
                    failures.push(format!("{tag}: window out of range"));
                    continue;
                };
                let mut acc = RationalSum::new();
                for q in lo..=hi {
                    acc.add(&window_term(psi, q, cert.trim_small)?);
                }
                let recomputed = acc.total();
                if recomputed != s.sum {
                    failures.push(format!("{tag}: window sum recomputes to {}", fmt_rational(&recomputed)));
                }
                if hi >= lo && recomputed.clone() - window_term(psi, hi, cert.trim_small)? >= s.bound {
                    failures.push(format!("{tag}: Q is not minimal"));
                }
            }
            CertSource::F(f) => {
                if s.a_k < s.threshold {
                    failures.push(format!("{tag}: a_k below the f threshold"));
                }
                let bound_int = Pow::pow(&s.q_prev, 9u32);
                let f_at = f.threshold(&bound_int).ok();
                if f_at.as_ref().map(|(t, v)| (t, Rational::from_integer(v.clone().into())))
                    != Some((&s.threshold, s.sum.clone()))
                {
                    failures.push(format!("{tag}: f threshold does not recompute"));
                }
                if !f.below_threshold(&s.threshold, &bound_int) {
                    failures.push(format!("{tag}: threshold is not minimal"));
                }
                if s.window != (&s.q_prev + 1u32, s.q_k.clone()) {
                    failures.push(format!("{tag}: window is not [q_prev+1, q_k]"));
                }
            }
        }
    }
    // Deterministic replay must reproduce the certificate exactly.
    let replay = match &cert.source {
        CertSource::Psi(psi) => construct_gamma_for_psi(psi, &cert.options()),
        CertSource::F(f) => construct_gamma_for_f(f, &cert.options()),
    };
    match replay {
        Ok((_, again)) if again == *cert => {}
        Ok(_) => failures.push("replaying the construction gives a different certificate".into()),
        Err(e) => failures.push(format!("replaying the construction fails: {e}")),
    }
    Ok(CertificateCheck { failures })
}

/// `true` if `x` is within `tol` of the convergent `p_k/q_k`.
pub fn within(x: &Rational, cf: &CFExpansion, k: usize, tol: &Rational) -> Result<bool> {
    let (p, q) = cf.convergent(k)?;
    Ok((x - Rational::new(p, q.into())).abs() <= *tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;

    fn big(n: u64) -> BigUint {
        BigUint::from(n)
    }

    #[test]
    fn fibonacci_convergents() {
        let cf = CFExpansion::from_u64s(0, &[1, 1, 1, 1]).unwrap();
        let got: Vec<(i64, u64)> = (1..=4)
            .map(|k| {
                let (p, q) = cf.convergent(k).unwrap();
                (p.to_i64().unwrap(), q.to_u64().unwrap())
            })
            .collect();
        assert_eq!(got, vec![(1, 1), (1, 2), (2, 3), (3, 5)]);
        assert!(cf.convergent(5).is_err());
    }

    #[test]
    fn rational_expansion() {
        let cf = cf_of_rational(1, 3).unwrap();
        assert_eq!(cf.quotients(), &[big(3)]);
        assert_eq!(cf.value(), rat(1, 3));
        let cf = cf_of_rational(-7, 5).unwrap();
        assert_eq!(cf.value(), rat(-7, 5));
        assert!(cf_of_rational(2, 4).is_err());
    }

    #[test]
    fn error_bound_example() {
        let cf = CFExpansion::from_u64s(0, &[1, 1, 1]).unwrap();
        // q_1 = 1, q_2 = 2, q_3 = 3
        assert_eq!(cf.approx_error_upper(1).unwrap(), rat(1, 2));
        assert_eq!(cf.approx_error_upper(2).unwrap(), rat(1, 6));
        assert_eq!(cf.approx_error_upper(3).unwrap(), rat(0, 1));
        assert!(cf.approx_error_upper(4).is_err());
    }

    #[test]
    fn log2_bounds_bracket() {
        for x in [1u64, 2, 3, 5, 1000, 1 << 40, (1 << 63) + 12345, u64::MAX] {
            let (lo, hi) = log2_bounds(&big(x));
            let l = (x as f64).log2();
            assert!(to_f64(&lo) <= l + 1e-12 && l <= to_f64(&hi) + 1e-12, "x={x}");
            assert!(to_f64(&hi) - to_f64(&lo) < 1e-8);
        }
        let huge = Pow::pow(&big(3), 200u32);
        let (lo, hi) = log2_bounds(&huge);
        let l = 200.0 * 3f64.log2();
        assert!(to_f64(&lo) <= l && l <= to_f64(&hi));
    }

    #[test]
    fn margin_examples() {
        let golden = CFExpansion::from_u64s(0, &[1; 12]).unwrap();
        assert!(liouville_margin(&golden, 10) < rat(1, 1));
        assert_eq!(liouville_margin(&golden, 0), rat(0, 1));
        // q_1 = 2, a_2 = 2^10
        let cf = CFExpansion::from_u64s(0, &[2, 1024]).unwrap();
        let m = liouville_margin(&cf, 1);
        assert!(m >= rat(10, 1) && m < rat(10001, 1000));
    }

    #[test]
    fn psi_half_first_window() {
        let psi = ApproxFn::expr("1/2").unwrap();
        let (cf, cert) = construct_gamma_for_psi(&psi, &GammaOptions::default()).unwrap();
        let s = &cert.steps[0];
        assert_eq!(s.threshold, big(3));
        assert_eq!(s.sum, rat(13, 12));
        assert_eq!(s.bound, rat(1, 1));
        assert_eq!(s.a_k, big(9));
        assert_eq!(cf.quotients(), &[big(9)]);
        assert!(verify_certificate(&cert).unwrap().ok());
        // Dropping ψ(1) = 1/2 < 1 pushes the window out to Q = 5.
        let opts = GammaOptions { trim_small: true, ..Default::default() };
        let (_, cert) = construct_gamma_for_psi(&psi, &opts).unwrap();
        assert_eq!((cert.steps[0].threshold.clone(), cert.steps[0].sum.clone()), (big(5), rat(37, 30)));
        assert!(verify_certificate(&cert).unwrap().ok());
    }

    #[test]
    fn psi_zero_hits_horizon() {
        let psi = ApproxFn::expr("0").unwrap();
        let opts = GammaOptions { horizon: 1000, ..Default::default() };
        assert!(matches!(construct_gamma_for_psi(&psi, &opts), Err(LabError::DivergenceHorizon(_))));
    }

    #[test]
    fn fast_psi_multi_step_with_primes() {
        let psi = ApproxFn::expr("q^8").unwrap();
        let opts = GammaOptions { steps: 4, prime_denominators: true, ..Default::default() };
        let (cf, cert) = construct_gamma_for_psi(&psi, &opts).unwrap();
        assert_eq!(cert.steps.len(), 4);
        for s in &cert.steps {
            assert!(bpsw(&s.q_k));
            assert!(s.a_k >= Pow::pow(&s.q_prev, s.i as u32));
        }
        assert!(verify_certificate(&cert).unwrap().ok());
        let back = GammaCertificate::from_json(&cert.to_json()).unwrap();
        assert_eq!(back, cert);
        assert!(liouville_margin(&cf, cf.len() - 1) >= rat(3, 1));
    }

    #[test]
    fn fixed_pattern_is_respected() {
        let psi = ApproxFn::expr("q^8").unwrap();
        let mut fixed = BTreeMap::new();
        fixed.insert(1, big(2));
        fixed.insert(3, big(5));
        let opts = GammaOptions { steps: 2, fixed, ..Default::default() };
        let (cf, cert) = construct_gamma_for_psi(&psi, &opts).unwrap();
        assert_eq!(cert.steps[0].k, 2);
        assert_eq!(cert.steps[1].k, 4);
        assert_eq!(cf.quotient(1).unwrap(), &big(2));
        assert_eq!(cf.quotient(3).unwrap(), &big(5));
        assert!(verify_certificate(&cert).unwrap().ok());
    }

    #[test]
    fn tampering_is_detected() {
        let psi = ApproxFn::expr("q^8").unwrap();
        let (_, mut cert) = construct_gamma_for_psi(&psi, &GammaOptions { steps: 2, ..Default::default() }).unwrap();
        cert.steps[1].sum += rat(1, 1);
        assert!(!verify_certificate(&cert).unwrap().ok());
    }

    #[test]
    fn f_construction() {
        let f = FRule::table((1..=50u64).map(|q| (big(q), big(q))).collect()).unwrap();
        let (_, cert) = construct_gamma_for_f(&f, &GammaOptions::default()).unwrap();
        assert_eq!(cert.steps[0].threshold, big(1));
        assert_eq!(cert.steps[0].a_k, big(1));
        assert!(verify_certificate(&cert).unwrap().ok());
        let opts = GammaOptions { steps: 3, ..Default::default() };
        assert!(matches!(construct_gamma_for_f(&f, &opts), Err(LabError::DivergenceHorizon(_))));
        assert!(FRule::table(vec![(big(1), big(5)), (big(2), big(3))]).is_err());

        let p = FRule::power(3).unwrap();
        let opts = GammaOptions { steps: 4, prime_denominators: true, ..Default::default() };
        let (_, cert) = construct_gamma_for_f(&p, &opts).unwrap();
        assert!(verify_certificate(&cert).unwrap().ok());
        assert_eq!(GammaCertificate::from_json(&cert.to_json()).unwrap(), cert);
    }

    #[test]
    fn truncation_error_bound_holds() {
        let cf = CFExpansion::from_u64s(0, &[3, 1, 4, 1, 5, 9, 2, 6]).unwrap();
        let x = cf.value();
        for k in 0..cf.len() {
            assert!(within(&x, &cf, k, &cf.approx_error_upper(k).unwrap()).unwrap());
        }
    }
}
