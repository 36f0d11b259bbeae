//! Toy measure-preserving systems on the circle: exact preimages, mixing gaps,
//! orbit hit counting against shrinking targets.

use std::io::Write;

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Pow, Signed, Zero};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

use crate::bclab::{FixedPoint, RNG_ALGORITHM};
use crate::error::{invalid, LabError, Result};
use crate::rational::{fmt_rational, from_u64, to_f64, Rational, RationalSum};
use crate::targets::ApproxFn;
use crate::unitcircle::CircleSet;

/// Default limit on the number of pieces an exact preimage may produce.
pub const DEFAULT_PREIMAGE_BUDGET: u64 = 1 << 20;
/// Bits kept beyond the orbit's consumption.
pub const DEFAULT_GUARD_BITS: u32 = 64;
/// Default constant in the counting bound.
pub const DEFAULT_K: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DynSystem {
    /// `x ↦ bx (mod 1)`.
    TimesB(u64),
    /// `x ↦ x + α (mod 1)`.
    Rotation(Rational),
}

impl DynSystem {
    pub fn times(b: u64) -> Result<Self> {
        if b < 2 {
            return invalid(format!("×b needs b ≥ 2, got {b}"));
        }
        Ok(Self::TimesB(b))
    }

    /// `x2`, `x3`, … or `rot:p/q`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(a) = s.strip_prefix("rot:") {
            return Ok(Self::Rotation(crate::rational::parse_rational(a)?));
        }
        match s.strip_prefix('x').and_then(|b| b.parse::<u64>().ok()) {
            Some(b) => Self::times(b),
            None => Err(LabError::Parse(format!("unknown system {s:?}"))),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::TimesB(b) => format!("x{b}"),
            Self::Rotation(a) => format!("rot:{}", fmt_rational(a)),
        }
    }

    fn times_b(&self) -> Result<u64> {
        match self {
            Self::TimesB(b) => Ok(*b),
            Self::Rotation(_) => invalid("operation requires a ×b system"),
        }
    }
}

/// Exact `T^{−n}A`; ×b preimages beyond `budget` pieces are refused.
pub fn exact_preimage(a: &CircleSet, n: u32, sys: &DynSystem, budget: u64) -> Result<CircleSet> {
    if n == 0 || a.is_empty() || a.is_full() {
        return Ok(a.clone());
    }
    match sys {
        DynSystem::Rotation(alpha) => Ok(a.translate(&(-alpha * from_u64(n as u64)))),
        DynSystem::TimesB(b) => {
            let pieces = b.checked_pow(n).and_then(|m| m.checked_mul(a.len() as u64));
            match pieces {
                Some(p) if p <= budget => a.preimage_mul(b.pow(n)),
                _ => Err(LabError::Resource(format!(
                    "preimage T^-{n} under x{b} needs more than the budget of {budget} pieces"
                ))),
            }
        }
    }
}

/// `∫_0^y 1_B({t}) dt`.
fn cumulative(b: &CircleSet, mu_b: &Rational, y: &Rational) -> Rational {
    let fl = y.floor();
    let f = y - &fl;
    let mut acc = fl * mu_b;
    for (lo, hi) in b.intervals() {
        if *lo >= f {
            break;
        }
        acc += if *hi < f { hi - lo } else { &f - lo };
    }
    acc
}

/// `μ(A ∩ T^{−n}B) − μ(A)μ(B)`, exact.
pub fn mixing_gap(a: &CircleSet, b: &CircleSet, n: u32, sys: &DynSystem) -> Result<Rational> {
    let (mu_a, mu_b) = (a.measure(), b.measure());
    let joint = match sys {
        DynSystem::Rotation(_) => a.intersect_measure(&exact_preimage(b, n, sys, u64::MAX)?),
        DynSystem::TimesB(base) => {
            let scale = Rational::from_integer(BigInt::from(*base).pow(n));
            let mut acc = RationalSum::new();
            for (lo, hi) in a.intervals() {
                let d = cumulative(b, &mu_b, &(hi * &scale)) - cumulative(b, &mu_b, &(lo * &scale));
                acc.add(&d);
            }
            acc.total() / scale
        }
    };
    Ok(joint - mu_a * mu_b)
}

/// Exact gaps `g_n`, `1 ≤ n ≤ N`, for interval pairs under ×b against the envelope `2μ(B)b^{−n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingProfile {
    pub base: u64,
    pub n_max: u32,
    pub gaps: Vec<Vec<Rational>>,
    /// `(pair index, n)` where `|g_n| > 2μ(B)b^{−n}`.
    pub violations: Vec<(usize, u32)>,
}

impl MixingProfile {
    /// `ε_n = 2b^{−n}`.
    pub fn envelope(&self, n: u32) -> Rational {
        Rational::new(BigInt::from(2), BigInt::from(self.base).pow(n))
    }

    pub fn to_json(&self) -> Value {
        json!({
            "base": self.base,
            "n_max": self.n_max,
            "pairs": self.gaps.len(),
            "violations": self.violations,
            "max_abs_gap": (1..=self.n_max)
                .map(|n| {
                    let m = self.gaps.iter().map(|g| to_f64(&g[n as usize - 1]).abs()).fold(0.0, f64::max);
                    json!([n, m])
                })
                .collect::<Vec<_>>(),
        })
    }

    /// `pair,n,gap_num,gap_den,envelope`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["pair", "n", "gap_num", "gap_den", "envelope"])?;
        for (i, g) in self.gaps.iter().enumerate() {
            for (k, v) in g.iter().enumerate() {
                let n = k as u32 + 1;
                w.write_record([
                    i.to_string(),
                    n.to_string(),
                    v.numer().to_string(),
                    v.denom().to_string(),
                    fmt_rational(&self.envelope(n)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn sigma_mixing_envelope(sys: &DynSystem, pairs: &[(CircleSet, CircleSet)], n_max: u32) -> Result<MixingProfile> {
    let base = sys.times_b()?;
    let mut gaps = Vec::with_capacity(pairs.len());
    let mut violations = Vec::new();
    for (i, (a, b)) in pairs.iter().enumerate() {
        let mu_b = b.measure();
        let mut row = Vec::with_capacity(n_max as usize);
        for n in 1..=n_max {
            let g = mixing_gap(a, b, n, sys)?;
            let bound = &mu_b * Rational::new(BigInt::from(2), BigInt::from(base).pow(n));
            if g.abs() > bound {
                violations.push((i, n));
            }
            row.push(g);
        }
        gaps.push(row);
    }
    Ok(MixingProfile { base, n_max, gaps, violations })
}

#[derive(Debug, Clone, PartialEq)]
enum Centers {
    /// `x_n = u_n/2^64` with `u_n` the `n`-th output of the stream seeded by the value.
    Seeded(u64),
    Table(Vec<Rational>),
}

/// Targets `A_n = B(x_n, r_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSequence {
    radius: ApproxFn,
    centers: Centers,
}

impl TargetSequence {
    pub fn seeded(radius: ApproxFn, seed: u64) -> Self {
        Self { radius, centers: Centers::Seeded(seed) }
    }

    /// Centers `x_1, x_2, …` from a table; indices beyond it are refused.
    pub fn with_centers(radius: ApproxFn, centers: Vec<Rational>) -> Self {
        Self { radius, centers: Centers::Table(centers) }
    }

    pub fn radius(&self, n: u64) -> Result<Rational> {
        self.radius.value(n)
    }

    /// `(x_n, r_n)` for `1 ≤ n ≤ N`.
    pub fn materialize(&self, n_max: u64) -> Result<Vec<(Rational, Rational)>> {
        let centers: Vec<Rational> = match &self.centers {
            Centers::Seeded(seed) => {
                let mut rng = ChaCha20Rng::seed_from_u64(*seed);
                rng.set_stream(u64::MAX);
                let den = BigInt::one() << 64u32;
                (0..n_max).map(|_| Rational::new(BigInt::from(rng.next_u64()), den.clone())).collect()
            }
            Centers::Table(t) => {
                if (t.len() as u64) < n_max {
                    return invalid(format!("center table has {} entries, {n_max} needed", t.len()));
                }
                t[..n_max as usize].iter().map(|c| c - c.floor()).collect()
            }
        };
        centers.into_iter().enumerate().map(|(i, c)| Ok((c, self.radius(i as u64 + 1)?))).collect()
    }

    /// `Φ(N) = Σ_{n≤N} μ(A_n)`, `μ(A_n) = min(2r_n, 1)`.
    pub fn phi(&self, n_max: u64) -> Result<Rational> {
        let mut acc = RationalSum::new();
        for n in 1..=n_max {
            let r = self.radius(n)?;
            let m = &r * from_u64(2);
            let v = if m > Rational::one() { Rational::one() } else { m };
            acc.add(&v);
        }
        Ok(acc.total())
    }

    pub fn to_json(&self) -> Value {
        let centers = match &self.centers {
            Centers::Seeded(s) => json!({ "seeded": s }),
            Centers::Table(t) => json!({ "table": t.iter().map(fmt_rational).collect::<Vec<_>>() }),
        };
        json!({ "radius": self.radius.to_json(), "centers": centers })
    }
}

/// `T^n x` for ×b, carried exactly on `P` bits; the image of the sample cell is `[Y, Y + w]/2^P`.
enum Orbit {
    /// `b = 2^k`: the image is a bit window of the original point.
    Shift { x: FixedPoint, limbs: Vec<u64>, k: u32 },
    Mul { y: Vec<u64>, b: u64 },
}

impl Orbit {
    fn new(x: &FixedPoint, b: u64) -> Self {
        if b.is_power_of_two() {
            Orbit::Shift { x: x.clone(), limbs: x.limbs().to_vec(), k: b.trailing_zeros() }
        } else {
            Orbit::Mul { y: x.limbs().to_vec(), b }
        }
    }

    fn step(&mut self) {
        if let Orbit::Mul { y, b } = self {
            let mut carry = 0u128;
            for l in y.iter_mut() {
                let v = *l as u128 * *b as u128 + carry;
                *l = v as u64;
                carry = v >> 64;
            }
        }
    }

    /// 64 leading bits of `T^n x`.
    fn window(&self, n: u64) -> u64 {
        match self {
            Orbit::Shift { limbs, k, .. } => window_at(limbs, n * *k as u64),
            Orbit::Mul { y, .. } => window_at(y, 0),
        }
    }

    /// Exact cell `[lo, hi]` (in `[0, 2)`) containing `T^n x*`.
    fn cell(&self, n: u64, bits: u32) -> (Rational, Rational) {
        let p = bits as u64;
        match self {
            Orbit::Shift { x, k, .. } => {
                let used = n * *k as u64;
                let keep = p - used;
                let num = x.numerator() & ((BigUint::one() << keep) - 1u32);
                let den = BigInt::one() << keep;
                let lo = Rational::new(BigInt::from(num), den.clone());
                let hi = &lo + Rational::new(BigInt::one(), den);
                (lo, hi)
            }
            Orbit::Mul { y, b } => {
                let num = FixedPoint::from_limbs(y.clone()).expect("non-empty").numerator();
                let den = BigInt::one() << p;
                let lo = Rational::new(BigInt::from(num), den.clone());
                let hi = &lo + Rational::new(BigInt::from(*b).pow(n as u32), den);
                (lo, hi)
            }
        }
    }
}

/// Bits `[off, off+64)` counted from the most significant end.
fn window_at(limbs: &[u64], off: u64) -> u64 {
    let n = limbs.len() as u64;
    let idx = off / 64;
    let s = (off % 64) as u32;
    let get = |i: u64| if i < n { limbs[(n - 1 - i) as usize] } else { 0 };
    let hi = get(idx);
    if s == 0 {
        hi
    } else {
        (hi << s) | (get(idx + 1) >> (64 - s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Touch {
    Inside,
    Boundary,
    Outside,
}

fn classify_cell(lo: &Rational, hi: &Rational, c: &Rational, r: &Rational) -> Touch {
    if r * from_u64(2) >= Rational::one() {
        return Touch::Inside;
    }
    let mut touch = false;
    for k in -1i64..=2 {
        let kk = Rational::from_integer(k.into());
        let (alo, ahi) = (c - r + &kk, c + r + &kk);
        if alo <= *lo && *hi <= ahi {
            return Touch::Inside;
        }
        if !(*hi < alo || *lo > ahi) {
            touch = true;
        }
    }
    if touch {
        Touch::Boundary
    } else {
        Touch::Outside
    }
}

/// Bits `P` needed for `N` steps of ×b with the given guard.
pub fn required_bits(b: u64, n_max: u64, guard: u32) -> u64 {
    let per = 64 - (b - 1).leading_zeros() as u64;
    let need = n_max * per + guard as u64;
    need.div_ceil(64) * 64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrbitHits {
    pub hits: u64,
    pub ambiguous: u64,
    pub hit_indices: Vec<u64>,
}

struct PreparedTargets {
    exact: Vec<(Rational, Rational)>,
    approx: Vec<(f64, f64)>,
}

impl PreparedTargets {
    fn new(targets: &TargetSequence, n_max: u64) -> Result<Self> {
        let exact = targets.materialize(n_max)?;
        let approx = exact.iter().map(|(c, r)| (to_f64(c), to_f64(r))).collect();
        Ok(Self { exact, approx })
    }
}

/// `#{1 ≤ n ≤ N : T^n x ∈ A_n}` with exact decisions; boundary contacts are flagged, not counted.
pub fn orbit_hits(x: &FixedPoint, targets: &TargetSequence, n_max: u64, sys: &DynSystem) -> Result<OrbitHits> {
    let prepared = PreparedTargets::new(targets, n_max)?;
    orbit_hits_prepared(x, &prepared, n_max, sys)
}

fn orbit_hits_prepared(x: &FixedPoint, t: &PreparedTargets, n_max: u64, sys: &DynSystem) -> Result<OrbitHits> {
    let b = sys.times_b()?;
    let need = required_bits(b, n_max, DEFAULT_GUARD_BITS);
    if (x.bits() as u64) < need {
        return invalid(format!("orbit of {n_max} steps under x{b} needs P ≥ {need}, got {}", x.bits()));
    }
    let mut orbit = Orbit::new(x, b);
    let mut out = OrbitHits { hits: 0, ambiguous: 0, hit_indices: Vec::new() };
    let scale = 2f64.powi(-64);
    for n in 1..=n_max {
        orbit.step();
        let (c, r) = t.approx[n as usize - 1];
        let touch = if r >= 0.5 {
            Touch::Inside
        } else {
            let y = orbit.window(n) as f64 * scale;
            let d = (y - c).abs();
            let d = d.min(1.0 - d);
            let margin = 2f64.powi(-40);
            if d < r - margin {
                Touch::Inside
            } else if d > r + margin {
                Touch::Outside
            } else {
                let (lo, hi) = orbit.cell(n, x.bits());
                let (ce, re) = &t.exact[n as usize - 1];
                classify_cell(&lo, &hi, ce, re)
            }
        };
        match touch {
            Touch::Inside => {
                out.hits += 1;
                out.hit_indices.push(n);
            }
            Touch::Boundary => out.ambiguous += 1,
            Touch::Outside => {}
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountRow {
    pub sample: u64,
    pub n: u64,
    pub hits: u64,
    pub ambiguous: u64,
    pub residual: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountingReport {
    pub phi: Rational,
    pub rows: Vec<CountRow>,
    /// `None` for a single sample.
    pub pass_fraction: Option<f64>,
    pub manifest: Value,
}

impl CountingReport {
    /// `sample,N,hits,phi_num,phi_den,residual,bound,pass`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample", "N", "hits", "phi_num", "phi_den", "residual", "bound", "pass"])?;
        let (pn, pd) = (self.phi.numer().to_string(), self.phi.denom().to_string());
        for r in &self.rows {
            w.write_record([
                r.sample.to_string(),
                r.n.to_string(),
                r.hits.to_string(),
                pn.clone(),
                pd.clone(),
                format!("{:.9}", r.residual),
                format!("{:.9}", r.bound),
                (r.pass as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CountingOptions {
    pub n_max: u64,
    pub samples: u64,
    pub seed: u64,
    pub eps: Rational,
    pub k: u32,
    pub threads: usize,
}

/// `K·Φ^{1/2}(log max(Φ, e))^{3/2+ε}`.
pub fn counting_bound(phi: f64, k: u32, eps: f64) -> f64 {
    k as f64 * phi.sqrt() * phi.max(std::f64::consts::E).ln().powf(1.5 + eps)
}

/// Residuals `hits(N) − Φ(N)` over seeded samples and the fraction within the counting bound.
pub fn counting_experiment(sys: &DynSystem, targets: &TargetSequence, opts: &CountingOptions) -> Result<CountingReport> {
    let b = sys.times_b()?;
    if opts.n_max == 0 || opts.samples == 0 {
        return invalid("N and the sample count must be at least 1");
    }
    if opts.eps.is_negative() {
        return invalid("ε must be non-negative");
    }
    let bits = u32::try_from(required_bits(b, opts.n_max, DEFAULT_GUARD_BITS))
        .map_err(|_| LabError::Resource("orbit precision exceeds the supported range".into()))?;
    let prepared = PreparedTargets::new(targets, opts.n_max)?;
    let phi = targets.phi(opts.n_max)?;
    let phi_f = to_f64(&phi);
    let bound = counting_bound(phi_f, opts.k, to_f64(&opts.eps));
    let run = |s: u64| -> Result<CountRow> {
        let x = FixedPoint::sample(opts.seed, s, bits)?;
        let h = orbit_hits_prepared(&x, &prepared, opts.n_max, sys)?;
        let residual = h.hits as f64 - phi_f;
        Ok(CountRow { sample: s, n: opts.n_max, hits: h.hits, ambiguous: h.ambiguous, residual, bound, pass: residual.abs() <= bound })
    };
    let threads = opts.threads.max(1).min(opts.samples as usize);
    let mut rows: Vec<CountRow> = if threads == 1 {
        (0..opts.samples).map(run).collect::<Result<_>>()?
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads as u64)
                .map(|tid| {
                    let run = &run;
                    scope.spawn(move || (tid..opts.samples).step_by(threads).map(run).collect::<Result<Vec<_>>>())
                })
                .collect();
            let mut all = Vec::new();
            for h in handles {
                all.extend(h.join().expect("worker panicked")?);
            }
            Ok::<_, LabError>(all)
        })?
    };
    rows.sort_by_key(|r| r.sample);
    let pass_fraction =
        (opts.samples > 1).then(|| rows.iter().filter(|r| r.pass).count() as f64 / rows.len() as f64);
    let manifest = json!({
        "system": sys.describe(),
        "targets": targets.to_json(),
        "N": opts.n_max,
        "samples": opts.samples,
        "seed": opts.seed,
        "rng": RNG_ALGORITHM,
        "precision_bits": bits,
        "guard_bits": DEFAULT_GUARD_BITS,
        "K": opts.k,
        "eps": fmt_rational(&opts.eps),
        "phi": fmt_rational(&phi),
        "phi_approx": phi_f,
        "bound": bound,
        "pass_fraction": pass_fraction,
    });
    Ok(CountingReport { phi, rows, pass_fraction, manifest })
}

/// Least `ℓ` with every endpoint in `2^{−ℓ}ℤ`; `None` when some endpoint is not dyadic.
pub fn dyadic_level(s: &CircleSet) -> Option<u32> {
    let mut level = 0u32;
    for (lo, hi) in s.intervals() {
        for v in [lo, hi] {
            let d = v.denom();
            if !(d.is_positive() && (d & (d - BigInt::one())).is_zero()) {
                return None;
            }
            level = level.max(d.bits() as u32 - 1);
        }
    }
    Some(level)
}
