use std::io::Write;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

use crate::error::{invalid, LabError, Result};
use crate::rational::{fmt_rational, from_u64, to_f64, Rational};
use crate::targets::{ApproxFn, InhomShift};

/// Identifier of the sample stream recorded in every report.
pub const RNG_ALGORITHM: &str = "chacha20-stream-v1";

/// Arithmetic condition on the numerator `a` of a hit `(a, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitMode {
    AllA,
    /// `(a, q) = 1`.
    Coprime,
    /// `(A + aB, q) = 1`.
    Residue { a0: i64, b: u64 },
    /// `q ≡ s (mod u)`, `a ≡ r (mod t)`, `(a, q) | (q, r, t)`.
    Congruence { r: i64, t: u64, s: u64, u: u64 },
}

impl HitMode {
    /// Parses `all_a`, `coprime`, `residue:A,B` or `congruence:r,t,s,u`.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let nums: Vec<i64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|x| x.trim().parse().map_err(|_| LabError::Parse(format!("bad mode argument {x:?}"))))
                .collect::<Result<_>>()?
        };
        let mode = match (name.trim(), nums.as_slice()) {
            ("all_a", []) => HitMode::AllA,
            ("coprime", []) => HitMode::Coprime,
            ("residue", &[a0, b]) if b > 0 => HitMode::Residue { a0, b: b as u64 },
            ("congruence", &[r, t, s, u]) if t > 0 && u > 0 && s >= 0 => {
                HitMode::Congruence { r, t: t as u64, s: s as u64, u: u as u64 }
            }
            _ => return Err(LabError::Parse(format!("unknown hit mode {s:?}"))),
        };
        if let HitMode::Residue { a0, b } = mode {
            if a0.unsigned_abs().gcd(&b) != 1 {
                return invalid(format!("A = {a0} and B = {b} are not coprime"));
            }
        }
        Ok(mode)
    }

    pub fn describe(&self) -> String {
        match self {
            HitMode::AllA => "all_a".into(),
            HitMode::Coprime => "coprime".into(),
            HitMode::Residue { a0, b } => format!("residue:{a0},{b}"),
            HitMode::Congruence { r, t, s, u } => format!("congruence:{r},{t},{s},{u}"),
        }
    }

    fn admits_q(&self, q: u64) -> bool {
        match *self {
            HitMode::Congruence { s, u, .. } => q % u == s % u,
            _ => true,
        }
    }

    fn admits(&self, a: i64, q: u64) -> bool {
        let qi = q as i128;
        let reduce = |x: i128| x.rem_euclid(qi) as u64;
        match *self {
            HitMode::AllA => true,
            HitMode::Coprime => reduce(a as i128).gcd(&q) == 1,
            HitMode::Residue { a0, b } => reduce(a0 as i128 + a as i128 * b as i128).gcd(&q) == 1,
            HitMode::Congruence { r, t, .. } => {
                if (a as i128 - r as i128).rem_euclid(t as i128) != 0 {
                    return false;
                }
                let g = reduce(a as i128).gcd(&q);
                let bound = q.gcd(&r.unsigned_abs()).gcd(&t);
                bound % g == 0
            }
        }
    }
}

/// `(d, A, B)` with `d = (r, t)`, `A = r/d`, `B = t/d`: the rescaling `x′ = dBx` sends a residue-mode hit
/// `(a, q)` to the congruence-mode numerator `a′ = d(A + aB)`.
pub fn congruence_rescale(r: i64, t: u64) -> Result<(u64, i64, u64)> {
    if t == 0 {
        return invalid("t must be positive");
    }
    let d = r.unsigned_abs().gcd(&t);
    Ok((d, r / d as i64, t / d))
}

/// A `P`-bit dyadic point `X/2^P` of `[0, 1)`, limbs little-endian.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPoint {
    limbs: Vec<u64>,
}

impl FixedPoint {
    /// Draws the `P` most significant bits of the stream for `(seed, sample)`, most significant first.
    pub fn sample(seed: u64, sample: u64, bits: u32) -> Result<Self> {
        if bits == 0 || !bits.is_multiple_of(64) {
            return invalid(format!("precision P = {bits} must be a positive multiple of 64"));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(sample);
        let n = (bits / 64) as usize;
        let mut limbs = vec![0u64; n];
        for i in (0..n).rev() {
            limbs[i] = rng.next_u64();
        }
        Ok(Self { limbs })
    }

    pub fn from_limbs(limbs: Vec<u64>) -> Result<Self> {
        if limbs.is_empty() {
            return invalid("fixed point needs at least one limb");
        }
        Ok(Self { limbs })
    }

    /// Limbs, least significant first.
    pub fn limbs(&self) -> &[u64] {
        &self.limbs
    }

    pub fn bits(&self) -> u32 {
        64 * self.limbs.len() as u32
    }

    pub fn numerator(&self) -> BigUint {
        let mut v = BigUint::zero();
        for &l in self.limbs.iter().rev() {
            v = (v << 64u32) + l;
        }
        v
    }

    pub fn value(&self) -> Rational {
        Rational::new(self.numerator().into(), BigInt::one() << self.bits())
    }

    /// Adds `other` modulo 1; returns the carry into the integer part.
    fn add_assign(&mut self, other: &Self) -> bool {
        let mut carry = false;
        for (a, &b) in self.limbs.iter_mut().zip(&other.limbs) {
            let (s1, c1) = a.overflowing_add(b);
            let (s2, c2) = s1.overflowing_add(carry as u64);
            *a = s2;
            carry = c1 || c2;
        }
        carry
    }

    fn top(&self) -> u64 {
        *self.limbs.last().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Touch {
    Inside,
    Boundary,
    Outside,
}

/// One `(q, a)` with `|qx − a − γ| ≤ ψ(q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hit {
    pub q: u64,
    pub a: i64,
    pub ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HitRecord {
    pub sample: u64,
    pub hits: Vec<Hit>,
    pub count: u64,
    pub ambiguous: u64,
    /// `(Q_c, unambiguous hits with q ≤ Q_c)`.
    pub checkpoints: Vec<(u64, u64)>,
}

#[derive(Debug, Clone)]
pub struct HitOptions {
    pub q_max: u64,
    pub samples: u64,
    pub seed: u64,
    pub bits: u32,
    pub threads: usize,
    /// Whether unambiguous hits are stored individually (ambiguous ones always are).
    pub keep_hits: bool,
}

impl Default for HitOptions {
    fn default() -> Self {
        Self { q_max: 1000, samples: 100, seed: 0, bits: 256, threads: 1, keep_hits: true }
    }
}

/// Per-q data shared by all samples.
struct Scan {
    mode: HitMode,
    gamma_floor: i128,
    gamma_num: BigInt,
    gamma_den: BigInt,
    gamma_f: f64,
    psi: Vec<Option<(BigInt, BigInt, f64)>>,
}

impl Scan {
    fn new(gamma: &Rational, psi: &ApproxFn, mode: HitMode, q_max: u64, scale: &Rational) -> Result<Self> {
        let floor = gamma.floor();
        let frac = gamma - &floor;
        let gamma_floor = floor
            .to_integer()
            .to_i128()
            .filter(|v| v.unsigned_abs() < 1 << 62)
            .ok_or_else(|| LabError::InvalidArgument("γ is too large".into()))?;
        let mut table = vec![None; q_max as usize + 1];
        for (q, v) in psi.support(1, q_max)? {
            let v = v * scale;
            if !v.is_zero() {
                table[q as usize] = Some((v.numer().clone(), v.denom().clone(), to_f64(&v)));
            }
        }
        Ok(Self {
            mode,
            gamma_floor,
            gamma_num: frac.numer().clone(),
            gamma_den: frac.denom().clone(),
            gamma_f: to_f64(&frac),
            psi: table,
        })
    }

    /// Exact position of `qx*` relative to the band, `x* ∈ [x − 2^{−P}, x + 2^{−P}]`, where the fractional part
    /// of `qx` is `f/2^P` and `d = f/2^P − j − {γ}`.
    fn classify_exact(&self, f: &BigUint, bits: u32, j: i64, q: u64, pn: &BigInt, pd: &BigInt) -> Touch {
        let two_p = BigInt::one() << bits;
        let (gn, gd) = (&self.gamma_num, &self.gamma_den);
        let d = ((BigInt::from(f.clone()) - BigInt::from(j) * &two_p) * gd - gn * &two_p) * pd;
        let slack = BigInt::from(q) * gd * pd;
        let psi = pn * gd * &two_p;
        let ad = d.abs();
        if &ad + &slack <= psi {
            Touch::Inside
        } else if ad - slack <= psi {
            Touch::Boundary
        } else {
            Touch::Outside
        }
    }

    fn run(&self, x: &FixedPoint, sample: u64, q_max: u64, keep: bool, checkpoints: &[u64]) -> HitRecord {
        let bits = x.bits();
        let mut y = FixedPoint { limbs: vec![0; x.limbs.len()] };
        let mut int_part: i128 = 0;
        let mut rec = HitRecord { sample, hits: Vec::new(), count: 0, ambiguous: 0, checkpoints: Vec::new() };
        let mut next_cp = 0;
        let slack_f = 2.0f64.powi(-(bits.min(1000) as i32));
        for q in 1..=q_max {
            if y.add_assign(x) {
                int_part += 1;
            }
            if let Some((pn, pd, pf)) = &self.psi[q as usize] {
                if self.mode.admits_q(q) {
                    self.probe(&y, bits, int_part, q, pn, pd, *pf, slack_f, keep, &mut rec);
                }
            }
            while next_cp < checkpoints.len() && checkpoints[next_cp] == q {
                rec.checkpoints.push((q, rec.count));
                next_cp += 1;
            }
        }
        rec
    }

    #[allow(clippy::too_many_arguments)]
    fn probe(
        &self,
        y: &FixedPoint,
        bits: u32,
        int_part: i128,
        q: u64,
        pn: &BigInt,
        pd: &BigInt,
        pf: f64,
        slack_f: f64,
        keep: bool,
        rec: &mut HitRecord,
    ) {
        let t = y.top() as f64 * 2.0f64.powi(-64) - self.gamma_f;
        let margin = 2.0f64.powi(-40) * pf.max(1.0) + 4.0 * q as f64 * slack_f;
        let lo = (t - pf - margin).floor() as i64;
        let hi = (t + pf + margin).ceil() as i64;
        let mut boundary = None;
        let mut exact_f = None;
        for j in lo..=hi {
            let e = (t - j as f64).abs();
            if e >= pf + margin {
                continue;
            }
            let a = (int_part + j as i128 - self.gamma_floor) as i64;
            if !self.mode.admits(a, q) {
                continue;
            }
            let touch = if e <= pf - margin {
                Touch::Inside
            } else {
                let f = exact_f.get_or_insert_with(|| y.numerator());
                self.classify_exact(f, bits, j, q, pn, pd)
            };
            match touch {
                Touch::Inside => {
                    rec.count += 1;
                    if keep {
                        rec.hits.push(Hit { q, a, ambiguous: false });
                    }
                    return;
                }
                Touch::Boundary => {
                    boundary.get_or_insert(a);
                }
                Touch::Outside => {}
            }
        }
        if let Some(a) = boundary {
            rec.ambiguous += 1;
            rec.hits.push(Hit { q, a, ambiguous: true });
        }
    }
}

fn default_checkpoints(q_max: u64) -> Vec<u64> {
    let mut cps: Vec<u64> = std::iter::successors(Some(10u64), |c| c.checked_mul(10)).take_while(|&c| c < q_max).collect();
    cps.push(q_max);
    cps
}

fn run_samples<F>(opts: &HitOptions, work: F) -> Vec<HitRecord>
where
    F: Fn(u64) -> HitRecord + Sync,
{
    let threads = opts.threads.max(1).min(opts.samples.max(1) as usize);
    let mut out: Vec<HitRecord> = if threads == 1 {
        (0..opts.samples).map(&work).collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads as u64)
                .map(|tid| {
                    let work = &work;
                    scope.spawn(move || (tid..opts.samples).step_by(threads).map(work).collect::<Vec<_>>())
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
        })
    };
    out.sort_by_key(|r| r.sample);
    out
}

fn check_opts(opts: &HitOptions) -> Result<()> {
    if opts.q_max == 0 || opts.samples == 0 {
        return invalid("Q and the sample count must be at least 1");
    }
    if opts.q_max > u32::MAX as u64 {
        return Err(LabError::Resource(format!("Q = {} exceeds the scan limit", opts.q_max)));
    }
    if opts.bits == 0 || !opts.bits.is_multiple_of(64) {
        return invalid(format!("precision P = {} must be a positive multiple of 64", opts.bits));
    }
    Ok(())
}

/// Counts `q ≤ Q` with a witness `a` satisfying the mode and `|qx − a − γ| ≤ ψ(q)` for seeded
/// `P`-bit sample points; hits inside the `±2^{−P}` band are flagged ambiguous and not counted.
pub fn montecarlo_hits(gamma: &InhomShift, psi: &ApproxFn, mode: HitMode, opts: &HitOptions) -> Result<Vec<HitRecord>> {
    check_opts(opts)?;
    let scan = Scan::new(&gamma.value()?, psi, mode, opts.q_max, &Rational::one())?;
    let cps = default_checkpoints(opts.q_max);
    Ok(run_samples(opts, |s| {
        let x = FixedPoint::sample(opts.seed, s, opts.bits).expect("validated precision");
        scan.run(&x, s, opts.q_max, opts.keep_hits, &cps)
    }))
}

/// `sample,q,a,ambiguous`.
pub fn write_hits_csv<W: Write>(records: &[HitRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample", "q", "a", "ambiguous"])?;
    for r in records {
        for h in &r.hits {
            w.write_record([r.sample.to_string(), h.q.to_string(), h.a.to_string(), (h.ambiguous as u8).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn quantile(sorted: &[u64], p: f64) -> u64 {
    let idx = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Quantiles of unambiguous hit counts and the fraction of samples with at least `threshold` hits.
pub fn hit_summary(records: &[HitRecord], threshold: u64) -> Value {
    let mut counts: Vec<u64> = records.iter().map(|r| r.count).collect();
    counts.sort_unstable();
    let n = counts.len();
    let reaching = counts.iter().filter(|&&c| c >= threshold).count();
    let quantiles = if n == 0 {
        Value::Null
    } else {
        json!({
            "min": counts[0],
            "q10": quantile(&counts, 0.10),
            "q25": quantile(&counts, 0.25),
            "median": quantile(&counts, 0.5),
            "q75": quantile(&counts, 0.75),
            "q90": quantile(&counts, 0.90),
            "max": counts[n - 1],
        })
    };
    json!({
        "rng": RNG_ALGORITHM,
        "samples": n,
        "quantiles": quantiles,
        "threshold": threshold,
        "fraction_at_least_threshold": if n == 0 { 0.0 } else { reaching as f64 / n as f64 },
        "samples_at_least_threshold": reaching,
        "ambiguous_total": records.iter().map(|r| r.ambiguous).sum::<u64>(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DichotomyRow {
    pub sample: u64,
    pub first: u64,
    pub second: u64,
    /// Unambiguous `(q, a)` hits of the first system that are not unambiguous hits of the second.
    pub containment_failures: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DichotomyReport {
    pub scale: Rational,
    pub rows: Vec<DichotomyRow>,
    pub fraction_first_exceeds: f64,
}

impl DichotomyReport {
    pub fn containment_failures(&self) -> u64 {
        self.rows.iter().map(|r| r.containment_failures).sum()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "scale": fmt_rational(&self.scale),
            "fraction_first_exceeds": self.fraction_first_exceeds,
            "containment_failures": self.containment_failures(),
            "rows": self.rows.iter().map(|r| json!([r.sample, r.first, r.second, r.containment_failures])).collect::<Vec<_>>(),
        })
    }
}

/// Hit counts for `(γ, ψ)` against `(γ′, Cψ)` with `C = |γ − γ′|/δ + 1`, and an exact per-hit containment check.
pub fn dichotomy_probe(
    gamma: &Rational,
    gamma2: &Rational,
    psi: &ApproxFn,
    delta: &Rational,
    mode: HitMode,
    opts: &HitOptions,
) -> Result<DichotomyReport> {
    check_opts(opts)?;
    if !delta.is_positive() {
        return invalid("δ must be positive");
    }
    for (q, v) in psi.support(1, opts.q_max)? {
        if v < *delta {
            return invalid(format!("ψ({q}) = {} is below δ = {}", fmt_rational(&v), fmt_rational(delta)));
        }
    }
    let scale = (gamma - gamma2).abs() / delta + Rational::one();
    let first = Scan::new(gamma, psi, mode, opts.q_max, &Rational::one())?;
    let second = Scan::new(gamma2, psi, mode, opts.q_max, &scale)?;
    let cps = [opts.q_max];
    let rows: Vec<(HitRecord, HitRecord, u64)> = run_samples(opts, |s| {
        let x = FixedPoint::sample(opts.seed, s, opts.bits).expect("validated precision");
        let r1 = first.run(&x, s, opts.q_max, true, &cps);
        let r2 = second.run(&x, s, opts.q_max, false, &cps);
        let failures = containment_failures(&x, &r1, &second);
        let mut tagged = r1;
        tagged.checkpoints = vec![(r2.count, failures)];
        tagged
    })
    .into_iter()
    .map(|r| {
        let (c2, fails) = r.checkpoints[0];
        let second_rec = HitRecord { sample: r.sample, hits: Vec::new(), count: c2, ambiguous: 0, checkpoints: Vec::new() };
        (r, second_rec, fails)
    })
    .collect();
    let exceeds = rows.iter().filter(|(a, b, _)| a.count > b.count).count();
    Ok(DichotomyReport {
        scale,
        fraction_first_exceeds: exceeds as f64 / rows.len() as f64,
        rows: rows
            .into_iter()
            .map(|(a, b, f)| DichotomyRow { sample: a.sample, first: a.count, second: b.count, containment_failures: f })
            .collect(),
    })
}

/// Exact recheck of every unambiguous first-system witness `(q, a)` against the second system.
fn containment_failures(x: &FixedPoint, first: &HitRecord, second: &Scan) -> u64 {
    let xv = x.value();
    let slack = Rational::new(BigInt::one(), BigInt::one() << x.bits());
    let gamma2 = Rational::new(second.gamma_num.clone(), second.gamma_den.clone()) + Rational::from(BigInt::from(second.gamma_floor));
    first
        .hits
        .iter()
        .filter(|h| !h.ambiguous)
        .filter(|h| {
            let Some((pn, pd, _)) = &second.psi[h.q as usize] else { return true };
            let qq = from_u64(h.q);
            let d = (&qq * &xv - Rational::from(BigInt::from(h.a)) - &gamma2).abs();
            !(second.mode.admits(h.a, h.q) && d + &qq * &slack <= Rational::new(pn.clone(), pd.clone()))
        })
        .count() as u64
}
