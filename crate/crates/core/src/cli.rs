//! Command-line front end: argument parsing, config merging and report writing.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_bigint::BigUint;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::bclab::{self, FinSpace, HitMode, HitOptions, Verdict};
use crate::contfrac::{self, FRule, GammaCertificate, GammaOptions};
use crate::dynsim::{self, CountingOptions, DynSystem, TargetSequence};
use crate::error::{LabError, Result};
use crate::moments::{self, IndexWindow, PairTable, DEFAULT_MAX_WINDOW};
use crate::numtheory::{self, overlap};
use crate::rational::{fmt_rational, parse_rational, to_f64, Rational};
use crate::targets::{ApproxFn, InhomShift, TargetFamily};
use crate::unitcircle::CircleSet;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "dslab", version, about = "Exact and Monte Carlo experiments for divergence Borel–Cantelli and inhomogeneous Duffin–Schaeffer")]
pub struct Cli {
    /// Worker threads for sample sharding; defaults to the available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Exact measure of one approximation set.
    Measure(MeasureArgs),
    /// Exact intersection of two approximation sets with the (m, l, n) analysis.
    Overlap(OverlapArgs),
    /// Divergence sum and pairwise second moments over a window.
    Moments(WindowArgs),
    /// Reduction Lemma step or band reduction over a window.
    Reduce(ReduceArgs),
    /// Arithmetic functions, F(h, q) and H(c) tables.
    Numth(NumthArgs),
    /// Construct a badly approximable-by-design γ with a certificate.
    GammaForge(ForgeArgs),
    /// Re-derive a γ certificate.
    GammaVerify(VerifyArgs),
    /// Exact measure of a finite tail union.
    TailUnion(TailArgs),
    /// Monte Carlo hit counts.
    Hits(HitsArgs),
    /// Containment probe between two shifts.
    Dichotomy(DichotomyArgs),
    /// Exact mixing gaps for ×b against the summable envelope.
    Mixing(MixingArgs),
    /// Shrinking-target counting experiment.
    Count(CountArgs),
    /// Finite-space Borel–Cantelli checks.
    Finspace(FinspaceArgs),
}

#[derive(Args, Debug, Serialize, Clone)]
pub struct PsiArgs {
    /// ψ expression, e.g. "c/q:c=1" or "1/(2q)".
    #[arg(long)]
    pub psi: Option<String>,
    /// ψ table with header q,psi_num,psi_den.
    #[arg(long)]
    pub psi_table: Option<PathBuf>,
}

impl PsiArgs {
    fn load(&self) -> Result<ApproxFn> {
        match (&self.psi, &self.psi_table) {
            (Some(e), None) => ApproxFn::expr(e),
            (None, Some(p)) => ApproxFn::from_csv_path(p),
            (Some(_), Some(_)) => Err(LabError::InvalidArgument("give either --psi or --psi-table".into())),
            (None, None) => Err(LabError::InvalidArgument("missing --psi or --psi-table".into())),
        }
    }
}

#[derive(Args, Debug, Serialize, Clone)]
pub struct FamilyArgs {
    /// eq, eq-prime, eq-i or eq-star.
    #[arg(long, default_value = "eq-prime")]
    pub set: String,
    /// Shift as "A/B" or a certificate file.
    #[arg(long, default_value = "0/1")]
    pub gamma: String,
    /// Convergent index used when --gamma is a certificate; defaults to the last one.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub a0: i64,
    #[arg(long, default_value_t = 1)]
    pub b: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub psi: PsiArgs,
}

fn load_shift(s: &str, depth: Option<usize>) -> Result<InhomShift> {
    if let Ok(r) = parse_rational(s) {
        return Ok(InhomShift::Rational(r));
    }
    let path = Path::new(s);
    if !path.exists() {
        return Err(LabError::Parse(format!("γ {s:?} is neither a rational nor an existing certificate file")));
    }
    let cert = GammaCertificate::from_json(&serde_json::from_str(&fs::read_to_string(path)?)?)?;
    let cf = cert.expansion()?;
    let k = depth.unwrap_or(cf.len());
    Ok(InhomShift::Convergent { cf, k })
}

impl FamilyArgs {
    fn family(&self) -> Result<TargetFamily> {
        let psi = self.psi.load()?;
        let gamma = load_shift(&self.gamma, self.depth)?.value()?;
        Ok(match self.set.as_str() {
            "eq" => TargetFamily::Eq { gamma, psi },
            "eq-prime" => TargetFamily::EqPrime { gamma, psi },
            "eq-i" => TargetFamily::EqI { gamma, a0: self.a0, b: self.b, psi },
            "eq-star" => TargetFamily::EqStar { a0: self.a0, b: self.b, psi },
            s => return Err(LabError::InvalidArgument(format!("unknown set {s:?}"))),
        })
    }
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct MeasureArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub family: FamilyArgs,
    #[arg(long)]
    pub q: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct OverlapArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub family: FamilyArgs,
    #[arg(long)]
    pub q: u64,
    #[arg(long)]
    pub r: u64,
    /// Evaluate L_t at these values.
    #[arg(long, value_delimiter = ',')]
    pub lt: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct WindowArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub family: FamilyArgs,
    /// Window as lo..hi or a comma list.
    #[arg(long)]
    pub window: String,
    #[arg(long, default_value_t = DEFAULT_MAX_WINDOW)]
    pub max_window: usize,
    /// Report path; .csv or .json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_window(s: &str) -> Result<IndexWindow> {
    let bad = || LabError::Parse(format!("bad window {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        return Ok(IndexWindow::range(a, b));
    }
    let v = s.split(',').map(|x| x.trim().parse::<u64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
    Ok(IndexWindow::new(v))
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct ReduceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub window: WindowArgs,
    /// C′ in the quasi-independence inequality.
    #[arg(long)]
    pub c_prime: String,
    /// Upper end ε of the target band; requires --c.
    #[arg(long)]
    pub eps: Option<String>,
    #[arg(long)]
    pub c: Option<String>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct NumthArgs {
    #[arg(long)]
    pub q: u64,
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub a0: i64,
    #[arg(long, default_value_t = 1)]
    pub b: u64,
    /// Second modulus for the H(c) table.
    #[arg(long)]
    pub r: Option<u64>,
    /// Shift h for F(h, q).
    #[arg(long, allow_negative_numbers = true)]
    pub h: Option<i64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct ForgeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub psi: PsiArgs,
    /// f rule as a CSV table with header q,f.
    #[arg(long)]
    pub f_table: Option<PathBuf>,
    /// f(q) = q^s.
    #[arg(long)]
    pub f_power: Option<u32>,
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    /// Require prime convergent denominators.
    #[arg(long)]
    pub prime: bool,
    #[arg(long, default_value_t = 1 << 20)]
    pub horizon: u64,
    #[arg(long)]
    pub trim_small: bool,
    /// Prescribed partial quotients as k=a pairs.
    #[arg(long, value_delimiter = ',')]
    pub fixed: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct VerifyArgs {
    pub certificate: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct TailArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub family: FamilyArgs,
    #[arg(long)]
    pub m: u64,
    #[arg(long = "Q")]
    #[serde(rename = "Q")]
    pub big_q: u64,
    /// Extra horizons reported as a curve.
    #[arg(long, value_delimiter = ',')]
    pub curve: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Clone)]
pub struct McArgs {
    #[arg(long = "Q")]
    #[serde(rename = "Q")]
    pub big_q: u64,
    #[arg(long, default_value_t = 100)]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample precision in bits, a multiple of 64.
    #[arg(long, default_value_t = 256)]
    pub precision: u32,
    /// all_a, coprime, residue:A,B or congruence:r,t,s,u.
    #[arg(long, default_value = "all_a")]
    pub mode: String,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct HitsArgs {
    #[arg(long, default_value = "0/1")]
    pub gamma: String,
    #[arg(long)]
    pub depth: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub psi: PsiArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub mc: McArgs,
    #[arg(long, default_value_t = 10)]
    pub threshold: u64,
    /// Hit records as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct DichotomyArgs {
    #[arg(long)]
    pub gamma: String,
    #[arg(long)]
    pub gamma2: String,
    #[arg(long)]
    pub delta: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub psi: PsiArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub mc: McArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct MixingArgs {
    #[arg(long, default_value = "x2")]
    pub system: String,
    /// Number of seeded random interval pairs with dyadic endpoints.
    #[arg(long, default_value_t = 100)]
    pub pairs: usize,
    /// Explicit pair as a_lo,a_hi,b_lo,b_hi; replaces the random pairs.
    #[arg(long)]
    pub pair: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[serde(rename = "N")]
    #[arg(long = "N", default_value_t = 20)]
    pub n_max: u32,
    /// Gap table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct CountArgs {
    #[arg(long, default_value = "x2")]
    pub system: String,
    /// Radius rule r_n, e.g. "1/(4n)".
    #[arg(long)]
    pub radius: String,
    #[serde(rename = "N")]
    #[arg(long = "N")]
    pub n_max: u64,
    #[arg(long, default_value_t = 200)]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the target centers; defaults to --seed.
    #[arg(long)]
    pub center_seed: Option<u64>,
    #[arg(long, default_value = "1/10")]
    pub eps: String,
    #[serde(rename = "K")]
    #[arg(long = "K", default_value_t = dynsim::DEFAULT_K)]
    pub k: u32,
    /// Residual table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct FinspaceArgs {
    /// Atom weights, comma separated.
    #[arg(long)]
    pub weights: String,
    /// Preperiod events separated by ';', atoms by ','; '-' is the empty event.
    #[arg(long, default_value = "")]
    pub pre: String,
    #[arg(long)]
    pub period: String,
    /// C for the divergence Borel–Cantelli check.
    #[arg(long = "C")]
    #[serde(rename = "C")]
    pub c: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub horizon: u64,
    /// C′ for the windowed check; requires --c-low and --windows.
    #[arg(long)]
    pub c_prime: Option<String>,
    #[arg(long)]
    pub c_low: Option<String>,
    /// Windows as lo..hi separated by ';'.
    #[arg(long)]
    pub windows: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn rat_arg(name: &str, s: &str) -> Result<Rational> {
    parse_rational(s).map_err(|e| LabError::Parse(format!("--{name}: {e}")))
}

fn write_json(path: &Option<PathBuf>, v: &Value) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, serde_json::to_string_pretty(v)? + "\n")?;
    }
    Ok(())
}

fn config_of<T: Serialize>(command: &str, args: &T) -> Value {
    json!({ "command": command, "args": serde_json::to_value(args).unwrap_or(Value::Null) })
}

fn threads(cli_threads: Option<usize>) -> usize {
    cli_threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1)
}

/// Runs one parsed command; returns the exit status.
pub fn execute(cli: Cli) -> Result<i32> {
    let threads = threads(cli.threads);
    match cli.command {
        Command::Measure(a) => {
            let fam = a.family.family()?;
            let set = fam.build(a.q)?;
            let m = set.measure();
            println!("{}", fmt_rational(&m));
            write_json(&a.out, &json!({
                "config": config_of("measure", &a),
                "family": fam.to_json(),
                "q": a.q,
                "measure": fmt_rational(&m),
                "nominal": fmt_rational(&fam.nominal_measure(a.q)?),
                "components": set.len(),
            }))?;
            Ok(EXIT_OK)
        }
        Command::Overlap(a) => {
            let fam = a.family.family()?;
            let (sq, sr) = (fam.build(a.q)?, fam.build(a.r)?);
            let joint = sq.intersect_measure(&sr);
            let psi = fam.psi();
            let mut an = overlap::mln_decompose(a.q, a.r)?.with_x(&psi.value(a.q)?, &psi.value(a.r)?, a.family.b);
            for t in &a.lt {
                an = an.with_lt(&rat_arg("lt", t)?);
            }
            let x = an.x.clone().expect("X computed");
            println!(
                "mu(E_q ∩ E_r) = {} (m={}, l={}, n={}, X={})",
                fmt_rational(&joint),
                an.m,
                an.l,
                an.n,
                fmt_rational(&x)
            );
            write_json(&a.out, &json!({
                "config": config_of("overlap", &a),
                "family": fam.to_json(),
                "intersection": fmt_rational(&joint),
                "measure_q": fmt_rational(&sq.measure()),
                "measure_r": fmt_rational(&sr.measure()),
                "analysis": an.to_json(),
            }))?;
            Ok(EXIT_OK)
        }
        Command::Moments(a) => {
            let fam = a.family.family()?;
            let w = parse_window(&a.window)?;
            let rep = moments::overlap_moments(&w, |q| fam.build(q), a.max_window)?;
            let opt = |r: &Option<Rational>| r.as_ref().map_or("undefined".into(), fmt_rational);
            println!(
                "Psi = {}  offdiag = {}  C' = {}  C = {}",
                fmt_rational(&rep.psi),
                fmt_rational(&rep.overlap_offdiag),
                opt(&rep.c_prime),
                opt(&rep.c_full)
            );
            if let Some(p) = &a.out {
                if p.extension().is_some_and(|e| e == "csv") {
                    rep.write_csv(fs::File::create(p)?)?;
                } else {
                    let mut v = rep.to_json();
                    v["config"] = config_of("moments", &a);
                    write_json(&a.out, &v)?;
                }
            }
            Ok(EXIT_OK)
        }
        Command::Reduce(a) => {
            let fam = a.window.family.family()?;
            let w = parse_window(&a.window.window)?;
            if w.len() > a.window.max_window {
                return Err(LabError::Resource(format!("window exceeds {}", a.window.max_window)));
            }
            let sets = w.members().iter().map(|&q| fam.build(q)).collect::<Result<Vec<CircleSet>>>()?;
            let table = PairTable::from_sets(&w, &sets);
            let cp = rat_arg("c-prime", &a.c_prime)?;
            let out = match (&a.eps, &a.c) {
                (Some(e), Some(c)) => {
                    let band = moments::reduce_to_band(&table, &rat_arg("eps", e)?, &rat_arg("c", c)?, &cp)?;
                    println!("band window: {:?}", band.members());
                    json!({ "band": band.members() })
                }
                (None, None) => {
                    let m = moments::reduction_step(&table, &cp)?;
                    println!("remove m = {m}");
                    json!({ "m": m })
                }
                _ => return Err(LabError::InvalidArgument("--eps and --c go together".into())),
            };
            let mut v = out;
            v["config"] = config_of("reduce", &a);
            write_json(&a.window.out, &v)?;
            Ok(EXIT_OK)
        }
        Command::Numth(a) => {
            let f = numtheory::factor(a.q)?;
            let iq = numtheory::enumerate_iq(a.q, a.a0, a.b)?;
            let mut v = json!({
                "config": config_of("numth", &a),
                "q": a.q,
                "phi": f.euler_phi(),
                "moebius": f.moebius(),
                "tau": f.tau(),
                "omega": f.omega(),
                "phi_qb": numtheory::phi_qb(a.q, a.b)?,
                "iq_size": iq.len(),
            });
            let mut line = format!("q={} phi={} phi(q,B)={} |I_q|={}", a.q, v["phi"], v["phi_qb"], iq.len());
            if let Some(h) = a.h {
                let brute = numtheory::f_hq(h, a.q, a.a0, a.b)?;
                let formula = numtheory::f_hq_formula(h, a.q, a.b)?;
                v["F"] = json!({ "h": h, "brute": brute, "formula": formula });
                line += &format!(" F(h,q)={brute} formula={formula}");
            }
            let mut status = EXIT_OK;
            if let Some(r) = a.r {
                let t = overlap::HcTable::compute(a.q, a.r.unwrap_or(r), a.a0, a.b)?;
                let chk = t.check()?;
                v["H"] = json!({
                    "r": r,
                    "nonzero": t.nonzero.len(),
                    "total": chk.total,
                    "pairs": t.a_count * t.b_count,
                    "vanish_violations": chk.vanish_violations,
                    "bound_violations": chk.bound_violations,
                });
                line += &format!(" H: {} nonzero, checks {}", t.nonzero.len(), if chk.ok() { "ok" } else { "FAILED" });
                if !chk.ok() {
                    status = EXIT_ERROR;
                }
            }
            println!("{line}");
            write_json(&a.out, &v)?;
            Ok(status)
        }
        Command::GammaForge(a) => {
            let mut fixed = BTreeMap::new();
            for kv in &a.fixed {
                let (k, v) = kv.split_once('=').ok_or_else(|| LabError::Parse(format!("bad --fixed entry {kv:?}")))?;
                let k: usize = k.trim().parse().map_err(|_| LabError::Parse(format!("bad index {k:?}")))?;
                let v: BigUint = v.trim().parse().map_err(|_| LabError::Parse(format!("bad quotient {v:?}")))?;
                fixed.insert(k, v);
            }
            let opts = GammaOptions { steps: a.steps, prime_denominators: a.prime, horizon: a.horizon, fixed, trim_small: a.trim_small };
            let f_rule = match (&a.f_table, a.f_power) {
                (Some(p), None) => Some(FRule::from_csv_reader(fs::File::open(p)?)?),
                (None, Some(s)) => Some(FRule::power(s)?),
                (None, None) => None,
                _ => return Err(LabError::InvalidArgument("give either --f-table or --f-power".into())),
            };
            let result = match f_rule {
                Some(f) => contfrac::construct_gamma_for_f(&f, &opts),
                None => contfrac::construct_gamma_for_psi(&a.psi.load()?, &opts),
            };
            let (cf, cert) = match result {
                Ok(v) => v,
                Err(LabError::DivergenceHorizon(msg)) => {
                    eprintln!("inconclusive: {msg}");
                    return Ok(EXIT_INCONCLUSIVE);
                }
                Err(e) => return Err(e),
            };
            let mut v = cert.to_json();
            v["config"] = config_of("gamma-forge", &a);
            write_json(&a.out, &v)?;
            let last = cert.steps.last().expect("at least one step");
            println!(
                "{} steps, {} partial quotients, last window [{}, {}], q_k has {} bits",
                cert.steps.len(),
                cf.len(),
                last.window.0,
                last.window.1,
                last.q_k.bits()
            );
            Ok(EXIT_OK)
        }
        Command::GammaVerify(a) => {
            let text = fs::read_to_string(&a.certificate)?;
            let cert = GammaCertificate::from_json(&serde_json::from_str(&text)?)?;
            let chk = contfrac::verify_certificate(&cert)?;
            if chk.ok() {
                println!("certificate ok: {} steps", cert.steps.len());
                Ok(EXIT_OK)
            } else {
                for f in &chk.failures {
                    eprintln!("{f}");
                }
                println!("certificate FAILED: {} problems", chk.failures.len());
                Ok(EXIT_ERROR)
            }
        }
        Command::TailUnion(a) => {
            let fam = a.family.family()?;
            let mut horizons = a.curve.clone();
            horizons.push(a.big_q);
            let curve = bclab::tail_union_curve(&fam, a.m, &horizons)?;
            let (_, v) = curve.last().expect("non-empty");
            println!("mu(union q={}..{}) = {} ~ {:.9}", a.m, a.big_q, fmt_rational(v), to_f64(v));
            write_json(&a.out, &json!({
                "config": config_of("tail-union", &a),
                "family": fam.to_json(),
                "curve": curve.iter().map(|(q, v)| json!({ "Q": q, "measure": fmt_rational(v), "approx": to_f64(v) })).collect::<Vec<_>>(),
            }))?;
            Ok(EXIT_OK)
        }
        Command::Hits(a) => {
            let gamma = load_shift(&a.gamma, a.depth)?;
            let psi = a.psi.load()?;
            let mode = HitMode::parse(&a.mc.mode)?;
            let opts = HitOptions {
                q_max: a.mc.big_q,
                samples: a.mc.samples,
                seed: a.mc.seed,
                bits: a.mc.precision,
                threads,
                keep_hits: true,
            };
            let recs = bclab::montecarlo_hits(&gamma, &psi, mode, &opts)?;
            if let Some(p) = &a.out {
                bclab::write_hits_csv(&recs, fs::File::create(p)?)?;
            }
            let mut s = bclab::hit_summary(&recs, a.threshold);
            println!(
                "{} of {} samples reach {} hits by Q={} (fraction {})",
                s["samples_at_least_threshold"], s["samples"], a.threshold, a.mc.big_q, s["fraction_at_least_threshold"]
            );
            s["config"] = config_of("hits", &a);
            s["gamma"] = json!(fmt_rational(&gamma.value()?));
            s["psi"] = psi.to_json();
            s["mode"] = json!(mode.describe());
            write_json(&a.summary, &s)?;
            Ok(EXIT_OK)
        }
        Command::Dichotomy(a) => {
            let g1 = load_shift(&a.gamma, None)?.value()?;
            let g2 = load_shift(&a.gamma2, None)?.value()?;
            let psi = a.psi.load()?;
            let opts = HitOptions {
                q_max: a.mc.big_q,
                samples: a.mc.samples,
                seed: a.mc.seed,
                bits: a.mc.precision,
                threads,
                keep_hits: true,
            };
            let rep = bclab::dichotomy_probe(&g1, &g2, &psi, &rat_arg("delta", &a.delta)?, HitMode::parse(&a.mc.mode)?, &opts)?;
            println!(
                "C = {}; first exceeds second in fraction {}; containment failures {}",
                fmt_rational(&rep.scale),
                rep.fraction_first_exceeds,
                rep.containment_failures()
            );
            let mut v = rep.to_json();
            v["config"] = config_of("dichotomy", &a);
            v["rng"] = json!(bclab::RNG_ALGORITHM);
            write_json(&a.out, &v)?;
            Ok(if rep.containment_failures() == 0 { EXIT_OK } else { EXIT_ERROR })
        }
        Command::Mixing(a) => {
            let sys = DynSystem::parse(&a.system)?;
            let pairs = match &a.pair {
                Some(p) => {
                    let v = p.split(',').map(|s| rat_arg("pair", s.trim())).collect::<Result<Vec<_>>>()?;
                    if v.len() != 4 {
                        return Err(LabError::Parse("--pair needs four rationals".into()));
                    }
                    vec![(
                        CircleSet::from_real_intervals([(v[0].clone(), v[1].clone())]),
                        CircleSet::from_real_intervals([(v[2].clone(), v[3].clone())]),
                    )]
                }
                None => random_dyadic_pairs(a.seed, a.pairs),
            };
            let prof = dynsim::sigma_mixing_envelope(&sys, &pairs, a.n_max)?;
            if let Some(p) = &a.out {
                prof.write_csv(fs::File::create(p)?)?;
            }
            println!(
                "{} pairs, n ≤ {}: {} envelope violations",
                pairs.len(),
                a.n_max,
                prof.violations.len()
            );
            Ok(if prof.violations.is_empty() { EXIT_OK } else { EXIT_ERROR })
        }
        Command::Count(a) => {
            let sys = DynSystem::parse(&a.system)?;
            let targets = TargetSequence::seeded(ApproxFn::expr(&a.radius)?, a.center_seed.unwrap_or(a.seed));
            let opts = CountingOptions {
                n_max: a.n_max,
                samples: a.samples,
                seed: a.seed,
                eps: rat_arg("eps", &a.eps)?,
                k: a.k,
                threads,
            };
            let rep = dynsim::counting_experiment(&sys, &targets, &opts)?;
            if let Some(p) = &a.out {
                rep.write_csv(fs::File::create(p)?)?;
            }
            let mut m = rep.manifest.clone();
            m["config"] = config_of("count", &a);
            write_json(&a.manifest, &m)?;
            match rep.pass_fraction {
                Some(f) => println!("Phi(N) ~ {:.6}; pass fraction {f}", to_f64(&rep.phi)),
                None => println!("Phi(N) ~ {:.6}; residual {:.6} (single sample, no verdict)", to_f64(&rep.phi), rep.rows[0].residual),
            }
            Ok(EXIT_OK)
        }
        Command::Finspace(a) => {
            let space = parse_finspace(&a.weights, &a.pre, &a.period)?;
            let lim = bclab::finspace_limsup_measure(&space);
            let mut v = json!({ "config": config_of("finspace", &a), "limsup_measure": fmt_rational(&lim) });
            let mut line = format!("mu(E_inf) = {}", fmt_rational(&lim));
            let mut verdicts = Vec::new();
            if let Some(c) = &a.c {
                let vd = bclab::verify_dbc(&space, &rat_arg("C", c)?, a.horizon)?;
                v["dbc"] = vd.to_json();
                line += &format!("; DBC {}", vd.to_json()["verdict"]);
                verdicts.push(vd);
            }
            if let Some(cp) = &a.c_prime {
                let (Some(cl), Some(ws)) = (&a.c_low, &a.windows) else {
                    return Err(LabError::InvalidArgument("--c-prime needs --c-low and --windows".into()));
                };
                let windows = ws.split(';').map(parse_window).collect::<Result<Vec<_>>>()?;
                let vd = bclab::verify_gdbc(&space, &windows, &rat_arg("c-low", cl)?, &rat_arg("c-prime", cp)?)?;
                v["gdbc"] = vd.to_json();
                line += &format!("; GDBC {}", vd.to_json()["verdict"]);
                verdicts.push(vd);
            }
            println!("{line}");
            write_json(&a.out, &v)?;
            Ok(if verdicts.iter().any(|v| matches!(v, Verdict::Violated { .. })) {
                EXIT_ERROR
            } else if verdicts.iter().any(Verdict::is_inconclusive) {
                EXIT_INCONCLUSIVE
            } else {
                EXIT_OK
            })
        }
    }
}

/// Intervals with 32-bit dyadic endpoints drawn from the stream seeded by `seed`.
pub fn random_dyadic_pairs(seed: u64, n: usize) -> Vec<(CircleSet, CircleSet)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut interval = || {
        let (x, y) = (rng.next_u32() as i64, rng.next_u32() as i64);
        let den = 1i64 << 32;
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        CircleSet::from_real_intervals([(Rational::new(lo.into(), den.into()), Rational::new(hi.into(), den.into()))])
    };
    (0..n).map(|_| (interval(), interval())).collect()
}

fn parse_finspace(weights: &str, pre: &str, period: &str) -> Result<FinSpace> {
    let w = weights.split(',').map(|s| rat_arg("weights", s.trim())).collect::<Result<Vec<_>>>()?;
    let events = |s: &str| -> Result<Vec<std::collections::BTreeSet<usize>>> {
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(';')
            .map(|e| {
                let e = e.trim();
                if e == "-" || e.is_empty() {
                    return Ok(Default::default());
                }
                e.split(',')
                    .map(|a| a.trim().parse::<usize>().map_err(|_| LabError::Parse(format!("bad atom {a:?}"))))
                    .collect()
            })
            .collect()
    };
    FinSpace::new(w, events(pre)?, events(period)?)
}

const SUBCOMMANDS: [&str; 13] = [
    "measure", "overlap", "moments", "reduce", "numth", "gamma-forge", "gamma-verify", "tail-union", "hits",
    "dichotomy", "mixing", "count", "finspace",
];

/// Expands `--config file.json` into flags placed before the command-line flags, so explicit flags win.
fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    if let Some(prog) = it.next() {
        rest.push(prog);
    }
    while let Some(a) = it.next() {
        let s = a.to_string_lossy().into_owned();
        if s == "--config" {
            let p = it.next().ok_or_else(|| LabError::Parse("--config needs a path".into()))?;
            config = Some(PathBuf::from(p));
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let text = fs::read_to_string(&path).map_err(|e| LabError::InvalidArgument(format!("config {}: {e}", path.display())))?;
    let cfg: Value = serde_json::from_str(&text)?;
    let obj = cfg.as_object().ok_or_else(|| LabError::Parse("config must be a JSON object".into()))?;
    let pos = rest.iter().position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()));
    let pos = match pos {
        Some(p) => p,
        None => {
            let cmd = obj
                .get("command")
                .and_then(Value::as_str)
                .ok_or_else(|| LabError::Parse("no subcommand given and config has no \"command\"".into()))?;
            rest.insert(1, cmd.into());
            1
        }
    };
    let mut injected: Vec<OsString> = Vec::new();
    for (k, v) in obj {
        if k == "command" {
            continue;
        }
        let flag = format!("--{}", k.replace('_', "-"));
        let mut push = |v: &Value| -> Result<()> {
            match v {
                Value::Bool(true) => injected.push(flag.clone().into()),
                Value::Bool(false) | Value::Null => {}
                Value::String(s) => injected.extend([flag.clone().into(), s.into()]),
                Value::Number(n) => injected.extend([flag.clone().into(), n.to_string().into()]),
                _ => return Err(LabError::Parse(format!("unsupported config value for {k}"))),
            }
            Ok(())
        };
        match v {
            Value::Array(items) => items.iter().try_for_each(&mut push)?,
            v => push(v)?,
        }
    }
    let tail = rest.split_off(pos + 1);
    rest.extend(injected);
    rest.extend(tail);
    Ok(rest)
}

/// Parses `argv`, runs the command and maps the outcome to an exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args = match merge_config(argv.into_iter().map(Into::into).collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
