use std::collections::BTreeSet;

use dslab::bclab::{self, FinSpace, FixedPoint, HitMode, HitOptions};
use dslab::dynsim::{self, DynSystem};
use dslab::moments::{self, IndexWindow, PairTable};
use dslab::numtheory;
use dslab::rational::{from_u64, rat, Rational};
use dslab::targets::{ApproxFn, InhomShift, TargetFamily};
use dslab::CircleSet;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use proptest::prelude::*;

fn arc() -> impl Strategy<Value = (Rational, Rational)> {
    (0i64..97, 0i64..40, 1i64..97).prop_map(|(lo, len, den)| {
        let lo = Rational::new(lo.into(), 97.into());
        let hi = &lo + Rational::new(len.into(), (den * 3).into());
        (lo, hi)
    })
}

fn circle_set() -> impl Strategy<Value = CircleSet> {
    prop::collection::vec(arc(), 0..5).prop_map(|v| CircleSet::from_arcs(&v).expect("valid arcs"))
}

fn dyadic_interval(level: u32) -> impl Strategy<Value = CircleSet> {
    let den = 1i64 << level;
    (0..den, 1..=den).prop_map(move |(k, len)| {
        let hi = (k + len).min(den);
        CircleSet::from_real_intervals([(Rational::new(k.into(), den.into()), Rational::new(hi.into(), den.into()))])
    })
}

fn any_interval() -> impl Strategy<Value = CircleSet> {
    (0i64..1000, 0i64..1000, 1i64..1000).prop_map(|(x, y, d)| {
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        CircleSet::from_real_intervals([(Rational::new(lo.into(), d.into()), Rational::new(hi.into(), d.into()))])
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn circle_measure_algebra(a in circle_set(), b in circle_set()) {
        let union = a.union(&b);
        let inter = a.intersect(&b);
        prop_assert_eq!(union.measure() + inter.measure(), a.measure() + b.measure());
        prop_assert_eq!(a.intersect_measure(&b), inter.measure());
        prop_assert_eq!(a.complement().measure(), Rational::one() - a.measure());
        prop_assert_eq!(a.difference(&b).measure(), a.measure() - inter.measure());
        prop_assert!(inter.is_subset(&a) && a.is_subset(&union));
        prop_assert!(a.measure() >= Rational::zero() && a.measure() <= Rational::one());
    }

    #[test]
    fn circle_translation_preserves_measure(a in circle_set(), t in (-50i64..50, 1i64..30)) {
        let t = Rational::new(t.0.into(), t.1.into());
        prop_assert_eq!(a.translate(&t).measure(), a.measure());
    }

    #[test]
    fn finspace_limsup_matches_simulation(
        n_atoms in 1usize..6,
        raw_w in prop::collection::vec(1u32..10, 6),
        pre in prop::collection::vec(prop::collection::btree_set(0usize..6, 0..4), 0..3),
        period in prop::collection::vec(prop::collection::btree_set(0usize..6, 0..4), 1..4),
    ) {
        let total: u32 = raw_w[..n_atoms].iter().sum();
        let weights: Vec<Rational> = raw_w[..n_atoms].iter().map(|&w| rat(w as i64, total as i64)).collect();
        let clip = |v: Vec<BTreeSet<usize>>| -> Vec<BTreeSet<usize>> {
            v.into_iter().map(|e| e.into_iter().filter(|&a| a < n_atoms).collect()).collect()
        };
        let space = FinSpace::new(weights, clip(pre.clone()), clip(period.clone())).unwrap();
        let start = space.preperiod() as u64 + 1;
        let len = space.period_len() as u64;
        // Atoms recurring in three consecutive periods recur forever.
        let mut counts = vec![0u32; n_atoms];
        for i in start..start + 3 * len {
            for &a in space.event(i) {
                counts[a] += 1;
            }
        }
        let recurring: BTreeSet<usize> = (0..n_atoms).filter(|&a| counts[a] >= 3).collect();
        prop_assert_eq!(bclab::finspace_limsup_measure(&space), space.measure(&recurring));
    }

    #[test]
    fn tail_union_is_monotone_and_bounded(
        kind in 0u8..3, gn in -5i64..6, gd in 1i64..7, c in 1i64..4, m in 1u64..20, steps in prop::collection::vec(1u64..15, 1..4)
    ) {
        let gamma = Rational::new(gn.into(), gd.into());
        let psi = ApproxFn::expr(&format!("{c}/(3q)")).unwrap();
        let fam = match kind {
            0 => TargetFamily::Eq { gamma, psi },
            1 => TargetFamily::EqPrime { gamma, psi },
            _ => TargetFamily::EqI { gamma, a0: 1, b: 4, psi },
        };
        let mut q = m;
        let mut prev = Rational::zero();
        for s in steps {
            q += s;
            let v = bclab::tail_union_measure(&fam, m, q).unwrap();
            prop_assert!(v >= prev && v <= Rational::one());
            prop_assert_eq!(&v, &bclab::tail_union_measure_with(|k| fam.build(k), m, q).unwrap());
            prev = v;
        }
    }

    #[test]
    fn preimage_preserves_measure(a in circle_set(), b in 2u64..5, n in 0u32..5) {
        let sys = DynSystem::times(b).unwrap();
        let pre = dynsim::exact_preimage(&a, n, &sys, 1 << 20).unwrap();
        prop_assert_eq!(pre.measure(), a.measure());
        let rot = DynSystem::Rotation(rat(2, 7));
        prop_assert_eq!(dynsim::exact_preimage(&a, n, &rot, 1 << 20).unwrap().measure(), a.measure());
    }

    #[test]
    fn mixing_gap_within_envelope(a in any_interval(), b in any_interval(), n in 1u32..21) {
        let sys = DynSystem::TimesB(2);
        let g = dynsim::mixing_gap(&a, &b, n, &sys).unwrap();
        let env = from_u64(2) * b.measure() / from_u64(1u64 << n);
        prop_assert!(g.abs() <= env);
    }

    #[test]
    fn mixing_gap_vanishes_at_dyadic_level((n, a) in (1u32..12).prop_flat_map(|n| (Just(n), dyadic_interval(n))), b in any_interval()) {
        prop_assert_eq!(dynsim::mixing_gap(&a, &b, n, &DynSystem::TimesB(2)).unwrap(), Rational::zero());
    }

    #[test]
    fn mixing_gap_matches_exact_preimage(a in any_interval(), b in any_interval(), n in 1u32..8) {
        let sys = DynSystem::TimesB(3);
        let pre = dynsim::exact_preimage(&b, n, &sys, 1 << 20).unwrap();
        let direct = a.intersect_measure(&pre) - a.measure() * b.measure();
        prop_assert_eq!(dynsim::mixing_gap(&a, &b, n, &sys).unwrap(), direct);
    }

    #[test]
    fn reduction_step_revalidates(sets in prop::collection::vec(circle_set(), 1..9), slack in 0i64..5) {
        let window = IndexWindow::range(1, sets.len() as u64);
        let table = PairTable::from_sets(&window, &sets);
        let rep = moments::report_from(&table);
        let Some(base) = rep.c_prime.clone() else { return Ok(()) };
        let c_prime = (base * rat(4 + slack, 4)).max(rat(1, 100));
        let m = moments::reduction_step(&table, &c_prime).unwrap();
        let keep: Vec<&CircleSet> = sets.iter().enumerate().filter(|(i, _)| *i as u64 + 1 != m).map(|(_, s)| s).collect();
        let psi: Rational = keep.iter().map(|s| s.measure()).sum();
        let mut off = Rational::zero();
        for i in 0..keep.len() {
            for j in i + 1..keep.len() {
                off += keep[i].intersect_measure(keep[j]);
            }
        }
        prop_assert!(off <= &c_prime * &psi * &psi);
        // smallest valid index
        for earlier in 1..m {
            let keep: Vec<&CircleSet> = sets.iter().enumerate().filter(|(i, _)| *i as u64 + 1 != earlier).map(|(_, s)| s).collect();
            let psi: Rational = keep.iter().map(|s| s.measure()).sum();
            let mut off = Rational::zero();
            for i in 0..keep.len() {
                for j in i + 1..keep.len() {
                    off += keep[i].intersect_measure(keep[j]);
                }
            }
            prop_assert!(off > &c_prime * &psi * &psi);
        }
    }

    #[test]
    fn totient_and_weighted_totient(q in 1u64..3000, b in 1u64..40, a in 0i64..40) {
        let phi = (1..=q).filter(|k| k.gcd(&q) == 1).count() as u64;
        prop_assert_eq!(numtheory::euler_phi(q).unwrap(), phi);
        if a.unsigned_abs().gcd(&b) == 1 {
            let direct = (0..q as i64).filter(|j| (a + j * b as i64).unsigned_abs().gcd(&q) == 1).count() as u64;
            prop_assert_eq!(numtheory::enumerate_iq(q, a, b).unwrap().len() as u64, direct);
            prop_assert_eq!(numtheory::phi_qb(q, b).unwrap(), direct);
        }
    }

    #[test]
    fn moebius_sums_vanish(q in 2u64..5000) {
        let s: i64 = (1..=q).filter(|d| q % d == 0).map(|d| numtheory::moebius(d).unwrap() as i64).sum();
        prop_assert_eq!(s, 0);
        let t = (1..=q).filter(|d| q % d == 0).count() as u64;
        prop_assert_eq!(numtheory::tau(q).unwrap(), t);
    }

    #[test]
    fn f_function_formula(q in 1u64..400, h in -60i64..60, b in 1u64..12, a in 0i64..12) {
        prop_assume!(a.unsigned_abs().gcd(&b) == 1);
        prop_assert_eq!(numtheory::f_hq(h, q, a, b).unwrap(), numtheory::f_hq_formula(h, q, b).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn montecarlo_is_deterministic_and_precision_stable(seed in any::<u64>(), mode in 0u8..3) {
        let mode = match mode {
            0 => HitMode::AllA,
            1 => HitMode::Coprime,
            _ => HitMode::parse("residue:1,3").unwrap(),
        };
        let gamma = InhomShift::Rational(rat(1, 3));
        let psi = ApproxFn::expr("1/q").unwrap();
        let opts = HitOptions { q_max: 2000, samples: 6, seed, bits: 256, threads: 1, keep_hits: true };
        let one = bclab::montecarlo_hits(&gamma, &psi, mode, &opts).unwrap();
        let again = bclab::montecarlo_hits(&gamma, &psi, mode, &HitOptions { threads: 3, ..opts.clone() }).unwrap();
        prop_assert_eq!(&one, &again);
        let fine = bclab::montecarlo_hits(&gamma, &psi, mode, &HitOptions { bits: 512, ..opts }).unwrap();
        for (x, y) in one.iter().zip(&fine) {
            let sure = |r: &bclab::HitRecord| r.hits.iter().filter(|h| !h.ambiguous).map(|h| (h.q, h.a)).collect::<Vec<_>>();
            prop_assert_eq!(sure(x), sure(y));
        }
    }

    #[test]
    fn sample_prefix_property(seed in any::<u64>(), sample in 0u64..1000) {
        let p256 = FixedPoint::sample(seed, sample, 256).unwrap();
        let p512 = FixedPoint::sample(seed, sample, 512).unwrap();
        prop_assert_eq!(&p512.limbs()[4..], p256.limbs());
        let diff = p512.value() - p256.value();
        prop_assert!(diff >= Rational::zero() && diff < Rational::new(1.into(), num_bigint::BigInt::one() << 256));
    }

    #[test]
    fn dichotomy_containment_holds(seed in any::<u64>(), g2 in 1i64..7) {
        let psi = ApproxFn::expr("1/(2q)").unwrap();
        let opts = HitOptions { q_max: 1500, samples: 4, seed, bits: 256, threads: 1, keep_hits: true };
        let rep = bclab::dichotomy_probe(&rat(1, 3), &rat(g2, 7), &psi, &rat(1, 10_000_000), HitMode::AllA, &opts).unwrap();
        prop_assert_eq!(rep.containment_failures(), 0);
    }
}
