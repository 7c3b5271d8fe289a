use std::collections::BTreeMap;

use plett::ettreg::{
    refine_arbitrary, refine_pair, rho_ett_atom, theorem1_epsilon, wc_ett_atom, wc_refine_arbitrary, AtomParams,
};
use plett::proplogic::Comparator;
use plett::{Formula, Interval, LinearAtom, SignalParams, StateBox, StateVector, WcGains};
use proptest::prelude::*;

const STATES: [&str; 3] = ["x1", "x2", "x3"];

type Deltas = BTreeMap<String, f64>;

fn atom(label: String) -> impl Strategy<Value = LinearAtom> {
    (
        prop::collection::vec(prop_oneof![-4.0..-0.1f64, 0.1..4.0f64], 3),
        prop::collection::vec(any::<bool>(), 3),
        any::<bool>(),
        -6.0..6.0f64,
        0.5..20.0f64,
    )
        .prop_map(move |(coefs, used, gt, threshold, rho_max)| {
            let mut states: Vec<&str> = STATES.iter().zip(&used).filter(|(_, u)| **u).map(|(s, _)| *s).collect();
            if states.is_empty() {
                states.push("x1");
            }
            LinearAtom {
                label: label.clone(),
                coefficients: states.iter().zip(&coefs).map(|(s, c)| (s.to_string(), *c)).collect(),
                offset: 0.0,
                comparator: if gt { Comparator::Gt } else { Comparator::Lt },
                threshold,
                rho_max: Some(rho_max),
                signals: states.iter().map(|s| s.to_string()).collect(),
            }
        })
}

fn state() -> impl Strategy<Value = StateVector> {
    prop::collection::vec(-6.0..6.0f64, 3).prop_map(|v| STATES.iter().zip(v).map(|(s, x)| (*s, x)).collect())
}

fn eps() -> impl Strategy<Value = SignalParams> {
    prop::collection::vec(0.2..20.0f64, 3).prop_map(|v| SignalParams::shared(STATES.iter().copied().zip(v)))
}

fn fig5_atoms() -> impl Strategy<Value = Vec<LinearAtom>> {
    (1..=6).map(|i| atom(format!("p{i}"))).collect::<Vec<_>>()
}

fn fig5_tree(a: &[LinearAtom]) -> Formula {
    let at = |i: usize| Formula::atom(a[i].clone());
    Formula::or(
        Formula::or(Formula::and(at(0), at(1)), at(2)),
        Formula::and(at(3), Formula::and(at(4), at(5))),
    )
}

fn merge(mut a: Deltas, b: Deltas) -> Deltas {
    for (k, v) in b {
        let e = a.entry(k).or_insert(f64::INFINITY);
        *e = e.min(v);
    }
    a
}

fn rho(a: &LinearAtom, x: &StateVector) -> f64 {
    let p: f64 = a.coefficients.iter().map(|(s, c)| c * x.get(s).unwrap()).sum::<f64>() + a.offset;
    match a.comparator {
        Comparator::Gt => p - a.threshold,
        Comparator::Lt => a.threshold - p,
    }
}

fn rho_lo(a: &LinearAtom, dx: &StateBox) -> f64 {
    let mut lo = a.offset;
    let mut hi = a.offset;
    for (s, c) in &a.coefficients {
        let iv = dx.get(s).unwrap();
        let (u, v) = (c * iv.lo(), c * iv.hi());
        lo += u.min(v);
        hi += u.max(v);
    }
    match a.comparator {
        Comparator::Gt => lo - a.threshold,
        Comparator::Lt => a.threshold - hi,
    }
}

/// Reference recursion over a tree in negation normal form. `score` is the
/// atom's robustness (point or lower bound) and `gain` its per-signal divisor.
struct Oracle<'a> {
    score: &'a dyn Fn(&LinearAtom) -> f64,
    gain: &'a dyn Fn(&LinearAtom, &str) -> f64,
}

impl Oracle<'_> {
    fn zeta(&self, f: &Formula) -> f64 {
        match f {
            Formula::Atom(a) => (self.score)(a).max(0.0) / a.rho_max.unwrap(),
            Formula::And(l, r) => self.zeta(l).min(self.zeta(r)),
            Formula::Or(l, r) => self.zeta(l).max(self.zeta(r)),
            Formula::Not(_) => unreachable!(),
        }
    }

    fn deltas(&self, f: &Formula, beta: f64, lift: bool) -> Deltas {
        match f {
            Formula::Atom(a) => {
                let z = (self.score)(a).max(0.0) / a.rho_max.unwrap();
                let extra = if lift { (beta - z).max(0.0) * a.rho_max.unwrap() } else { 0.0 };
                a.signals
                    .iter()
                    .map(|s| {
                        let g = (self.gain)(a, s);
                        (s.clone(), (self.score)(a).max(0.0) / g + extra / g)
                    })
                    .collect()
            }
            Formula::And(l, r) => merge(self.deltas(l, beta, lift), self.deltas(r, beta, lift)),
            Formula::Or(l, r) => merge(
                self.deltas(l, beta.max(self.zeta(r)), lift),
                self.deltas(r, beta.max(self.zeta(l)), lift),
            ),
            Formula::Not(_) => unreachable!(),
        }
    }

    fn run(&self, f: &Formula, lift: bool) -> Deltas {
        self.deltas(f, self.zeta(f), lift)
    }
}

fn assert_same(got: &plett::EttAssignment, want: &Deltas, tol: f64) -> Result<(), TestCaseError> {
    prop_assert_eq!(got.len(), want.len());
    for (k, v) in want {
        let g = got.get(k);
        prop_assert!((g - v).abs() <= tol * (1.0 + v.abs()), "{k}: {g} vs {v}");
    }
    Ok(())
}

fn radii_box(x: &StateVector, r: &[f64]) -> StateBox {
    x.iter().zip(r).map(|((k, v), rad)| (k, Interval::make(v, *rad).unwrap())).collect()
}

proptest! {
    #[test]
    fn pair_refinement_matches_general(
        a in atom("a".into()), b in atom("b".into()), or in any::<bool>(), x in state(), e in eps(),
    ) {
        let phi = if or { Formula::or(a.into(), b.into()) } else { Formula::and(a.into(), b.into()) };
        let pair = refine_pair(&phi, &x, &e).unwrap();
        let general = refine_arbitrary(&phi, &x, &e).unwrap();
        prop_assert_eq!(pair.len(), general.len());
        for (k, v) in pair.iter() {
            prop_assert!((v - general.get(k)).abs() <= 1e-12);
        }
    }

    #[test]
    fn conjunction_is_per_atom_minimum(a in atom("a".into()), b in atom("b".into()), x in state(), e in eps()) {
        let phi = Formula::and(a.clone().into(), b.clone().into());
        let mut want = rho_ett_atom(&a, &x, &e.for_atom(&a)).unwrap();
        want.merge_min(&rho_ett_atom(&b, &x, &e.for_atom(&b)).unwrap());
        prop_assert_eq!(refine_arbitrary(&phi, &x, &e).unwrap(), want);
    }

    #[test]
    fn fig5_tree_matches_reference(atoms in fig5_atoms(), x in state(), e in eps()) {
        let phi = fig5_tree(&atoms);
        let score = |a: &LinearAtom| rho(a, &x);
        let gain = |_: &LinearAtom, s: &str| e.shared[s];
        let want = Oracle { score: &score, gain: &gain }.run(&phi, true);
        assert_same(&refine_arbitrary(&phi, &x, &e).unwrap(), &want, 1e-12)?;
    }

    #[test]
    fn wc_fig5_tree_matches_reference(
        atoms in fig5_atoms(), x in state(), r in prop::collection::vec(0.0..1.0f64, 3), eps_rho in 1.0..5.0f64,
    ) {
        let phi = fig5_tree(&atoms);
        let dx = radii_box(&x, &r);
        // Uniform split: lambda equals the number of signals of each atom.
        let lambda = atoms.iter().fold(SignalParams::default(), |p, a| {
            let n = a.signals.len() as f64;
            p.with_atom(a.label.clone(), a.signals.iter().map(|s| (s.clone(), n)))
        });
        let gains = WcGains::Theorem1 { lambda, eps_rho: AtomParams::uniform(eps_rho) };
        let score = |a: &LinearAtom| rho_lo(a, &dx);
        let gain = |a: &LinearAtom, s: &str| 2.0 * a.coefficients[s].abs() * a.signals.len() as f64 * eps_rho;
        let want = Oracle { score: &score, gain: &gain }.run(&phi, true);
        assert_same(&wc_refine_arbitrary(&phi, &dx, &gains).unwrap(), &want, 1e-12)?;
    }

    #[test]
    fn width_identity(
        a in atom("a".into()), x in state(), r in prop::collection::vec(0.0..1.0f64, 3),
        weights in prop::collection::vec(0.05..1.0f64, 3), eps_rho in 1.0..10.0f64,
        centers in state(),
    ) {
        let signals: Vec<&String> = a.signals.iter().collect();
        let total: f64 = weights[..signals.len()].iter().sum();
        let lambdas: Deltas = signals.iter().zip(&weights).map(|(s, w)| ((*s).clone(), total / w)).collect();
        let pred = radii_box(&x, &r);
        let lo = rho_lo(&a, &pred);
        let d = wc_ett_atom(&a, &pred, &lambdas, eps_rho).unwrap();
        let next: StateBox = centers.iter().map(|(k, v)| {
            let rad = if a.signals.contains(k) { d.get(k) } else { 0.0 };
            (k, Interval::make(v, rad).unwrap())
        }).collect();
        let w = a.robustness_interval(&next).unwrap().width();
        prop_assert!((w - lo.max(0.0) / eps_rho).abs() <= 1e-9, "{w} vs {}", lo.max(0.0) / eps_rho);
    }

    #[test]
    fn theorem1_gains_formula(a in atom("a".into()), eps_rho in 1.0..10.0f64) {
        let n = a.signals.len() as f64;
        let lambdas: Deltas = a.signals.iter().map(|s| (s.clone(), n)).collect();
        let eps = theorem1_epsilon(&a, &lambdas, eps_rho).unwrap();
        for (s, e) in eps {
            prop_assert!((e - 2.0 * a.coefficients[&s].abs() * n * eps_rho).abs() <= 1e-12 * e);
        }
    }

    #[test]
    fn thresholds_are_nonnegative(atoms in fig5_atoms(), x in state(), e in eps()) {
        for (_, d) in refine_arbitrary(&fig5_tree(&atoms), &x, &e).unwrap().iter() {
            prop_assert!(d >= 0.0);
        }
    }
}

#[test]
fn theorem1_rejects_bad_splits() {
    let a = LinearAtom::new("a", [("x1", 2.0), ("x2", 4.0)], Comparator::Gt, 9.0).with_signals(["x1", "x2"]);
    let split = |l1: f64, l2: f64| -> Deltas { [("x1".into(), l1), ("x2".into(), l2)].into() };
    assert!(theorem1_epsilon(&a, &split(2.0, 3.0), 1.0).is_err());
    assert!(theorem1_epsilon(&a, &split(2.0, 2.0), 0.5).is_err());
    let eps = theorem1_epsilon(&a, &split(4.0 / 3.0, 4.0), 2.0).unwrap();
    assert!((eps["x1"] - 2.0 * 2.0 * (4.0 / 3.0) * 2.0).abs() < 1e-12);
    assert_eq!(eps["x2"], 2.0 * 4.0 * 4.0 * 2.0);
}
