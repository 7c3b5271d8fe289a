use std::collections::BTreeSet;

use plett::proplogic::{normalized_robustness_rec, wc_normalized_robustness_rec, Comparator};
use plett::{parse, Formula, Interval, LinearAtom, StateBox, StateVector};
use proptest::prelude::*;

const STATES: [&str; 3] = ["x1", "x2", "x3"];

fn coefficient() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), -5.0..5.0f64, (-20i32..20).prop_map(f64::from)]
}

fn atom() -> impl Strategy<Value = LinearAtom> {
    (
        prop::collection::vec(coefficient(), 3),
        -3.0..3.0f64,
        any::<bool>(),
        -10.0..10.0f64,
        prop::option::of(0.1..50.0f64),
        prop::collection::btree_set(prop::sample::select(STATES.to_vec()), 0..3),
        0u32..1000,
    )
        .prop_map(|(coefs, offset, gt, threshold, rho_max, signals, id)| LinearAtom {
            label: format!("a{id}"),
            coefficients: STATES.iter().zip(coefs).map(|(s, c)| (s.to_string(), c)).collect(),
            offset,
            comparator: if gt { Comparator::Gt } else { Comparator::Lt },
            threshold,
            rho_max,
            signals: signals.into_iter().map(str::to_owned).collect::<BTreeSet<_>>(),
        })
}

fn with_rho_max(a: LinearAtom) -> LinearAtom {
    let r = a.rho_max.unwrap_or(1.0);
    a.with_rho_max(r)
}

fn formula() -> impl Strategy<Value = Formula> {
    atom().prop_map(Formula::atom).prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(Formula::not),
            (inner.clone(), inner.clone()).prop_map(|(l, r)| Formula::and(l, r)),
            (inner.clone(), inner).prop_map(|(l, r)| Formula::or(l, r)),
        ]
    })
}

fn monitored_formula() -> impl Strategy<Value = Formula> {
    formula().prop_map(|mut f| {
        for a in f.atoms_mut() {
            *a = with_rho_max(a.clone());
        }
        f
    })
}

fn state() -> impl Strategy<Value = StateVector> {
    prop::collection::vec(-10.0..10.0f64, 3)
        .prop_map(|v| STATES.iter().zip(v).map(|(s, x)| (*s, x)).collect())
}

fn boxed(x: &StateVector, radii: &[f64]) -> StateBox {
    x.iter().zip(radii).map(|((k, v), r)| (k, Interval::make(v, *r).unwrap())).collect()
}

proptest! {
    #[test]
    fn print_then_parse_is_identity(f in formula()) {
        let mut f = f.to_nnf();
        for (i, a) in f.atoms_mut().into_iter().enumerate() {
            a.label = format!("a{i}");
        }
        let text = f.to_string();
        let back = parse(&text).unwrap_or_else(|e| panic!("{text}: {e}"));
        prop_assert_eq!(back, f);
    }

    #[test]
    fn nnf_keeps_robustness(f in formula(), x in state()) {
        let nnf = f.to_nnf();
        prop_assert!(nnf.is_nnf());
        prop_assert_eq!(nnf.robustness(&x).unwrap(), f.robustness(&x).unwrap());
    }

    #[test]
    fn normalized_sign_matches_robustness(f in monitored_formula(), x in state()) {
        let rho = f.robustness(&x).unwrap();
        let zeta = normalized_robustness_rec(&f.to_nnf(), &x).unwrap();
        prop_assert!(zeta >= 0.0);
        prop_assert_eq!(zeta > 0.0, rho > 0.0);
    }

    #[test]
    fn interval_contains_sampled_robustness(
        f in formula(), x in state(), radii in prop::collection::vec(0.0..3.0f64, 3),
        u in prop::collection::vec(-1.0..=1.0f64, 3),
    ) {
        let dx = boxed(&x, &radii);
        let r = f.robustness_interval(&dx).unwrap();
        let inner: StateVector = x.iter().zip(radii.iter().zip(&u)).map(|((k, v), (rad, t))| (k, v + rad * t)).collect();
        let rho = f.robustness(&inner).unwrap();
        let t = 1e-9 * (1.0 + rho.abs());
        prop_assert!(r.lo() - t <= rho && rho <= r.hi() + t, "{rho} not in {r}");
    }

    #[test]
    fn widening_never_shrinks_robustness_interval(
        f in formula(), x in state(), radii in prop::collection::vec(0.0..3.0f64, 3), grow in 0.0..2.0f64, which in 0usize..3,
    ) {
        let narrow = f.robustness_interval(&boxed(&x, &radii)).unwrap();
        let mut wider = radii.clone();
        wider[which] += grow;
        let wide = f.robustness_interval(&boxed(&x, &wider)).unwrap();
        prop_assert!(wide.contains_interval(&narrow), "{wide} vs {narrow}");
    }

    #[test]
    fn degenerate_box_collapses(f in monitored_formula(), x in state()) {
        let nnf = f.to_nnf();
        let r = nnf.robustness_interval(&x.to_box()).unwrap();
        prop_assert_eq!(r.lo(), r.hi());
        prop_assert_eq!(
            wc_normalized_robustness_rec(&nnf, &x.to_box()).unwrap(),
            normalized_robustness_rec(&nnf, &x).unwrap()
        );
    }

    #[test]
    fn wc_zero_iff_lower_bound_nonpositive(f in monitored_formula(), x in state(), radii in prop::collection::vec(0.0..3.0f64, 3)) {
        let nnf = f.to_nnf();
        let dx = boxed(&x, &radii);
        let zeta = wc_normalized_robustness_rec(&nnf, &dx).unwrap();
        prop_assert_eq!(zeta == 0.0, nnf.robustness_interval(&dx).unwrap().lo() <= 0.0);
    }
}

#[test]
fn signals_of_case_study_properties() {
    let phi_b = parse(
        "(x_delta - 2*v > 0 @rhomax(60) @signals(v, x_delta)) || \
         (x_lo_f - 2*v_lo_f > 0 @rhomax(60) @signals(x_lo_f) && x_lo_p - 2*v > 0 @rhomax(60) @signals(x_lo_p, v))",
    )
    .unwrap();
    let expected: BTreeSet<String> = ["v", "x_delta", "x_lo_f", "x_lo_p"].map(String::from).into();
    assert_eq!(phi_b.signals(), expected);
    let bare = parse("x1 > 0").unwrap();
    assert!(bare.signals().is_empty());
}
