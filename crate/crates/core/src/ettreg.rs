//! Event-trigger threshold policies.
//!
//! A policy maps the current estimate (or a predicted box of states) to a
//! threshold per signal. Thresholds are recomputed every sample and a sensor
//! transmits when its error strictly exceeds its threshold.
//!
//! * `Tt` transmits every sample.
//! * `Cett` uses fixed thresholds.
//! * `RhoEtt` scales thresholds with robustness: `max(rho, 0) / eps`, refined
//!   through `||` so that a well-satisfied branch relaxes a violated one.
//! * `RhoEttWc` uses the lower bound of the predicted robustness interval and
//!   gains that make the interval width equal `max(rho_lo, 0) / eps_rho`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::proplogic::{EvalError, Formula, LinearAtom, StateBox, StateVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EttError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("no epsilon for signal `{signal}` in atom `{atom}`")]
    MissingEpsilon { atom: String, signal: String },
    #[error("epsilon for signal `{signal}` in atom `{atom}` must be positive, got {value}")]
    NonPositiveEpsilon { atom: String, signal: String, value: f64 },
    #[error("no lambda for signal `{signal}` in atom `{atom}`")]
    MissingLambda { atom: String, signal: String },
    #[error("lambdas of atom `{atom}` must be positive with reciprocals summing to 1, got sum {sum}")]
    InvalidLambda { atom: String, sum: f64 },
    #[error("eps_rho of atom `{atom}` must be at least 1, got {value}")]
    EpsRhoBelowOne { atom: String, value: f64 },
    #[error("no eps_rho for atom `{0}`")]
    MissingEpsRho(String),
    #[error("state `{state}` of atom `{atom}` is not measured by a bound signal")]
    Unmeasurable { atom: String, state: String },
    #[error("constant threshold for `{signal}` must be non-negative, got {value}")]
    NegativeDelta { signal: String, value: f64 },
    #[error("cannot combine an empty list of assignments")]
    EmptyCombination,
    #[error("expected a conjunction or disjunction of two atoms")]
    NotAPair,
}

/// Threshold per signal. A signal without an entry has threshold `+inf`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EttAssignment(BTreeMap<String, f64>);

impl EttAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, signal: &str) -> f64 {
        self.0.get(signal).copied().unwrap_or(f64::INFINITY)
    }

    /// Sets `signal` to `delta`. Infinite values remove the entry.
    pub fn set(&mut self, signal: impl Into<String>, delta: f64) {
        let signal = signal.into();
        if delta == f64::INFINITY {
            self.0.remove(&signal);
        } else {
            self.0.insert(signal, delta);
        }
    }

    /// Lowers `signal` to `delta` if that is smaller than its current value.
    pub fn min_assign(&mut self, signal: &str, delta: f64) {
        if delta < self.get(signal) {
            self.0.insert(signal.to_owned(), delta);
        }
    }

    pub fn merge_min(&mut self, other: &EttAssignment) {
        for (signal, delta) in &other.0 {
            self.min_assign(signal, *delta);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<K: Into<String>> FromIterator<(K, f64)> for EttAssignment {
    fn from_iter<I: IntoIterator<Item = (K, f64)>>(iter: I) -> Self {
        let mut out = EttAssignment::new();
        for (k, v) in iter {
            out.set(k, v);
        }
        out
    }
}

/// Per-signal minimum over several assignments.
pub fn combine_min(assignments: &[EttAssignment]) -> Result<EttAssignment, EttError> {
    let (first, rest) = assignments.split_first().ok_or(EttError::EmptyCombination)?;
    let mut out = first.clone();
    for a in rest {
        out.merge_min(a);
    }
    Ok(out)
}

/// A value per signal, optionally overridden per atom label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignalParams {
    #[serde(default)]
    pub shared: BTreeMap<String, f64>,
    #[serde(default)]
    pub per_atom: BTreeMap<String, BTreeMap<String, f64>>,
}

impl SignalParams {
    pub fn shared<K: Into<String>>(values: impl IntoIterator<Item = (K, f64)>) -> Self {
        Self { shared: values.into_iter().map(|(k, v)| (k.into(), v)).collect(), ..Self::default() }
    }

    pub fn with_atom<K: Into<String>>(
        mut self,
        atom: impl Into<String>,
        values: impl IntoIterator<Item = (K, f64)>,
    ) -> Self {
        self.per_atom
            .insert(atom.into(), values.into_iter().map(|(k, v)| (k.into(), v)).collect());
        self
    }

    pub fn lookup(&self, atom: &str, signal: &str) -> Option<f64> {
        self.per_atom
            .get(atom)
            .and_then(|m| m.get(signal))
            .or_else(|| self.shared.get(signal))
            .copied()
    }

    /// The values that apply to `atom`'s bound signals.
    pub fn for_atom(&self, atom: &LinearAtom) -> BTreeMap<String, f64> {
        bound_signals(atom)
            .into_iter()
            .filter_map(|s| self.lookup(&atom.label, &s).map(|v| (s, v)))
            .collect()
    }
}

/// A value per atom label with an optional default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AtomParams {
    #[serde(default)]
    pub default: Option<f64>,
    #[serde(default)]
    pub per_atom: BTreeMap<String, f64>,
}

impl AtomParams {
    pub fn uniform(value: f64) -> Self {
        Self { default: Some(value), per_atom: BTreeMap::new() }
    }

    pub fn lookup(&self, atom: &str) -> Option<f64> {
        self.per_atom.get(atom).copied().or(self.default)
    }
}

/// Gains for the worst-case policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WcGains {
    /// `eps = 2 |alpha| lambda eps_rho` per signal.
    Theorem1 { lambda: SignalParams, eps_rho: AtomParams },
    /// Per-signal gains given directly.
    Direct { eps: SignalParams },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyConfig {
    Tt,
    Cett { delta: BTreeMap<String, f64> },
    RhoEtt { eps: SignalParams },
    RhoEttWc { gains: WcGains },
}

impl PolicyConfig {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyConfig::Tt => "tt",
            PolicyConfig::Cett { .. } => "cett",
            PolicyConfig::RhoEtt { .. } => "rho_ett",
            PolicyConfig::RhoEttWc { .. } => "rho_ett_wc",
        }
    }

    /// Whether every sample is transmitted regardless of thresholds.
    pub fn is_time_triggered(&self) -> bool {
        matches!(self, PolicyConfig::Tt)
    }

    /// Whether thresholds depend on a predicted state box rather than the
    /// point estimate.
    pub fn uses_state_box(&self) -> bool {
        matches!(self, PolicyConfig::RhoEttWc { .. })
    }

    /// Checks the configuration against the atoms of `phi`.
    pub fn validate(&self, phi: &Formula) -> Result<(), EttError> {
        match self {
            PolicyConfig::Tt => Ok(()),
            PolicyConfig::Cett { delta } => cett(delta).map(|_| ()),
            PolicyConfig::RhoEtt { eps } => {
                for atom in phi.atoms() {
                    check_eps(atom, &eps.for_atom(atom))?;
                }
                Ok(())
            }
            PolicyConfig::RhoEttWc { gains } => {
                for atom in phi.atoms() {
                    wc_epsilon(atom, gains)?;
                }
                Ok(())
            }
        }
    }

    /// Thresholds for the next sample.
    ///
    /// `x` is the current estimate and `dx` the predicted box used by the
    /// worst-case policy. Time-triggered returns zero for every signal of
    /// `phi`; the caller is expected to transmit unconditionally.
    pub fn thresholds(
        &self,
        phi: &Formula,
        x: &StateVector,
        dx: &StateBox,
    ) -> Result<EttAssignment, EttError> {
        match self {
            PolicyConfig::Tt => Ok(phi.signals().into_iter().map(|s| (s, 0.0)).collect()),
            PolicyConfig::Cett { delta } => cett(delta),
            PolicyConfig::RhoEtt { eps } => refine_arbitrary(phi, x, eps),
            PolicyConfig::RhoEttWc { gains } => wc_refine_arbitrary(phi, dx, gains),
        }
    }
}

/// Signals that influence `atom`: its explicit bindings, or every state with
/// a nonzero coefficient when none are declared.
pub fn bound_signals(atom: &LinearAtom) -> BTreeSet<String> {
    if atom.signals.is_empty() {
        atom.coefficients.iter().filter(|(_, a)| **a != 0.0).map(|(s, _)| s.clone()).collect()
    } else {
        atom.signals.clone()
    }
}

fn check_eps(atom: &LinearAtom, eps: &BTreeMap<String, f64>) -> Result<(), EttError> {
    for signal in bound_signals(atom) {
        match eps.get(&signal) {
            None => {
                return Err(EttError::MissingEpsilon { atom: atom.label.clone(), signal })
            }
            Some(&value) if !(value > 0.0) => {
                return Err(EttError::NonPositiveEpsilon {
                    atom: atom.label.clone(),
                    signal,
                    value,
                })
            }
            _ => {}
        }
    }
    Ok(())
}

/// `max(rho, 0) / eps` for each bound signal.
pub fn rho_ett_atom(
    atom: &LinearAtom,
    x: &StateVector,
    eps: &BTreeMap<String, f64>,
) -> Result<EttAssignment, EttError> {
    check_eps(atom, eps)?;
    let rho = atom.robustness(x)?.max(0.0);
    Ok(bound_signals(atom).into_iter().map(|s| {
        let e = eps[&s];
        (s, rho / e)
    }).collect())
}

/// `rho_ett_atom` plus `max(beta - zeta, 0) * rho_max / eps`.
pub fn delta_in(
    atom: &LinearAtom,
    x: &StateVector,
    eps: &BTreeMap<String, f64>,
    beta: f64,
) -> Result<EttAssignment, EttError> {
    let base = rho_ett_atom(atom, x, eps)?;
    let lift = (beta - atom.normalized_robustness(x)?).max(0.0);
    if lift == 0.0 {
        return Ok(base);
    }
    let rho_max = atom.rho_max()?;
    Ok(base.iter().map(|(s, d)| (s.to_owned(), d + lift * rho_max / eps[s])).collect())
}

/// Refinement of a conjunction or disjunction of exactly two atoms.
pub fn refine_pair(
    phi: &Formula,
    x: &StateVector,
    eps: &SignalParams,
) -> Result<EttAssignment, EttError> {
    let (l, r, disjunction) = match phi {
        Formula::Or(l, r) => (l, r, true),
        Formula::And(l, r) => (l, r, false),
        _ => return Err(EttError::NotAPair),
    };
    let (Formula::Atom(a), Formula::Atom(b)) = (l.as_ref(), r.as_ref()) else {
        return Err(EttError::NotAPair);
    };
    let mut out = if disjunction {
        let beta = a.normalized_robustness(x)?.max(b.normalized_robustness(x)?);
        delta_in(a, x, &eps.for_atom(a), beta)?
    } else {
        rho_ett_atom(a, x, &eps.for_atom(a))?
    };
    let second = if disjunction {
        let beta = a.normalized_robustness(x)?.max(b.normalized_robustness(x)?);
        delta_in(b, x, &eps.for_atom(b), beta)?
    } else {
        rho_ett_atom(b, x, &eps.for_atom(b))?
    };
    out.merge_min(&second);
    Ok(out)
}

/// Walks `phi` propagating `beta`: `&&` passes it through, `||` raises it to
/// the sibling's normalized robustness. Each atom contributes `leaf(atom,
/// beta)` and the results are combined with a per-signal minimum.
fn propagate<Z, L>(
    phi: &Formula,
    beta: f64,
    zeta: &Z,
    leaf: &L,
    out: &mut EttAssignment,
) -> Result<(), EttError>
where
    Z: Fn(&Formula) -> Result<f64, EttError>,
    L: Fn(&LinearAtom, f64) -> Result<EttAssignment, EttError>,
{
    match phi {
        Formula::Atom(a) => {
            out.merge_min(&leaf(a, beta)?);
            Ok(())
        }
        Formula::Not(_) => Err(EvalError::NotNegationNormal.into()),
        Formula::And(l, r) => {
            propagate(l, beta, zeta, leaf, out)?;
            propagate(r, beta, zeta, leaf, out)
        }
        Formula::Or(l, r) => {
            propagate(l, beta.max(zeta(r)?), zeta, leaf, out)?;
            propagate(r, beta.max(zeta(l)?), zeta, leaf, out)
        }
    }
}

fn has_disjunction(phi: &Formula) -> bool {
    match phi {
        Formula::Atom(_) => false,
        Formula::Not(f) => has_disjunction(f),
        Formula::And(l, r) => has_disjunction(l) || has_disjunction(r),
        Formula::Or(..) => true,
    }
}

/// Refinement of an arbitrary formula in negation normal form.
///
/// Without `||` the lift term is always zero, so `rho_max` is only required
/// when the formula contains a disjunction.
pub fn refine_arbitrary(
    phi: &Formula,
    x: &StateVector,
    eps: &SignalParams,
) -> Result<EttAssignment, EttError> {
    let mut out = EttAssignment::new();
    if !has_disjunction(phi) {
        propagate(phi, 0.0, &|_| Ok(0.0), &|a, _| rho_ett_atom(a, x, &eps.for_atom(a)), &mut out)?;
        return Ok(out);
    }
    let zeta = |f: &Formula| f.normalized_robustness(x).map_err(EttError::from);
    let beta = zeta(phi)?;
    propagate(phi, beta, &zeta, &|a, b| delta_in(a, x, &eps.for_atom(a), b), &mut out)?;
    Ok(out)
}

/// Bound signals of `atom` that have a nonzero coefficient.
fn relevant_signals(atom: &LinearAtom) -> Result<BTreeSet<String>, EttError> {
    let bound = bound_signals(atom);
    let mut out = BTreeSet::new();
    for (state, alpha) in &atom.coefficients {
        if *alpha == 0.0 {
            continue;
        }
        if !bound.contains(state) {
            return Err(EttError::Unmeasurable { atom: atom.label.clone(), state: state.clone() });
        }
        out.insert(state.clone());
    }
    Ok(out)
}

/// `eps = 2 |alpha| lambda eps_rho` for each relevant signal, after checking
/// that the reciprocals of `lambdas` sum to one and `eps_rho >= 1`.
pub fn theorem1_epsilon(
    atom: &LinearAtom,
    lambdas: &BTreeMap<String, f64>,
    eps_rho: f64,
) -> Result<BTreeMap<String, f64>, EttError> {
    if !(eps_rho >= 1.0) {
        return Err(EttError::EpsRhoBelowOne { atom: atom.label.clone(), value: eps_rho });
    }
    let signals = relevant_signals(atom)?;
    let mut sum = 0.0;
    let mut out = BTreeMap::new();
    for s in signals {
        let lambda = *lambdas.get(&s).ok_or_else(|| EttError::MissingLambda {
            atom: atom.label.clone(),
            signal: s.clone(),
        })?;
        if !(lambda > 0.0) {
            return Err(EttError::InvalidLambda { atom: atom.label.clone(), sum: f64::NAN });
        }
        sum += 1.0 / lambda;
        out.insert(s.clone(), 2.0 * atom.coefficient(&s).abs() * lambda * eps_rho);
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(EttError::InvalidLambda { atom: atom.label.clone(), sum });
    }
    Ok(out)
}

/// `lambda = dim` for every relevant signal.
pub fn uniform_lambdas(atom: &LinearAtom) -> Result<BTreeMap<String, f64>, EttError> {
    let signals = relevant_signals(atom)?;
    let n = signals.len() as f64;
    Ok(signals.into_iter().map(|s| (s, n)).collect())
}

fn wc_epsilon(atom: &LinearAtom, gains: &WcGains) -> Result<BTreeMap<String, f64>, EttError> {
    match gains {
        WcGains::Theorem1 { lambda, eps_rho } => {
            let eps_rho =
                eps_rho.lookup(&atom.label).ok_or_else(|| EttError::MissingEpsRho(atom.label.clone()))?;
            theorem1_epsilon(atom, &lambda.for_atom(atom), eps_rho)
        }
        WcGains::Direct { eps } => {
            let eps = eps.for_atom(atom);
            for s in relevant_signals(atom)? {
                match eps.get(&s) {
                    None => {
                        return Err(EttError::MissingEpsilon { atom: atom.label.clone(), signal: s })
                    }
                    Some(&value) if !(value > 0.0) => {
                        return Err(EttError::NonPositiveEpsilon {
                            atom: atom.label.clone(),
                            signal: s,
                            value,
                        })
                    }
                    _ => {}
                }
            }
            let relevant = relevant_signals(atom)?;
            Ok(eps.into_iter().filter(|(s, _)| relevant.contains(s)).collect())
        }
    }
}

/// `max(rho_lo, 0) / eps` per signal, where `rho_lo` is the lower bound of
/// the robustness interval over `dx`.
pub fn wc_ett_atom_with_eps(
    atom: &LinearAtom,
    dx: &StateBox,
    eps: &BTreeMap<String, f64>,
) -> Result<EttAssignment, EttError> {
    let rho_lo = atom.robustness_interval(dx)?.lo().max(0.0);
    Ok(eps.iter().map(|(s, e)| (s.clone(), rho_lo / e)).collect())
}

/// Worst-case threshold with gains from [`theorem1_epsilon`].
///
/// Using the result as the next-step radii makes the robustness interval
/// width exactly `max(rho_lo, 0) / eps_rho`.
pub fn wc_ett_atom(
    atom: &LinearAtom,
    dx: &StateBox,
    lambdas: &BTreeMap<String, f64>,
    eps_rho: f64,
) -> Result<EttAssignment, EttError> {
    wc_ett_atom_with_eps(atom, dx, &theorem1_epsilon(atom, lambdas, eps_rho)?)
}

/// Worst-case refinement of an arbitrary formula in negation normal form.
pub fn wc_refine_arbitrary(
    phi: &Formula,
    dx: &StateBox,
    gains: &WcGains,
) -> Result<EttAssignment, EttError> {
    let leaf = |a: &LinearAtom, beta: f64| -> Result<EttAssignment, EttError> {
        let eps = wc_epsilon(a, gains)?;
        let base = wc_ett_atom_with_eps(a, dx, &eps)?;
        if !has_disjunction(phi) {
            return Ok(base);
        }
        let lift = (beta - a.wc_normalized_robustness(dx)?).max(0.0);
        if lift == 0.0 {
            return Ok(base);
        }
        let rho_max = a.rho_max()?;
        Ok(base.iter().map(|(s, d)| (s.to_owned(), d + lift * rho_max / eps[s])).collect())
    };
    let mut out = EttAssignment::new();
    if !has_disjunction(phi) {
        propagate(phi, 0.0, &|_| Ok(0.0), &leaf, &mut out)?;
        return Ok(out);
    }
    let zeta = |f: &Formula| f.wc_normalized_robustness(dx).map_err(EttError::from);
    let beta = zeta(phi)?;
    propagate(phi, beta, &zeta, &leaf, &mut out)?;
    Ok(out)
}

/// Constant thresholds after validation.
pub fn cett(delta: &BTreeMap<String, f64>) -> Result<EttAssignment, EttError> {
    for (signal, value) in delta {
        if !(*value >= 0.0) {
            return Err(EttError::NegativeDelta { signal: signal.clone(), value: *value });
        }
    }
    Ok(delta.iter().map(|(k, v)| (k.clone(), *v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::Interval;
    use crate::proplogic::{parse, Comparator};

    fn sv(pairs: &[(&str, f64)]) -> StateVector {
        pairs.iter().map(|(k, v)| (*k, *v)).collect()
    }

    fn eps(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn ex2() -> LinearAtom {
        LinearAtom::new("p", [("x1", 2.0), ("x2", 4.0)], Comparator::Gt, 9.0)
            .with_signals(["x1", "x2"])
    }

    fn ex3() -> Formula {
        parse("x1 < 1 @rhomax(1) @signals(x1) || x2 > 1000 @rhomax(2000) @signals(x2)").unwrap()
    }

    #[test]
    fn example2_thresholds() {
        let d = rho_ett_atom(&ex2(), &sv(&[("x1", 3.0), ("x2", 1.0)]), &eps(&[("x1", 3.0), ("x2", 3.0)]))
            .unwrap();
        assert!((d.get("x1") - 1.0 / 3.0).abs() < 1e-15);
        assert!((d.get("x2") - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.get("other"), f64::INFINITY);
    }

    #[test]
    fn example3_atoms_and_pair() {
        let phi = ex3();
        let x = sv(&[("x1", 1.2), ("x2", 1500.0)]);
        let e = SignalParams::shared([("x1", 5.0), ("x2", 5.0)]);
        let atoms = phi.atoms();
        assert_eq!(rho_ett_atom(atoms[0], &x, &e.for_atom(atoms[0])).unwrap().get("x1"), 0.0);
        assert_eq!(rho_ett_atom(atoms[1], &x, &e.for_atom(atoms[1])).unwrap().get("x2"), 100.0);

        let pair = refine_pair(&phi, &x, &e).unwrap();
        assert!((pair.get("x1") - 0.05).abs() < 1e-15);
        assert_eq!(pair.get("x2"), 100.0);
        assert_eq!(refine_arbitrary(&phi, &x, &e).unwrap(), pair);
    }

    #[test]
    fn conjunction_pair_is_plain_min() {
        let phi = parse("x > 1 @rhomax(5) @signals(x, y) && y > 2 @rhomax(5) @signals(y)").unwrap();
        let x = sv(&[("x", 3.0), ("y", 2.5)]);
        let e = SignalParams::shared([("x", 2.0), ("y", 1.0)]);
        let d = refine_pair(&phi, &x, &e).unwrap();
        assert_eq!(d.get("x"), 1.0);
        assert_eq!(d.get("y"), 0.5);
    }

    #[test]
    fn equal_zeta_adds_nothing() {
        let phi = parse("x > 0 @rhomax(4) || y > 0 @rhomax(4)").unwrap();
        let x = sv(&[("x", 2.0), ("y", 2.0)]);
        let e = SignalParams::shared([("x", 1.0), ("y", 1.0)]);
        let d = refine_pair(&phi, &x, &e).unwrap();
        assert_eq!((d.get("x"), d.get("y")), (2.0, 2.0));
    }

    #[test]
    fn pair_shape_checked() {
        let phi = parse("x > 0 && (y > 0 || z > 0)").unwrap();
        assert_eq!(
            refine_pair(&phi, &StateVector::new(), &SignalParams::default()),
            Err(EttError::NotAPair)
        );
    }

    #[test]
    fn missing_and_bad_epsilon() {
        let x = sv(&[("x1", 3.0), ("x2", 1.0)]);
        assert!(matches!(
            rho_ett_atom(&ex2(), &x, &eps(&[("x1", 3.0)])),
            Err(EttError::MissingEpsilon { .. })
        ));
        assert!(matches!(
            rho_ett_atom(&ex2(), &x, &eps(&[("x1", 3.0), ("x2", 0.0)])),
            Err(EttError::NonPositiveEpsilon { .. })
        ));
    }

    #[test]
    fn theorem1_examples() {
        let l = eps(&[("x1", 2.0), ("x2", 2.0)]);
        assert_eq!(theorem1_epsilon(&ex2(), &l, 1.0).unwrap(), eps(&[("x1", 8.0), ("x2", 16.0)]));
        let l = eps(&[("x1", 4.0 / 3.0), ("x2", 4.0)]);
        let e = theorem1_epsilon(&ex2(), &l, 2.0).unwrap();
        assert!((e["x1"] - 2.0 * 2.0 * (4.0 / 3.0) * 2.0).abs() < 1e-12);
        assert!((e["x2"] - 2.0 * 4.0 * 4.0 * 2.0).abs() < 1e-12);

        let single = LinearAtom::new("s", [("v", -3.0)], Comparator::Lt, 1.0);
        assert_eq!(theorem1_epsilon(&single, &eps(&[("v", 1.0)]), 1.5).unwrap()["v"], 9.0);
        assert!(matches!(
            theorem1_epsilon(&single, &eps(&[("v", 2.0)]), 1.0),
            Err(EttError::InvalidLambda { .. })
        ));
        assert!(matches!(
            theorem1_epsilon(&single, &eps(&[("v", 1.0)]), 0.5),
            Err(EttError::EpsRhoBelowOne { .. })
        ));
        let partial = ex2().with_signals(["x1"]);
        assert!(matches!(
            theorem1_epsilon(&partial, &eps(&[("x1", 1.0)]), 1.0),
            Err(EttError::Unmeasurable { .. })
        ));
    }

    #[test]
    fn wc_atom_and_width_identity() {
        let dx: StateBox = [("x1", Interval::point(3.0)), ("x2", Interval::point(1.0))]
            .into_iter()
            .collect();
        let l = eps(&[("x1", 2.0), ("x2", 2.0)]);
        let d = wc_ett_atom(&ex2(), &dx, &l, 1.0).unwrap();
        assert_eq!(d.get("x1"), 1.0 / 8.0);
        assert_eq!(d.get("x2"), 1.0 / 16.0);

        let next: StateBox = [
            ("x1", Interval::make(3.0, d.get("x1")).unwrap()),
            ("x2", Interval::make(1.0, d.get("x2")).unwrap()),
        ]
        .into_iter()
        .collect();
        assert!((ex2().robustness_interval(&next).unwrap().width() - 1.0).abs() < 1e-12);

        let violated: StateBox = [("x1", Interval::point(0.0)), ("x2", Interval::point(0.0))]
            .into_iter()
            .collect();
        let d = wc_ett_atom(&ex2(), &violated, &l, 1.0).unwrap();
        assert_eq!((d.get("x1"), d.get("x2")), (0.0, 0.0));
    }

    #[test]
    fn wc_single_atom_matches_refinement() {
        let atom = ex2().with_rho_max(20.0);
        let phi = Formula::Atom(atom.clone());
        let dx: StateBox = [("x1", Interval::new(2.5, 3.5).unwrap()), ("x2", Interval::point(1.5))]
            .into_iter()
            .collect();
        let gains = WcGains::Theorem1 {
            lambda: SignalParams::shared([("x1", 2.0), ("x2", 2.0)]),
            eps_rho: AtomParams::uniform(1.5),
        };
        assert_eq!(
            wc_refine_arbitrary(&phi, &dx, &gains).unwrap(),
            wc_ett_atom(&atom, &dx, &eps(&[("x1", 2.0), ("x2", 2.0)]), 1.5).unwrap()
        );
    }

    #[test]
    fn wc_violated_branch_receives_no_lift() {
        let phi = parse("x > 5 @rhomax(10) @signals(x) || y > 5 @rhomax(10) @signals(y)").unwrap();
        let dx: StateBox = [("x", Interval::new(0.0, 1.0).unwrap()), ("y", Interval::new(1.0, 2.0).unwrap())]
            .into_iter()
            .collect();
        let gains = WcGains::Direct { eps: SignalParams::shared([("x", 2.0), ("y", 2.0)]) };
        let d = wc_refine_arbitrary(&phi, &dx, &gains).unwrap();
        assert_eq!((d.get("x"), d.get("y")), (0.0, 0.0));
    }

    #[test]
    fn combine_min_examples() {
        let a: EttAssignment = [("x", 0.5)].into_iter().collect();
        let b: EttAssignment = [("x", 0.3)].into_iter().collect();
        let inf: EttAssignment = [("x", f64::INFINITY)].into_iter().collect();
        assert_eq!(combine_min(&[a.clone(), b.clone()]).unwrap().get("x"), 0.3);
        assert_eq!(combine_min(&[inf.clone(), b]).unwrap().get("x"), 0.3);
        assert_eq!(combine_min(&[inf.clone(), inf]).unwrap().get("x"), f64::INFINITY);
        assert_eq!(combine_min(&[]), Err(EttError::EmptyCombination));
    }

    #[test]
    fn cett_examples() {
        let d = cett(&eps(&[("v", 0.16), ("x_delta", 0.5)])).unwrap();
        assert_eq!((d.get("v"), d.get("x_delta")), (0.16, 0.5));
        assert!(matches!(cett(&eps(&[("v", -0.1)])), Err(EttError::NegativeDelta { .. })));
    }

    #[test]
    fn policy_serde_round_trip() {
        let policies = vec![
            PolicyConfig::Tt,
            PolicyConfig::Cett { delta: eps(&[("v", 0.16)]) },
            PolicyConfig::RhoEtt {
                eps: SignalParams::shared([("v", 16.64)]).with_atom("b2", [("x_lo_f", 4.03)]),
            },
            PolicyConfig::RhoEttWc {
                gains: WcGains::Theorem1 {
                    lambda: SignalParams::shared([("v", 2.0)]),
                    eps_rho: AtomParams::uniform(1.0),
                },
            },
        ];
        for p in policies {
            let text = serde_json::to_string(&p).unwrap();
            assert_eq!(serde_json::from_str::<PolicyConfig>(&text).unwrap(), p);
        }
        let p: PolicyConfig = serde_json::from_str(
            r#"{"kind":"rho_ett_wc","gains":{"mode":"direct","eps":{"shared":{"v":13.38}}}}"#,
        )
        .unwrap();
        assert_eq!(p.name(), "rho_ett_wc");
    }

    #[test]
    fn per_atom_lookup_overrides_shared() {
        let p = SignalParams::shared([("x", 1.0)]).with_atom("a", [("x", 2.0)]);
        assert_eq!(p.lookup("a", "x"), Some(2.0));
        assert_eq!(p.lookup("b", "x"), Some(1.0));
        assert_eq!(p.lookup("b", "y"), None);
    }
}
