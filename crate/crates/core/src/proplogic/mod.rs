//! Propositional properties over affine inequality atoms and their
//! quantitative semantics.
//!
//! A property is a tree of [`LinearAtom`]s joined by `&&` and `||`. Negation
//! is accepted by the parser but pushed into the atoms (flipping `>` and `<`),
//! so every formula produced by [`parse`] is in negation normal form.
//!
//! Four evaluators are provided:
//!
//! * [`Formula::robustness`] on a point state,
//! * [`Formula::robustness_interval`] on a box of states,
//! * [`Formula::normalized_robustness`], the clamped robustness divided by
//!   each atom's declared maximum and combined with min/max,
//! * [`Formula::wc_normalized_robustness`], the same on the lower bound of
//!   the robustness interval.

mod parser;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::Interval;

pub use parser::{parse, parse_with, ParseError, ParseOptions};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("state `{0}` is not present")]
    MissingState(String),
    #[error("atom `{0}` has no rho_max declaration")]
    MissingRhoMax(String),
    #[error("formula is not in negation normal form")]
    NotNegationNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    Gt,
    Lt,
}

impl Comparator {
    pub fn flip(self) -> Self {
        match self {
            Comparator::Gt => Comparator::Lt,
            Comparator::Lt => Comparator::Gt,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparator::Gt => ">",
            Comparator::Lt => "<",
        }
    }
}

/// Point values of named states.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(BTreeMap<String, f64>);

impl StateVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<f64, EvalError> {
        self.0.get(name).copied().ok_or_else(|| EvalError::MissingState(name.to_owned()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Degenerate box at this point.
    pub fn to_box(&self) -> StateBox {
        self.iter().map(|(k, v)| (k, Interval::point(v))).collect()
    }
}

impl<K: Into<String>> FromIterator<(K, f64)> for StateVector {
    fn from_iter<I: IntoIterator<Item = (K, f64)>>(iter: I) -> Self {
        Self(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

/// Interval values of named states.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateBox(BTreeMap<String, Interval>);

impl StateBox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Interval) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<Interval, EvalError> {
        self.0.get(name).copied().ok_or_else(|| EvalError::MissingState(name.to_owned()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Interval)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn centers(&self) -> StateVector {
        self.iter().map(|(k, v)| (k, v.mid())).collect()
    }
}

impl<K: Into<String>> FromIterator<(K, Interval)> for StateBox {
    fn from_iter<I: IntoIterator<Item = (K, Interval)>>(iter: I) -> Self {
        Self(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

/// `sum(alpha_i * x_i) + offset  (>|<)  threshold`.
///
/// A signal listed in `signals` is assumed to measure the state of the same
/// name when that state appears in the atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearAtom {
    pub label: String,
    pub coefficients: BTreeMap<String, f64>,
    #[serde(default)]
    pub offset: f64,
    pub comparator: Comparator,
    pub threshold: f64,
    #[serde(default)]
    pub rho_max: Option<f64>,
    #[serde(default)]
    pub signals: BTreeSet<String>,
}

impl LinearAtom {
    pub fn new(
        label: impl Into<String>,
        coefficients: impl IntoIterator<Item = (&'static str, f64)>,
        comparator: Comparator,
        threshold: f64,
    ) -> Self {
        Self {
            label: label.into(),
            coefficients: coefficients.into_iter().map(|(k, v)| (k.to_owned(), v)).collect(),
            offset: 0.0,
            comparator,
            threshold,
            rho_max: None,
            signals: BTreeSet::new(),
        }
    }

    pub fn with_rho_max(mut self, rho_max: f64) -> Self {
        self.rho_max = Some(rho_max);
        self
    }

    pub fn with_signals<S: Into<String>>(mut self, signals: impl IntoIterator<Item = S>) -> Self {
        self.signals = signals.into_iter().map(Into::into).collect();
        self
    }

    pub fn coefficient(&self, state: &str) -> f64 {
        self.coefficients.get(state).copied().unwrap_or(0.0)
    }

    pub fn rho_max(&self) -> Result<f64, EvalError> {
        self.rho_max.ok_or_else(|| EvalError::MissingRhoMax(self.label.clone()))
    }

    /// The logical negation: same affine form, flipped comparator.
    pub fn negated(&self) -> Self {
        Self { comparator: self.comparator.flip(), ..self.clone() }
    }

    pub fn affine(&self, x: &StateVector) -> Result<f64, EvalError> {
        self.coefficients
            .iter()
            .try_fold(self.offset, |acc, (name, alpha)| Ok(acc + alpha * x.get(name)?))
    }

    pub fn affine_interval(&self, dx: &StateBox) -> Result<Interval, EvalError> {
        self.coefficients.iter().try_fold(Interval::point(self.offset), |acc, (name, alpha)| {
            Ok(acc + dx.get(name)?.scale(*alpha))
        })
    }

    pub fn robustness(&self, x: &StateVector) -> Result<f64, EvalError> {
        let p = self.affine(x)?;
        Ok(match self.comparator {
            Comparator::Gt => p - self.threshold,
            Comparator::Lt => self.threshold - p,
        })
    }

    pub fn robustness_interval(&self, dx: &StateBox) -> Result<Interval, EvalError> {
        let p = self.affine_interval(dx)?;
        Ok(match self.comparator {
            Comparator::Gt => p - self.threshold,
            Comparator::Lt => Interval::point(self.threshold) - p,
        })
    }

    /// `max(rho, 0) / rho_max`. Not clamped above.
    pub fn normalized_robustness(&self, x: &StateVector) -> Result<f64, EvalError> {
        let rho_max = self.rho_max()?;
        Ok(self.robustness(x)?.max(0.0) / rho_max)
    }

    /// `max(lower robustness bound, 0) / rho_max`.
    pub fn wc_normalized_robustness(&self, dx: &StateBox) -> Result<f64, EvalError> {
        let rho_max = self.rho_max()?;
        Ok(self.robustness_interval(dx)?.lo().max(0.0) / rho_max)
    }
}

impl fmt::Display for LinearAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (name, alpha) in &self.coefficients {
            write_term(f, first, *alpha, Some(name))?;
            first = false;
        }
        if first || self.offset != 0.0 {
            write_term(f, first, self.offset, None)?;
        }
        write!(f, " {} {}", self.comparator.symbol(), self.threshold)?;
        write!(f, " @label({})", self.label)?;
        if let Some(r) = self.rho_max {
            write!(f, " @rhomax({r})")?;
        }
        if !self.signals.is_empty() {
            let list: Vec<&str> = self.signals.iter().map(String::as_str).collect();
            write!(f, " @signals({})", list.join(", "))?;
        }
        Ok(())
    }
}

fn write_term(f: &mut fmt::Formatter<'_>, first: bool, value: f64, name: Option<&str>) -> fmt::Result {
    let negative = value.is_sign_negative() && value != 0.0;
    match (first, negative) {
        (true, true) => f.write_str("-")?,
        (true, false) => {}
        (false, true) => f.write_str(" - ")?,
        (false, false) => f.write_str(" + ")?,
    }
    let magnitude = value.abs();
    match name {
        Some(n) => write!(f, "{magnitude}*{n}"),
        None => write!(f, "{magnitude}"),
    }
}

/// Propositional formula over linear atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formula {
    Atom(LinearAtom),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn atom(a: LinearAtom) -> Self {
        Formula::Atom(a)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(l: Formula, r: Formula) -> Self {
        Formula::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: Formula, r: Formula) -> Self {
        Formula::Or(Box::new(l), Box::new(r))
    }

    /// Pushes every negation into the atoms.
    pub fn to_nnf(&self) -> Formula {
        self.nnf(false)
    }

    fn nnf(&self, negate: bool) -> Formula {
        match (self, negate) {
            (Formula::Atom(a), false) => Formula::Atom(a.clone()),
            (Formula::Atom(a), true) => Formula::Atom(a.negated()),
            (Formula::Not(inner), _) => inner.nnf(!negate),
            (Formula::And(l, r), false) => Formula::and(l.nnf(false), r.nnf(false)),
            (Formula::And(l, r), true) => Formula::or(l.nnf(true), r.nnf(true)),
            (Formula::Or(l, r), false) => Formula::or(l.nnf(false), r.nnf(false)),
            (Formula::Or(l, r), true) => Formula::and(l.nnf(true), r.nnf(true)),
        }
    }

    pub fn is_nnf(&self) -> bool {
        match self {
            Formula::Atom(_) => true,
            Formula::Not(_) => false,
            Formula::And(l, r) | Formula::Or(l, r) => l.is_nnf() && r.is_nnf(),
        }
    }

    /// Atoms in left-to-right order.
    pub fn atoms(&self) -> Vec<&LinearAtom> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a LinearAtom>) {
        match self {
            Formula::Atom(a) => out.push(a),
            Formula::Not(inner) => inner.collect_atoms(out),
            Formula::And(l, r) | Formula::Or(l, r) => {
                l.collect_atoms(out);
                r.collect_atoms(out);
            }
        }
    }

    pub fn atoms_mut(&mut self) -> Vec<&mut LinearAtom> {
        let mut out = Vec::new();
        self.collect_atoms_mut(&mut out);
        out
    }

    fn collect_atoms_mut<'a>(&'a mut self, out: &mut Vec<&'a mut LinearAtom>) {
        match self {
            Formula::Atom(a) => out.push(a),
            Formula::Not(inner) => inner.collect_atoms_mut(out),
            Formula::And(l, r) | Formula::Or(l, r) => {
                l.collect_atoms_mut(out);
                r.collect_atoms_mut(out);
            }
        }
    }

    /// Every state name referenced by an atom.
    pub fn states(&self) -> BTreeSet<String> {
        self.atoms().into_iter().flat_map(|a| a.coefficients.keys().cloned()).collect()
    }

    /// Union of the atoms' signal bindings.
    pub fn signals(&self) -> BTreeSet<String> {
        self.atoms().into_iter().flat_map(|a| a.signals.iter().cloned()).collect()
    }

    /// Replaces every `||` with `&&`.
    pub fn without_disjunction(&self) -> Formula {
        match self {
            Formula::Atom(a) => Formula::Atom(a.clone()),
            Formula::Not(inner) => Formula::not(inner.without_disjunction()),
            Formula::And(l, r) | Formula::Or(l, r) => {
                Formula::and(l.without_disjunction(), r.without_disjunction())
            }
        }
    }

    pub fn robustness(&self, x: &StateVector) -> Result<f64, EvalError> {
        match self {
            Formula::Atom(a) => a.robustness(x),
            Formula::Not(inner) => Ok(-inner.robustness(x)?),
            Formula::And(l, r) => Ok(l.robustness(x)?.min(r.robustness(x)?)),
            Formula::Or(l, r) => Ok(l.robustness(x)?.max(r.robustness(x)?)),
        }
    }

    /// Interval image of the robustness over the box `dx`.
    ///
    /// `min`/`max` are monotone, so combining child intervals bound-wise is
    /// exact given exact child intervals.
    pub fn robustness_interval(&self, dx: &StateBox) -> Result<Interval, EvalError> {
        match self {
            Formula::Atom(a) => a.robustness_interval(dx),
            Formula::Not(inner) => Ok(-inner.robustness_interval(dx)?),
            Formula::And(l, r) => {
                Ok(l.robustness_interval(dx)?.min(&r.robustness_interval(dx)?))
            }
            Formula::Or(l, r) => Ok(l.robustness_interval(dx)?.max(&r.robustness_interval(dx)?)),
        }
    }

    pub fn normalized_robustness(&self, x: &StateVector) -> Result<f64, EvalError> {
        match self {
            Formula::Atom(a) => a.normalized_robustness(x),
            Formula::Not(_) => Err(EvalError::NotNegationNormal),
            Formula::And(l, r) => {
                Ok(l.normalized_robustness(x)?.min(r.normalized_robustness(x)?))
            }
            Formula::Or(l, r) => Ok(l.normalized_robustness(x)?.max(r.normalized_robustness(x)?)),
        }
    }

    pub fn wc_normalized_robustness(&self, dx: &StateBox) -> Result<f64, EvalError> {
        match self {
            Formula::Atom(a) => a.wc_normalized_robustness(dx),
            Formula::Not(_) => Err(EvalError::NotNegationNormal),
            Formula::And(l, r) => {
                Ok(l.wc_normalized_robustness(dx)?.min(r.wc_normalized_robustness(dx)?))
            }
            Formula::Or(l, r) => {
                Ok(l.wc_normalized_robustness(dx)?.max(r.wc_normalized_robustness(dx)?))
            }
        }
    }
}

impl From<LinearAtom> for Formula {
    fn from(a: LinearAtom) -> Self {
        Formula::Atom(a)
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Atom(a) => write!(f, "{a}"),
            Formula::Not(inner) => write!(f, "!({inner})"),
            Formula::And(l, r) => write!(f, "({l}) && ({r})"),
            Formula::Or(l, r) => write!(f, "({l}) || ({r})"),
        }
    }
}

/// Free-function form of [`Formula::robustness`].
pub fn robustness(phi: &Formula, x: &StateVector) -> Result<f64, EvalError> {
    phi.robustness(x)
}

pub fn robustness_interval(phi: &Formula, dx: &StateBox) -> Result<Interval, EvalError> {
    phi.robustness_interval(dx)
}

pub fn normalized_robustness(atom: &LinearAtom, x: &StateVector) -> Result<f64, EvalError> {
    atom.normalized_robustness(x)
}

pub fn normalized_robustness_rec(phi: &Formula, x: &StateVector) -> Result<f64, EvalError> {
    phi.normalized_robustness(x)
}

pub fn wc_normalized_robustness(atom: &LinearAtom, dx: &StateBox) -> Result<f64, EvalError> {
    atom.wc_normalized_robustness(dx)
}

pub fn wc_normalized_robustness_rec(phi: &Formula, dx: &StateBox) -> Result<f64, EvalError> {
    phi.wc_normalized_robustness(dx)
}

pub fn signals_of(phi: &Formula) -> BTreeSet<String> {
    phi.signals()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex2_atom() -> LinearAtom {
        LinearAtom::new("p", [("x1", 2.0), ("x2", 4.0)], Comparator::Gt, 9.0)
            .with_signals(["x1", "x2"])
    }

    fn sv(pairs: &[(&str, f64)]) -> StateVector {
        pairs.iter().map(|(k, v)| (*k, *v)).collect()
    }

    #[test]
    fn example2_point_robustness() {
        let x = sv(&[("x1", 3.0), ("x2", 1.0)]);
        assert_eq!(ex2_atom().robustness(&x).unwrap(), 1.0);
    }

    #[test]
    fn example2_robustness_interval() {
        let dx: StateBox = [
            ("x1", Interval::make(3.0, 1.0 / 3.0).unwrap()),
            ("x2", Interval::make(1.0, 1.0 / 3.0).unwrap()),
        ]
        .into_iter()
        .collect();
        let p = ex2_atom().affine_interval(&dx).unwrap();
        assert!((p.lo() - 8.0).abs() < 1e-9 && (p.hi() - 12.0).abs() < 1e-9);
        let r = ex2_atom().robustness_interval(&dx).unwrap();
        assert!((r.lo() + 1.0).abs() < 1e-9 && (r.hi() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn example3_robustness_and_normalization() {
        let lt = LinearAtom::new("a", [("x1", 1.0)], Comparator::Lt, 1.0).with_rho_max(1.0);
        let gt = LinearAtom::new("b", [("x2", 1.0)], Comparator::Gt, 1000.0).with_rho_max(2000.0);
        let x = sv(&[("x1", 1.2), ("x2", 1500.0)]);
        assert!((lt.robustness(&x).unwrap() + 0.2).abs() < 1e-12);
        assert_eq!(lt.normalized_robustness(&x).unwrap(), 0.0);
        assert_eq!(gt.normalized_robustness(&x).unwrap(), 0.25);
        let phi = Formula::or(lt.into(), gt.into());
        assert_eq!(phi.normalized_robustness(&x).unwrap(), 0.25);
        assert_eq!(phi.robustness(&x).unwrap(), 500.0);
    }

    #[test]
    fn normalization_upper_point_and_no_clamp() {
        let a = LinearAtom::new("a", [("x", 1.0)], Comparator::Gt, 0.0).with_rho_max(4.0);
        assert_eq!(a.normalized_robustness(&sv(&[("x", 4.0)])).unwrap(), 1.0);
        assert_eq!(a.normalized_robustness(&sv(&[("x", 8.0)])).unwrap(), 2.0);
    }

    #[test]
    fn and_or_are_min_max() {
        let a = LinearAtom::new("a", [("x", 1.0)], Comparator::Gt, 0.0);
        let b = LinearAtom::new("b", [("y", 1.0)], Comparator::Gt, 0.0);
        let x = sv(&[("x", 2.0), ("y", -1.0)]);
        assert_eq!(Formula::and(a.clone().into(), b.clone().into()).robustness(&x).unwrap(), -1.0);
        assert_eq!(Formula::or(a.into(), b.into()).robustness(&x).unwrap(), 2.0);
    }

    #[test]
    fn wc_normalized_cases() {
        let atom = ex2_atom().with_rho_max(10.0);
        let exact = sv(&[("x1", 3.0), ("x2", 1.0)]).to_box();
        assert!((atom.wc_normalized_robustness(&exact).unwrap() - 0.1).abs() < 1e-12);
        let wide: StateBox = [
            ("x1", Interval::make(3.0, 1.0 / 3.0).unwrap()),
            ("x2", Interval::make(1.0, 1.0 / 3.0).unwrap()),
        ]
        .into_iter()
        .collect();
        assert_eq!(atom.wc_normalized_robustness(&wide).unwrap(), 0.0);
        let phi: Formula = atom.clone().into();
        assert_eq!(
            phi.wc_normalized_robustness(&exact).unwrap(),
            phi.normalized_robustness(&sv(&[("x1", 3.0), ("x2", 1.0)])).unwrap()
        );
    }

    #[test]
    fn missing_state_and_rho_max() {
        let atom = ex2_atom();
        assert_eq!(
            atom.robustness(&sv(&[("x1", 1.0)])),
            Err(EvalError::MissingState("x2".into()))
        );
        assert_eq!(
            atom.normalized_robustness(&sv(&[("x1", 1.0), ("x2", 1.0)])),
            Err(EvalError::MissingRhoMax("p".into()))
        );
    }

    #[test]
    fn nnf_pushes_negation_into_atoms() {
        let a = LinearAtom::new("a", [("x", 1.0)], Comparator::Gt, 1.0);
        let b = LinearAtom::new("b", [("y", 1.0)], Comparator::Lt, 2.0);
        let phi = Formula::not(Formula::and(a.clone().into(), Formula::not(b.clone().into())));
        let nnf = phi.to_nnf();
        assert_eq!(nnf, Formula::or(a.negated().into(), b.into()));
        let x = sv(&[("x", 0.3), ("y", 5.0)]);
        assert!((phi.robustness(&x).unwrap() - nnf.robustness(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn signal_sets() {
        let a = ex2_atom();
        let b = LinearAtom::new("b", [("z", 1.0)], Comparator::Gt, 0.0);
        assert!(signals_of(&b.clone().into()).is_empty());
        let phi = Formula::or(a.into(), b.into());
        let s: Vec<_> = phi.signals().into_iter().collect();
        assert_eq!(s, vec!["x1".to_string(), "x2".to_string()]);
    }
}
