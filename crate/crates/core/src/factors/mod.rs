//! Discrete variables and dense factor tables.
//!
//! Factor scopes are kept sorted by variable name and tables are row-major
//! (last scope variable varies fastest), so two factors over the same
//! variables compare equal entry by entry.

mod cpt;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cpt::estimate_cpt;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub label: String,
    /// Numeric representative (bin midpoint, real units) if the state has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteVariable {
    name: String,
    states: Vec<State>,
}

impl DiscreteVariable {
    pub fn new<S, L>(name: S, labels: impl IntoIterator<Item = L>) -> Result<Self>
    where
        S: Into<String>,
        L: Into<String>,
    {
        let states = labels
            .into_iter()
            .map(|l| State {
                label: l.into(),
                value: None,
            })
            .collect();
        Self::from_states(name, states)
    }

    /// States that carry numeric representatives.
    pub fn with_values<S, L>(name: S, states: impl IntoIterator<Item = (L, f64)>) -> Result<Self>
    where
        S: Into<String>,
        L: Into<String>,
    {
        let states = states
            .into_iter()
            .map(|(l, v)| State {
                label: l.into(),
                value: Some(v),
            })
            .collect();
        Self::from_states(name, states)
    }

    pub fn from_states(name: impl Into<String>, states: Vec<State>) -> Result<Self> {
        let name = name.into();
        if states.is_empty() {
            return Err(Error::InvalidArgument(format!("variable `{name}` has no states")));
        }
        for (i, s) in states.iter().enumerate() {
            if states[..i].iter().any(|t| t.label == s.label) {
                return Err(Error::InvalidArgument(format!(
                    "variable `{name}` repeats state `{}`",
                    s.label
                )));
            }
        }
        Ok(DiscreteVariable { name, states })
    }

    /// Two-state variable with labels `false`, `true`.
    pub fn binary(name: impl Into<String>) -> Self {
        DiscreteVariable {
            name: name.into(),
            states: ["false", "true"]
                .into_iter()
                .map(|l| State {
                    label: l.to_string(),
                    value: None,
                })
                .collect(),
        }
    }

    /// States `0..k` labelled by their index.
    pub fn indexed(name: impl Into<String>, k: usize) -> Result<Self> {
        Self::new(name, (0..k).map(|i| i.to_string()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn cardinality(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn state_index(&self, label: &str) -> Result<usize> {
        self.states
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| Error::UnknownState {
                variable: self.name.clone(),
                state: label.to_string(),
            })
    }

    pub fn label(&self, index: usize) -> &str {
        &self.states[index].label
    }

    /// Numeric representatives of all states, if every state has one.
    pub fn representatives(&self) -> Result<Vec<f64>> {
        self.states
            .iter()
            .map(|s| s.value.ok_or_else(|| Error::MissingRepresentative(self.name.clone())))
            .collect()
    }
}

fn strides(cards: &[usize]) -> Vec<usize> {
    let mut out = vec![1; cards.len()];
    for i in (0..cards.len().saturating_sub(1)).rev() {
        out[i] = out[i + 1] * cards[i + 1];
    }
    out
}

/// Row-major odometer over `cards`, tracking linear offsets into any number of
/// tables whose per-position strides are given.
struct Odometer {
    cards: Vec<usize>,
    digits: Vec<usize>,
    strides: Vec<Vec<usize>>,
    offsets: Vec<usize>,
}

impl Odometer {
    fn new(cards: Vec<usize>, strides: Vec<Vec<usize>>, base: Vec<usize>) -> Self {
        let n = cards.len();
        Odometer {
            cards,
            digits: vec![0; n],
            strides,
            offsets: base,
        }
    }

    fn advance(&mut self) {
        for k in (0..self.cards.len()).rev() {
            self.digits[k] += 1;
            for (off, st) in self.offsets.iter_mut().zip(&self.strides) {
                *off += st[k];
            }
            if self.digits[k] < self.cards[k] {
                return;
            }
            for (off, st) in self.offsets.iter_mut().zip(&self.strides) {
                *off -= st[k] * self.cards[k];
            }
            self.digits[k] = 0;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    scope: Vec<DiscreteVariable>,
    values: Vec<f64>,
}

impl Factor {
    /// Builds a factor whose `values` are laid out row-major in the order of
    /// `scope` as given; the scope is then canonicalised by name.
    pub fn new(scope: Vec<DiscreteVariable>, values: Vec<f64>) -> Result<Self> {
        let cards: Vec<usize> = scope.iter().map(DiscreteVariable::cardinality).collect();
        let expected: usize = cards.iter().product();
        if values.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "factor table has {} entries, scope needs {expected}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("factor entry {v} is not a finite non-negative number")));
        }
        let mut order: Vec<usize> = (0..scope.len()).collect();
        order.sort_by(|&a, &b| scope[a].name.cmp(&scope[b].name));
        for w in order.windows(2) {
            if scope[w[0]].name == scope[w[1]].name {
                return Err(Error::InvalidArgument(format!(
                    "variable `{}` appears twice in a scope",
                    scope[w[0]].name
                )));
            }
        }
        if order.iter().enumerate().all(|(i, &o)| i == o) {
            return Ok(Factor { scope, values });
        }
        let src_strides = strides(&cards);
        let sorted_cards: Vec<usize> = order.iter().map(|&o| cards[o]).collect();
        let mapped: Vec<usize> = order.iter().map(|&o| src_strides[o]).collect();
        let mut odo = Odometer::new(sorted_cards, vec![mapped], vec![0]);
        let mut out = Vec::with_capacity(values.len());
        for _ in 0..values.len() {
            out.push(values[odo.offsets[0]]);
            odo.advance();
        }
        let mut slots: Vec<Option<DiscreteVariable>> = scope.into_iter().map(Some).collect();
        let scope = order.iter().map(|&o| slots[o].take().unwrap()).collect();
        Ok(Factor { scope, values: out })
    }

    pub fn filled(scope: Vec<DiscreteVariable>, value: f64) -> Result<Self> {
        let n = scope.iter().map(DiscreteVariable::cardinality).product();
        Factor::new(scope, vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Factor {
            scope: Vec::new(),
            values: vec![value],
        }
    }

    pub fn scope(&self) -> &[DiscreteVariable] {
        &self.scope
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn variable(&self, name: &str) -> Option<&DiscreteVariable> {
        self.position(name).map(|i| &self.scope[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.scope.binary_search_by(|v| v.name.as_str().cmp(name)).ok()
    }

    fn cards(&self) -> Vec<usize> {
        self.scope.iter().map(DiscreteVariable::cardinality).collect()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Entry at a full assignment given as state indices in scope order.
    pub fn get(&self, assignment: &[usize]) -> f64 {
        let st = strides(&self.cards());
        let idx: usize = assignment.iter().zip(&st).map(|(a, s)| a * s).sum();
        self.values[idx]
    }

    /// Entry at an assignment given by (variable, state label) pairs covering the scope.
    pub fn get_labeled(&self, assignment: &[(&str, &str)]) -> Result<f64> {
        let mut idx = vec![usize::MAX; self.scope.len()];
        for &(name, label) in assignment {
            let p = self.position(name).ok_or_else(|| Error::NotInScope(name.to_string()))?;
            idx[p] = self.scope[p].state_index(label)?;
        }
        if let Some(p) = idx.iter().position(|&i| i == usize::MAX) {
            return Err(Error::InvalidArgument(format!(
                "assignment misses `{}`",
                self.scope[p].name
            )));
        }
        Ok(self.get(&idx))
    }

    pub fn product(&self, other: &Factor) -> Result<Factor> {
        let mut scope: Vec<DiscreteVariable> = Vec::with_capacity(self.scope.len() + other.scope.len());
        let (mut i, mut j) = (0, 0);
        while i < self.scope.len() || j < other.scope.len() {
            let take_left = match (self.scope.get(i), other.scope.get(j)) {
                (Some(a), Some(b)) => match a.name.cmp(&b.name) {
                    std::cmp::Ordering::Less => Some(true),
                    std::cmp::Ordering::Greater => Some(false),
                    std::cmp::Ordering::Equal => {
                        if a.cardinality() != b.cardinality() {
                            return Err(Error::CardinalityMismatch {
                                variable: a.name.clone(),
                                left: a.cardinality(),
                                right: b.cardinality(),
                            });
                        }
                        None
                    }
                },
                (Some(_), None) => Some(true),
                (None, Some(_)) => Some(false),
                (None, None) => unreachable!(),
            };
            match take_left {
                Some(true) => {
                    scope.push(self.scope[i].clone());
                    i += 1;
                }
                Some(false) => {
                    scope.push(other.scope[j].clone());
                    j += 1;
                }
                None => {
                    scope.push(self.scope[i].clone());
                    i += 1;
                    j += 1;
                }
            }
        }
        let cards: Vec<usize> = scope.iter().map(DiscreteVariable::cardinality).collect();
        let project = |f: &Factor| -> Vec<usize> {
            let st = strides(&f.cards());
            scope
                .iter()
                .map(|v| f.position(&v.name).map_or(0, |p| st[p]))
                .collect()
        };
        let (sa, sb) = (project(self), project(other));
        let n: usize = cards.iter().product();
        let mut odo = Odometer::new(cards, vec![sa, sb], vec![0, 0]);
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(self.values[odo.offsets[0]] * other.values[odo.offsets[1]]);
            odo.advance();
        }
        Ok(Factor { scope, values })
    }

    /// Sums `name` out of the factor.
    pub fn marginalize(&self, name: &str) -> Result<Factor> {
        let p = self.position(name).ok_or_else(|| Error::NotInScope(name.to_string()))?;
        let cards = self.cards();
        let mut out_scope = self.scope.clone();
        out_scope.remove(p);
        let mut out_cards = cards.clone();
        out_cards.remove(p);
        let out_st = strides(&out_cards);
        let mut mapped = Vec::with_capacity(cards.len());
        let mut k = 0;
        for i in 0..cards.len() {
            if i == p {
                mapped.push(0);
            } else {
                mapped.push(out_st[k]);
                k += 1;
            }
        }
        let mut out = vec![0.0; out_cards.iter().product()];
        let mut odo = Odometer::new(cards, vec![mapped], vec![0]);
        for &v in &self.values {
            out[odo.offsets[0]] += v;
            odo.advance();
        }
        Ok(Factor {
            scope: out_scope,
            values: out,
        })
    }

    /// Slice at `name = state` (by index); the variable leaves the scope.
    pub fn reduce_index(&self, name: &str, state: usize) -> Result<Factor> {
        let p = self.position(name).ok_or_else(|| Error::NotInScope(name.to_string()))?;
        if state >= self.scope[p].cardinality() {
            return Err(Error::UnknownState {
                variable: name.to_string(),
                state: state.to_string(),
            });
        }
        let cards = self.cards();
        let st = strides(&cards);
        let mut out_scope = self.scope.clone();
        out_scope.remove(p);
        let mut out_cards = cards;
        out_cards.remove(p);
        let mut src = st.clone();
        src.remove(p);
        let n: usize = out_cards.iter().product();
        let mut odo = Odometer::new(out_cards, vec![src], vec![state * st[p]]);
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(self.values[odo.offsets[0]]);
            odo.advance();
        }
        Ok(Factor {
            scope: out_scope,
            values,
        })
    }

    pub fn reduce(&self, name: &str, label: &str) -> Result<Factor> {
        let p = self.position(name).ok_or_else(|| Error::NotInScope(name.to_string()))?;
        let idx = self.scope[p].state_index(label)?;
        self.reduce_index(name, idx)
    }

    pub fn normalize(&self) -> Result<Factor> {
        let total = self.total();
        if !(total > 0.0) {
            return Err(Error::ZeroMass);
        }
        Ok(Factor {
            scope: self.scope.clone(),
            values: self.values.iter().map(|v| v / total).collect(),
        })
    }

    pub fn dump(&self) -> FactorDump {
        FactorDump {
            scope: self.scope.clone(),
            values: self.values.clone(),
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.scope.iter().map(|v| v.name.as_str()).collect();
        write!(f, "Factor({}) {:?}", names.join(", "), self.values)
    }
}

/// JSON debug form of a factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorDump {
    pub scope: Vec<DiscreteVariable>,
    pub values: Vec<f64>,
}

impl TryFrom<FactorDump> for Factor {
    type Error = Error;

    fn try_from(d: FactorDump) -> Result<Factor> {
        Factor::new(d.scope, d.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn var(name: &str, k: usize) -> DiscreteVariable {
        DiscreteVariable::indexed(name, k).unwrap()
    }

    /// Brute-force lookup by explicit per-variable assignment, independent of the odometer.
    fn lookup(f: &Factor, assignment: &[(&str, usize)]) -> f64 {
        let mut idx = 0;
        for v in f.scope() {
            let a = assignment.iter().find(|(n, _)| *n == v.name()).unwrap().1;
            idx = idx * v.cardinality() + a;
        }
        f.values()[idx]
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64) / ((1u64 << 53) as f64)
    }

    #[test]
    fn scope_is_canonicalised() {
        // values laid out over (B, A): B slow, A fast
        let f = Factor::new(vec![var("B", 2), var("A", 3)], vec![0., 1., 2., 3., 4., 5.]).unwrap();
        assert_eq!(f.scope()[0].name(), "A");
        for b in 0..2 {
            for a in 0..3 {
                assert_eq!(lookup(&f, &[("A", a), ("B", b)]), (b * 3 + a) as f64);
            }
        }
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(Factor::new(vec![var("A", 2)], vec![1.0]).is_err());
        assert!(Factor::new(vec![var("A", 2)], vec![1.0, -0.5]).is_err());
        assert!(Factor::new(vec![var("A", 2), var("A", 2)], vec![1.0; 4]).is_err());
        assert!(DiscreteVariable::new("A", ["x", "x"]).is_err());
    }

    #[test]
    fn product_same_scope_is_entrywise() {
        let f = Factor::new(vec![var("A", 3)], vec![1., 2., 3.]).unwrap();
        let g = Factor::new(vec![var("A", 3)], vec![4., 5., 6.]).unwrap();
        assert_eq!(f.product(&g).unwrap().values(), &[4., 10., 18.]);
        let ones = Factor::filled(vec![var("A", 3)], 1.0).unwrap();
        assert_eq!(f.product(&ones).unwrap(), f);
    }

    #[test]
    fn product_disjoint_is_outer() {
        let f = Factor::new(vec![var("A", 2)], vec![2., 3.]).unwrap();
        let g = Factor::new(vec![var("B", 2)], vec![5., 7.]).unwrap();
        let h = f.product(&g).unwrap();
        for (a, fa) in [(0, 2.), (1, 3.)] {
            for (b, gb) in [(0, 5.), (1, 7.)] {
                assert_eq!(lookup(&h, &[("A", a), ("B", b)]), fa * gb);
            }
        }
    }

    #[test]
    fn product_rejects_cardinality_mismatch() {
        let f = Factor::filled(vec![var("A", 2)], 1.0).unwrap();
        let g = Factor::filled(vec![var("A", 3)], 1.0).unwrap();
        assert!(matches!(f.product(&g), Err(Error::CardinalityMismatch { .. })));
    }

    #[test]
    fn marginalize_uniform() {
        let f = Factor::filled(vec![var("A", 2), var("B", 2)], 0.25).unwrap();
        let m = f.marginalize("A").unwrap();
        assert_eq!(m.scope().len(), 1);
        assert_eq!(m.values(), &[0.5, 0.5]);
        let s = m.marginalize("B").unwrap();
        assert_relative_eq!(s.values()[0], 1.0);
        assert!(matches!(f.marginalize("C"), Err(Error::NotInScope(_))));
    }

    #[test]
    fn marginalize_matches_direct_sum() {
        let mut seed = 7;
        let vals: Vec<f64> = (0..2 * 3 * 4).map(|_| lcg(&mut seed)).collect();
        let f = Factor::new(vec![var("A", 2), var("B", 3), var("C", 4)], vals).unwrap();
        let m = f.marginalize("B").unwrap();
        for a in 0..2 {
            for c in 0..4 {
                let direct: f64 = (0..3).map(|b| lookup(&f, &[("A", a), ("B", b), ("C", c)])).sum();
                assert_relative_eq!(lookup(&m, &[("A", a), ("C", c)]), direct, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn reduce_matches_indexing() {
        let mut seed = 3;
        let vals: Vec<f64> = (0..2 * 3 * 4).map(|_| lcg(&mut seed)).collect();
        let f = Factor::new(vec![var("A", 2), var("B", 3), var("C", 4)], vals).unwrap();
        let r = f.reduce("C", "2").unwrap();
        for a in 0..2 {
            for b in 0..3 {
                assert_eq!(lookup(&r, &[("A", a), ("B", b)]), lookup(&f, &[("A", a), ("B", b), ("C", 2)]));
            }
        }
        assert!(matches!(f.reduce("C", "9"), Err(Error::UnknownState { .. })));
    }

    #[test]
    fn reduce_point_mass() {
        let f = Factor::new(vec![var("A", 3)], vec![0., 1., 0.]).unwrap();
        assert_eq!(f.reduce("A", "1").unwrap().total(), 1.0);
        assert_eq!(f.reduce("A", "2").unwrap().total(), 0.0);
    }

    #[test]
    fn reduce_then_sum_selects_a_row() {
        let f = Factor::new(vec![var("A", 2), var("B", 2)], vec![1., 2., 3., 4.]).unwrap();
        let row = f.reduce("A", "1").unwrap();
        assert_eq!(row.values(), &[3., 4.]);
        assert_eq!(row.marginalize("B").unwrap().values(), &[7.]);
    }

    #[test]
    fn normalize_cases() {
        let f = Factor::filled(vec![var("A", 2), var("B", 2)], 1.0).unwrap();
        let n = f.normalize().unwrap();
        assert!(n.values().iter().all(|&v| v == 0.25));
        let again = n.normalize().unwrap();
        for (a, b) in again.values().iter().zip(n.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let z = Factor::filled(vec![var("A", 2)], 0.0).unwrap();
        assert!(matches!(z.normalize(), Err(Error::ZeroMass)));
    }

    #[test]
    fn dump_round_trips_through_json() {
        let f = Factor::new(
            vec![DiscreteVariable::with_values("Y", [("lo", 1.0), ("hi", 2.0)]).unwrap()],
            vec![0.3, 0.7],
        )
        .unwrap();
        let json = serde_json::to_string(&f.dump()).unwrap();
        let back: FactorDump = serde_json::from_str(&json).unwrap();
        assert_eq!(Factor::try_from(back).unwrap(), f);
    }
}
