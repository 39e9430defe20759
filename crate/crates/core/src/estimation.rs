//! Interventional estimands over the treatment, burden and outcome roles,
//! evaluated exactly from a fitted model.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::DiscreteDataset;
use crate::error::{Error, Result};
use crate::factors::DiscreteVariable;
use crate::graph::CausalGraph;
use crate::identification::{verify_estimator_preconditions_with, EstimatorRoles};
use crate::inference::{FactorizedModel, ParentPolicy};

/// Outcome distributions under `do(X = treated)` and `do(X = control)`, optionally
/// within one burden stratum, with their expectation summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub outcome: String,
    pub labels: Vec<String>,
    pub representatives: Vec<f64>,
    pub treated: Vec<f64>,
    pub control: Vec<f64>,
    pub expectation_treated: f64,
    pub expectation_control: f64,
    pub delta: f64,
    /// Treated over control per outcome state; `None` where the control mass is zero.
    pub pr: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum: Option<String>,
}

impl EffectEstimate {
    fn build(outcome: &DiscreteVariable, treated: Vec<f64>, control: Vec<f64>, stratum: Option<String>) -> Result<Self> {
        let representatives = outcome.representatives()?;
        let expectation_treated = expectation(&treated, &representatives)?;
        let expectation_control = expectation(&control, &representatives)?;
        Ok(EffectEstimate {
            outcome: outcome.name().to_string(),
            labels: outcome.states().iter().map(|s| s.label.clone()).collect(),
            pr: probability_ratio(&treated, &control),
            representatives,
            treated,
            control,
            expectation_treated,
            expectation_control,
            delta: expectation_treated - expectation_control,
            stratum,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Two-column CSV (`value,probability`) of the treated distribution.
    pub fn write_treated_csv<W: Write>(&self, out: W) -> Result<()> {
        write_distribution_csv(out, &self.representatives, &self.treated)
    }

    pub fn write_control_csv<W: Write>(&self, out: W) -> Result<()> {
        write_distribution_csv(out, &self.representatives, &self.control)
    }
}

/// Writes `value,probability` rows.
pub fn write_distribution_csv<W: Write>(out: W, values: &[f64], probs: &[f64]) -> Result<()> {
    if values.len() != probs.len() {
        return Err(Error::InvalidArgument("value and probability columns differ in length".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["value", "probability"])?;
    for (v, p) in values.iter().zip(probs) {
        w.write_record([v.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `Σ y · P(y)`.
pub fn expectation(dist: &[f64], representatives: &[f64]) -> Result<f64> {
    if dist.len() != representatives.len() {
        return Err(Error::InvalidArgument(format!(
            "distribution has {} states, representatives {}",
            dist.len(),
            representatives.len()
        )));
    }
    Ok(dist.iter().zip(representatives).map(|(p, y)| p * y).sum())
}

/// Statewise `treated / control`, `None` where control is zero.
pub fn probability_ratio(treated: &[f64], control: &[f64]) -> Vec<Option<f64>> {
    treated
        .iter()
        .zip(control)
        .map(|(&t, &c)| if c > 0.0 { Some(t / c) } else { None })
        .collect()
}

fn normalized(mut v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    let total: f64 = v.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptyStratum(what.to_string()));
    }
    v.iter_mut().for_each(|p| *p /= total);
    Ok(v)
}

/// How an [`Estimator`] is fitted from data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Pseudo-count added to every CPT cell.
    pub smoothing: f64,
    pub policy: ParentPolicy,
    /// Marginalise the graph onto the five role variables before fitting.
    pub project: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            smoothing: 1.0,
            policy: ParentPolicy::District,
            project: true,
        }
    }
}

/// Exact evaluator of the identified estimands. Holds the model joint over
/// `(X, V2, V7, W, Y0)` and derives every conditional from it.
#[derive(Clone, Debug)]
pub struct Estimator {
    roles: EstimatorRoles,
    treatment: DiscreteVariable,
    burden: DiscreteVariable,
    outcome: DiscreteVariable,
    // cardinalities in role order x, v2, v7, w, y0
    cards: [usize; 5],
    joint: Vec<f64>,
}

impl Estimator {
    /// Checks the identification preconditions on the model graph and
    /// tabulates the role joint.
    pub fn new(model: &FactorizedModel, roles: &EstimatorRoles) -> Result<Self> {
        let report = verify_estimator_preconditions_with(model.graph(), roles)?;
        if let Some(bad) = report.claims.iter().find(|c| !c.holds) {
            return Err(Error::Precondition(format!("claim `{}` does not hold", bad.label)));
        }
        let names = [
            roles.treatment.as_str(),
            roles.adjustment.as_str(),
            roles.income.as_str(),
            roles.burden.as_str(),
            roles.outcome.as_str(),
        ];
        let treatment = model.variable(names[0])?.clone();
        if treatment.cardinality() != 2 {
            return Err(Error::InvalidArgument(format!(
                "treatment `{}` must be binary, has {} states",
                treatment.name(),
                treatment.cardinality()
            )));
        }
        let vars: Vec<DiscreteVariable> = names.iter().map(|n| model.variable(n).cloned()).collect::<Result<_>>()?;
        let factor = model.eliminate(&names, &[])?;
        // position of each role in the factor's canonical scope
        let pos: Vec<usize> = names
            .iter()
            .map(|n| factor.scope().iter().position(|v| v.name() == *n).expect("queried variable in scope"))
            .collect();
        let cards = [
            vars[0].cardinality(),
            vars[1].cardinality(),
            vars[2].cardinality(),
            vars[3].cardinality(),
            vars[4].cardinality(),
        ];
        let size: usize = cards.iter().product();
        let mut joint = Vec::with_capacity(size);
        let mut digits = [0usize; 5];
        let mut assignment = vec![0usize; 5];
        for _ in 0..size {
            for (r, &p) in pos.iter().enumerate() {
                assignment[p] = digits[r];
            }
            joint.push(factor.get(&assignment));
            for k in (0..5).rev() {
                digits[k] += 1;
                if digits[k] < cards[k] {
                    break;
                }
                digits[k] = 0;
            }
        }
        Ok(Estimator {
            roles: roles.clone(),
            treatment,
            burden: vars[3].clone(),
            outcome: vars[4].clone(),
            cards,
            joint,
        })
    }

    /// Verifies the preconditions on `graph`, optionally projects it onto the
    /// role variables, fits CPTs from `data` and builds the estimator.
    pub fn fit(graph: &CausalGraph, data: &DiscreteDataset, roles: &EstimatorRoles, options: &FitOptions) -> Result<Self> {
        let report = verify_estimator_preconditions_with(graph, roles)?;
        if let Some(bad) = report.claims.iter().find(|c| !c.holds) {
            return Err(Error::Precondition(format!("claim `{}` does not hold", bad.label)));
        }
        let model = if options.project {
            let g = graph.latent_projection(roles.names())?;
            FactorizedModel::fit(&g, data, options.smoothing, options.policy)?
        } else {
            FactorizedModel::fit(graph, data, options.smoothing, options.policy)?
        };
        Estimator::new(&model, roles)
    }

    pub fn roles(&self) -> &EstimatorRoles {
        &self.roles
    }

    pub fn treatment(&self) -> &DiscreteVariable {
        &self.treatment
    }

    pub fn burden(&self) -> &DiscreteVariable {
        &self.burden
    }

    pub fn outcome(&self) -> &DiscreteVariable {
        &self.outcome
    }

    fn at(&self, x: usize, v2: usize, v7: usize, w: usize, y: usize) -> f64 {
        let [_, c2, c7, cw, cy] = self.cards;
        self.joint[(((x * c2 + v2) * c7 + v7) * cw + w) * cy + y]
    }

    fn check_x(&self, x: usize) -> Result<()> {
        if x >= self.cards[0] {
            return Err(Error::UnknownState {
                variable: self.roles.treatment.clone(),
                state: x.to_string(),
            });
        }
        Ok(())
    }

    fn check_w(&self, w: usize) -> Result<()> {
        if w >= self.cards[3] {
            return Err(Error::UnknownState {
                variable: self.roles.burden.clone(),
                state: w.to_string(),
            });
        }
        Ok(())
    }

    /// `P(v2)`.
    fn p_v2(&self) -> Vec<f64> {
        let [cx, c2, c7, cw, cy] = self.cards;
        let mut out = vec![0.0; c2];
        for x in 0..cx {
            for (v2, o) in out.iter_mut().enumerate() {
                for v7 in 0..c7 {
                    for w in 0..cw {
                        for y in 0..cy {
                            *o += self.at(x, v2, v7, w, y);
                        }
                    }
                }
            }
        }
        out
    }

    /// `P(v7, w | x, v2)` as `[v2][v7][w]`, `None` for `v2` strata where `(x, v2)` has no mass.
    fn p_v7w_given_xv2(&self, x: usize) -> Vec<Option<Vec<Vec<f64>>>> {
        let [_, c2, c7, cw, cy] = self.cards;
        (0..c2)
            .map(|v2| {
                let mut t = vec![vec![0.0; cw]; c7];
                let mut total = 0.0;
                for (v7, row) in t.iter_mut().enumerate() {
                    for (w, cell) in row.iter_mut().enumerate() {
                        *cell = (0..cy).map(|y| self.at(x, v2, v7, w, y)).sum();
                        total += *cell;
                    }
                }
                if total > 0.0 {
                    t.iter_mut().flatten().for_each(|c| *c /= total);
                    Some(t)
                } else {
                    None
                }
            })
            .collect()
    }

    /// `P(y0 | x, w, v7)`, `None` where the conditioning event has no mass.
    fn p_y_given_xwv7(&self, x: usize, w: usize, v7: usize) -> Option<Vec<f64>> {
        let [_, c2, _, _, cy] = self.cards;
        let dist: Vec<f64> = (0..cy).map(|y| (0..c2).map(|v2| self.at(x, v2, v7, w, y)).sum()).collect();
        normalized(dist, "").ok()
    }

    /// `Σ_v2 P(w | x, v2) P(v2)`, the distribution of the burden under `do(X = x)`.
    pub fn intervention_on_w(&self, x: usize) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let pv2 = self.p_v2();
        let cond = self.p_v7w_given_xv2(x);
        let mut out = vec![0.0; self.cards[3]];
        for (v2, t) in cond.iter().enumerate() {
            let Some(t) = t else { continue };
            for row in t {
                for (w, c) in row.iter().enumerate() {
                    out[w] += c * pv2[v2];
                }
            }
        }
        normalized(out, &format!("{} = {}", self.roles.treatment, self.treatment.label(x)))
    }

    /// `P(y0 | do(X = x), w)`: income strata weighted by
    /// `Σ_v2 P(v7, w | x, v2) P(v2) / Σ_v2 P(w | x, v2) P(v2)`. Income strata without
    /// support are skipped and the result renormalised.
    pub fn covariate_specific_effect(&self, x: usize, w: usize) -> Result<Vec<f64>> {
        self.check_x(x)?;
        self.check_w(w)?;
        let label = || {
            format!(
                "{} = {}, {} = {}",
                self.roles.treatment,
                self.treatment.label(x),
                self.roles.burden,
                self.burden.label(w)
            )
        };
        let pv2 = self.p_v2();
        let cond = self.p_v7w_given_xv2(x);
        let [_, _, c7, _, cy] = self.cards;
        let mut numer = vec![0.0; c7];
        for (v2, t) in cond.iter().enumerate() {
            let Some(t) = t else { continue };
            for (v7, row) in t.iter().enumerate() {
                numer[v7] += row[w] * pv2[v2];
            }
        }
        let denom: f64 = numer.iter().sum();
        if !(denom > 0.0) {
            return Err(Error::EmptyStratum(label()));
        }
        let mut out = vec![0.0; cy];
        for (v7, &n) in numer.iter().enumerate() {
            if n == 0.0 {
                continue;
            }
            let Some(py) = self.p_y_given_xwv7(x, w, v7) else { continue };
            for (o, p) in out.iter_mut().zip(py) {
                *o += p * n / denom;
            }
        }
        normalized(out, &label())
    }

    /// `Σ_w P(y0 | do(X = x), w) P(w | do(X = x))`, skipping burden strata without mass.
    pub fn population_effect(&self, x: usize) -> Result<Vec<f64>> {
        let pw = self.intervention_on_w(x)?;
        let mut out = vec![0.0; self.cards[4]];
        for (w, &p) in pw.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let py = self.covariate_specific_effect(x, w)?;
            for (o, q) in out.iter_mut().zip(py) {
                *o += p * q;
            }
        }
        normalized(out, &format!("{} = {}", self.roles.treatment, self.treatment.label(x)))
    }

    /// Adjustment on the single covariate: `Σ_v2 P(y0 | x, v2) P(v2)`.
    pub fn backdoor_effect(&self, x: usize) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let [_, _, c7, cw, cy] = self.cards;
        let pv2 = self.p_v2();
        let mut out = vec![0.0; cy];
        for (v2, &p) in pv2.iter().enumerate() {
            let dist: Vec<f64> = (0..cy)
                .map(|y| (0..c7).map(|v7| (0..cw).map(|w| self.at(x, v2, v7, w, y)).sum::<f64>()).sum())
                .collect();
            let Ok(dist) = normalized(dist, "") else { continue };
            for (o, q) in out.iter_mut().zip(dist) {
                *o += p * q;
            }
        }
        normalized(out, &format!("{} = {}", self.roles.treatment, self.treatment.label(x)))
    }

    /// The unadjusted `P(y0 | x)`.
    pub fn naive_conditional(&self, x: usize) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let [_, c2, c7, cw, cy] = self.cards;
        let dist = (0..cy)
            .map(|y| {
                let mut s = 0.0;
                for v2 in 0..c2 {
                    for v7 in 0..c7 {
                        for w in 0..cw {
                            s += self.at(x, v2, v7, w, y);
                        }
                    }
                }
                s
            })
            .collect();
        normalized(dist, &format!("{} = {}", self.roles.treatment, self.treatment.label(x)))
    }

    /// The unadjusted `P(y0 | x, w)`.
    pub fn naive_stratum(&self, x: usize, w: usize) -> Result<Vec<f64>> {
        self.check_x(x)?;
        self.check_w(w)?;
        let [_, c2, c7, _, cy] = self.cards;
        let dist = (0..cy)
            .map(|y| (0..c2).map(|v2| (0..c7).map(|v7| self.at(x, v2, v7, w, y)).sum::<f64>()).sum())
            .collect();
        normalized(dist, "naive stratum")
    }

    /// Average effect of setting the treatment to its second state versus its first.
    pub fn ate(&self) -> Result<EffectEstimate> {
        EffectEstimate::build(&self.outcome, self.population_effect(1)?, self.population_effect(0)?, None)
    }

    /// Effect within burden stratum `w`.
    pub fn cate(&self, w: usize) -> Result<EffectEstimate> {
        EffectEstimate::build(
            &self.outcome,
            self.covariate_specific_effect(1, w)?,
            self.covariate_specific_effect(0, w)?,
            Some(self.burden.label(w).to_string()),
        )
    }

    /// One entry per burden stratum; strata without mass under either arm are `None`.
    pub fn cate_curve(&self) -> Result<Vec<Option<EffectEstimate>>> {
        (0..self.cards[3])
            .map(|w| match self.cate(w) {
                Ok(e) => Ok(Some(e)),
                Err(Error::EmptyStratum(_)) => Ok(None),
                Err(e) => Err(e),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::Cpt;
    use crate::factors::Factor;

    fn roles_graph() -> CausalGraph {
        CausalGraph::from_spec(
            "node V7\nnode V2\nnode X\nnode W\nnode Y0\n\
             edge V7 V2\nedge V2 X\nedge X W\nedge V7 W\nedge X Y0\nedge W Y0\nedge V7 Y0\n",
        )
        .unwrap()
    }

    fn var(n: &str, k: usize) -> DiscreteVariable {
        if n == "X" {
            return DiscreteVariable::binary("X");
        }
        let states: Vec<(String, f64)> = (0..k).map(|i| (format!("s{i}"), 1000.0 * (i + 1) as f64)).collect();
        DiscreteVariable::with_values(n, states).unwrap()
    }

    /// A model on the role graph with deterministic pseudo-random CPTs.
    fn model(cards: [usize; 5], seed: u64, ignore_parents: bool) -> FactorizedModel {
        let g = roles_graph();
        let names = ["X", "V2", "V7", "W", "Y0"];
        let card = |n: &str| cards[names.iter().position(|m| *m == n).unwrap()];
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            0.05 + ((state >> 33) as f64 / (1u64 << 31) as f64)
        };
        let mut cpts = Vec::new();
        for child in names {
            let parents: Vec<String> = g.relatives(child, crate::graph::Relation::Parents).unwrap().into_iter().collect();
            let mut scope: Vec<DiscreteVariable> = parents.iter().map(|p| var(p, card(p))).collect();
            scope.push(var(child, card(child)));
            let k = card(child);
            let rows: usize = parents.iter().map(|p| card(p)).product();
            let base: Vec<f64> = (0..k).map(|_| next()).collect();
            let mut values = Vec::new();
            for _ in 0..rows {
                let row: Vec<f64> = if ignore_parents { base.clone() } else { (0..k).map(|_| next()).collect() };
                let t: f64 = row.iter().sum();
                values.extend(row.iter().map(|v| v / t));
            }
            cpts.push(Cpt { child: child.into(), parents, factor: Factor::new(scope, values).unwrap() });
        }
        FactorizedModel::new(g, cpts).unwrap()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn independent_mechanisms_give_marginals() {
        let m = model([2, 2, 3, 4, 5], 3, true);
        let e = Estimator::new(&m, &EstimatorRoles::default()).unwrap();
        let py = m.eliminate(&["Y0"], &[]).unwrap();
        let pw = m.eliminate(&["W"], &[]).unwrap();
        for x in 0..2 {
            assert!(max_diff(&e.population_effect(x).unwrap(), py.values()) < 1e-12);
            assert!(max_diff(&e.intervention_on_w(x).unwrap(), pw.values()) < 1e-12);
            for w in 0..4 {
                assert!(max_diff(&e.covariate_specific_effect(x, w).unwrap(), py.values()) < 1e-12);
            }
        }
        assert!(e.ate().unwrap().delta.abs() < 1e-9);
    }

    #[test]
    fn population_and_backdoor_routes_agree() {
        for seed in 0..20 {
            let m = model([2, 3, 3, 4, 6], seed, false);
            let e = Estimator::new(&m, &EstimatorRoles::default()).unwrap();
            for x in 0..2 {
                let a = e.population_effect(x).unwrap();
                let b = e.backdoor_effect(x).unwrap();
                assert!(max_diff(&a, &b) < 1e-12, "seed {seed}");
                assert!((e.intervention_on_w(x).unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn population_effect_is_the_stratum_mixture() {
        let m = model([2, 2, 3, 4, 5], 11, false);
        let e = Estimator::new(&m, &EstimatorRoles::default()).unwrap();
        let pw = e.intervention_on_w(1).unwrap();
        let mut mix = vec![0.0; 5];
        for (w, p) in pw.iter().enumerate() {
            for (m, q) in mix.iter_mut().zip(e.covariate_specific_effect(1, w).unwrap()) {
                *m += p * q;
            }
        }
        assert!(max_diff(&mix, &e.population_effect(1).unwrap()) < 1e-12);
    }

    #[test]
    fn single_state_adjustment_reduces_to_conditionals() {
        let m = model([2, 1, 3, 4, 5], 5, false);
        let e = Estimator::new(&m, &EstimatorRoles::default()).unwrap();
        for x in 0..2 {
            let pw = m.eliminate(&["W"], &[("X", x)]).unwrap();
            assert!(max_diff(&e.intervention_on_w(x).unwrap(), pw.values()) < 1e-12);
            let py = m.eliminate(&["Y0"], &[("X", x)]).unwrap();
            assert!(max_diff(&e.backdoor_effect(x).unwrap(), py.values()) < 1e-12);
        }
    }

    #[test]
    fn expectation_and_ratio() {
        assert_eq!(expectation(&[0.0, 1.0, 0.0], &[1.0, 15400.0, 3.0]).unwrap(), 15400.0);
        assert_eq!(expectation(&[0.5, 0.5], &[10000.0, 20000.0]).unwrap(), 15000.0);
        let d = [0.1, 0.2, 0.3, 0.4];
        let v = [3.0, -1.0, 7.5, 2.0];
        let by_hand = 0.1 * 3.0 + 0.2 * -1.0 + 0.3 * 7.5 + 0.4 * 2.0;
        assert!((expectation(&d, &v).unwrap() - by_hand).abs() < 1e-12);
        assert!(expectation(&d, &v[..3]).is_err());
        assert_eq!(probability_ratio(&d, &d), vec![Some(1.0); 4]);
        assert_eq!(probability_ratio(&[0.5, 0.5], &[1.0, 0.0]), vec![Some(0.5), None]);
    }

    #[test]
    fn failed_precondition_is_reported() {
        let g = roles_graph().with_edge("V2", "Y0").unwrap();
        let data = crate::scm::reference_scm(crate::scm::ReferenceKind::ConfoundedRebound, 0)
            .unwrap()
            .sample_observational(500, 1)
            .unwrap();
        let err = Estimator::fit(&g, &data, &EstimatorRoles::default(), &FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)), "{err}");
    }

    #[test]
    fn estimate_serializes() {
        let m = model([2, 2, 3, 4, 5], 2, false);
        let e = Estimator::new(&m, &EstimatorRoles::default()).unwrap().ate().unwrap();
        assert!((e.delta - (e.expectation_treated - e.expectation_control)).abs() < 1e-12);
        let back: EffectEstimate = serde_json::from_str(&e.to_json().unwrap()).unwrap();
        assert_eq!(back, e);
        let mut buf = Vec::new();
        e.write_treated_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("value,probability\n1000,"));
    }
}
