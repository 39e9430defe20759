//! Exact inference over a factorised joint by variable elimination.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::DiscreteDataset;
use crate::error::{Error, Result};
use crate::factors::{estimate_cpt, DiscreteVariable, Factor};
use crate::graph::{CausalGraph, NodeKind};

/// How the conditioning set of each observed node is chosen when fitting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParentPolicy {
    /// Observed graph parents only. Latent parents are dropped.
    #[default]
    Observed,
    /// Observed parents enlarged by the node's latent-connected component among
    /// its predecessors, plus that component's observed parents. This is the
    /// factorisation that stays exact when latents confound observed nodes.
    District,
}

impl std::str::FromStr for ParentPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observed" => Ok(ParentPolicy::Observed),
            "district" => Ok(ParentPolicy::District),
            other => Err(Error::InvalidArgument(format!("unknown parent policy `{other}`"))),
        }
    }
}

/// One conditional table `P(child | parents)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cpt {
    pub child: String,
    pub parents: Vec<String>,
    pub factor: Factor,
}

#[derive(Clone, Debug)]
pub struct FactorizedModel {
    graph: CausalGraph,
    variables: BTreeMap<String, DiscreteVariable>,
    cpts: BTreeMap<String, Cpt>,
}

const ROW_TOLERANCE: f64 = 1e-9;

impl FactorizedModel {
    /// Assembles a model from explicit CPTs, one per observed node of `graph`.
    pub fn new(graph: CausalGraph, cpts: Vec<Cpt>) -> Result<Self> {
        let mut variables = BTreeMap::new();
        let mut by_child = BTreeMap::new();
        for cpt in cpts {
            if graph.kind(&cpt.child)? != NodeKind::Observed {
                return Err(Error::InvalidArgument(format!(
                    "`{}` is not an observed node",
                    cpt.child
                )));
            }
            let mut expected: BTreeSet<&str> = cpt.parents.iter().map(String::as_str).collect();
            expected.insert(&cpt.child);
            let actual: BTreeSet<&str> = cpt.factor.scope().iter().map(|v| v.name()).collect();
            if expected != actual {
                return Err(Error::InvalidArgument(format!(
                    "CPT for `{}` has scope {:?}, expected {:?}",
                    cpt.child, actual, expected
                )));
            }
            for p in &cpt.parents {
                if graph.kind(p)? != NodeKind::Observed {
                    return Err(Error::InvalidArgument(format!(
                        "CPT for `{}` conditions on non-observed `{p}`",
                        cpt.child
                    )));
                }
            }
            check_rows(&cpt)?;
            for v in cpt.factor.scope() {
                if let Some(prev) = variables.insert(v.name().to_string(), v.clone()) {
                    if prev.cardinality() != v.cardinality() {
                        return Err(Error::CardinalityMismatch {
                            variable: v.name().to_string(),
                            left: prev.cardinality(),
                            right: v.cardinality(),
                        });
                    }
                }
            }
            if by_child.insert(cpt.child.clone(), cpt).is_some() {
                return Err(Error::InvalidArgument("two CPTs for one node".into()));
            }
        }
        for node in graph.nodes_of_kind(NodeKind::Observed) {
            if !by_child.contains_key(node) {
                return Err(Error::InvalidArgument(format!("no CPT for `{node}`")));
            }
        }
        Ok(FactorizedModel {
            graph,
            variables,
            cpts: by_child,
        })
    }

    /// Estimates every observed node's CPT from data.
    pub fn fit(
        graph: &CausalGraph,
        data: &DiscreteDataset,
        smoothing: f64,
        policy: ParentPolicy,
    ) -> Result<Self> {
        let sets = conditioning_sets(graph, policy)?;
        let mut cpts = Vec::with_capacity(sets.len());
        for (child, parents) in sets {
            let factor = estimate_cpt(data, &child, &parents, smoothing)?;
            cpts.push(Cpt {
                child,
                parents,
                factor,
            });
        }
        FactorizedModel::new(graph.clone(), cpts)
    }

    pub fn graph(&self) -> &CausalGraph {
        &self.graph
    }

    pub fn variable(&self, name: &str) -> Result<&DiscreteVariable> {
        self.variables
            .get(name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn variables(&self) -> impl Iterator<Item = &DiscreteVariable> {
        self.variables.values()
    }

    pub fn cpt(&self, node: &str) -> Result<&Cpt> {
        self.cpts
            .get(node)
            .ok_or_else(|| Error::UnknownVariable(node.to_string()))
    }

    pub fn cpts(&self) -> impl Iterator<Item = &Cpt> {
        self.cpts.values()
    }

    /// Min-degree elimination order of all variables outside `keep`, over the
    /// interaction graph of every CPT. Ties go to the smaller name.
    pub fn elimination_order<S: AsRef<str>>(&self, keep: &[S]) -> Vec<String> {
        let keep: BTreeSet<&str> = keep.iter().map(|s| s.as_ref()).collect();
        let scopes: Vec<Vec<&str>> = self
            .cpts
            .values()
            .map(|c| c.factor.scope().iter().map(|v| v.name()).collect())
            .collect();
        min_degree_order(&scopes, |v| !keep.contains(v))
    }

    /// `P(query | evidence)` with evidence given as state indices.
    pub fn eliminate<S: AsRef<str>>(&self, query: &[S], evidence: &[(S, usize)]) -> Result<Factor> {
        let query: BTreeSet<&str> = query.iter().map(|s| s.as_ref()).collect();
        if query.is_empty() {
            return Err(Error::InvalidArgument("empty query".into()));
        }
        let mut ev: BTreeMap<&str, usize> = BTreeMap::new();
        for (name, state) in evidence {
            let name = name.as_ref();
            let var = self.variable(name)?;
            if *state >= var.cardinality() {
                return Err(Error::UnknownState {
                    variable: name.to_string(),
                    state: state.to_string(),
                });
            }
            if query.contains(name) {
                return Err(Error::InvalidArgument(format!("`{name}` is both queried and observed")));
            }
            if let Some(prev) = ev.insert(name, *state) {
                if prev != *state {
                    return Err(Error::ZeroProbabilityEvidence);
                }
            }
        }
        for q in &query {
            self.variable(q)?;
        }

        // Only ancestors of the named variables carry information; the rest sum to one.
        let mut relevant: BTreeSet<&str> = query.iter().copied().chain(ev.keys().copied()).collect();
        let mut frontier: Vec<&str> = relevant.iter().copied().collect();
        while let Some(v) = frontier.pop() {
            for p in &self.cpts[v].parents {
                if relevant.insert(p.as_str()) {
                    frontier.push(p.as_str());
                }
            }
        }

        let mut factors: Vec<Factor> = Vec::with_capacity(relevant.len());
        for v in &relevant {
            let mut f = self.cpts[*v].factor.clone();
            for (name, &state) in &ev {
                if f.contains(name) {
                    f = f.reduce_index(name, state)?;
                }
            }
            factors.push(f);
        }

        let scopes: Vec<Vec<&str>> = factors
            .iter()
            .map(|f| f.scope().iter().map(|v| v.name()).collect())
            .collect();
        let order: Vec<String> = min_degree_order(&scopes, |v| !query.contains(v));
        for var in &order {
            let (with, without): (Vec<Factor>, Vec<Factor>) =
                factors.into_iter().partition(|f| f.contains(var));
            factors = without;
            let mut joined = Factor::scalar(1.0);
            for f in &with {
                joined = joined.product(f)?;
            }
            factors.push(joined.marginalize(var)?);
        }
        let mut result = Factor::scalar(1.0);
        for f in &factors {
            result = result.product(f)?;
        }
        result.normalize().map_err(|e| match e {
            Error::ZeroMass => Error::ZeroProbabilityEvidence,
            other => other,
        })
    }

    /// `P(query | evidence)` with evidence given by state labels.
    pub fn query_labeled(&self, query: &[&str], evidence: &[(&str, &str)]) -> Result<Factor> {
        let ev: Vec<(&str, usize)> = evidence
            .iter()
            .map(|&(n, l)| Ok((n, self.variable(n)?.state_index(l)?)))
            .collect::<Result<_>>()?;
        self.eliminate(query, &ev)
    }
}

fn check_rows(cpt: &Cpt) -> Result<()> {
    let child = cpt.factor.variable(&cpt.child).unwrap();
    let mut sums = cpt.factor.reduce_index(&cpt.child, 0)?;
    for s in 1..child.cardinality() {
        let slice = cpt.factor.reduce_index(&cpt.child, s)?;
        let values: Vec<f64> = sums.values().iter().zip(slice.values()).map(|(a, b)| a + b).collect();
        sums = Factor::new(sums.scope().to_vec(), values)?;
    }
    if let Some(bad) = sums.values().iter().find(|s| (**s - 1.0).abs() > ROW_TOLERANCE) {
        return Err(Error::InvalidArgument(format!(
            "CPT for `{}` has a row summing to {bad}",
            cpt.child
        )));
    }
    Ok(())
}

/// Greedy min-degree (ties by name) over the interaction graph induced by `scopes`,
/// eliminating only variables accepted by `eliminate`.
fn min_degree_order<F>(scopes: &[Vec<&str>], eliminate: F) -> Vec<String>
where
    F: Fn(&str) -> bool,
{
    let mut adj: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for scope in scopes {
        for &a in scope {
            let entry = adj.entry(a).or_default();
            for &b in scope {
                if a != b {
                    entry.insert(b);
                }
            }
        }
    }
    let mut remaining: BTreeSet<&str> = adj.keys().copied().filter(|v| eliminate(v)).collect();
    let mut order = Vec::with_capacity(remaining.len());
    while let Some(&next) = remaining
        .iter()
        .min_by_key(|v| (adj[*v].len(), **v))
    {
        remaining.remove(next);
        let nbrs: Vec<&str> = adj[next].iter().copied().collect();
        for &a in &nbrs {
            let set = adj.get_mut(a).unwrap();
            set.remove(next);
            for &b in &nbrs {
                if a != b {
                    set.insert(b);
                }
            }
        }
        adj.remove(next);
        order.push(next.to_string());
    }
    order
}

/// Conditioning set per observed node under `policy`, keyed by node name.
pub fn conditioning_sets(
    graph: &CausalGraph,
    policy: ParentPolicy,
) -> Result<BTreeMap<String, Vec<String>>> {
    let observed: BTreeSet<usize> = graph
        .nodes_of_kind(NodeKind::Observed)
        .into_iter()
        .map(|n| graph.id(n))
        .collect::<Result<_>>()?;
    let observed_parents = |u: usize| -> BTreeSet<usize> {
        graph
            .parent_ids(u)
            .iter()
            .copied()
            .filter(|p| observed.contains(p))
            .collect()
    };
    let mut out = BTreeMap::new();
    match policy {
        ParentPolicy::Observed => {
            for &u in &observed {
                let ps = observed_parents(u).into_iter().map(|p| graph.name(p).to_string()).collect();
                out.insert(graph.name(u).to_string(), ps);
            }
        }
        ParentPolicy::District => {
            let order: Vec<usize> = graph
                .topological_order()
                .into_iter()
                .map(|n| graph.id(n).unwrap())
                .filter(|u| observed.contains(u))
                .collect();
            let latent_parents = |u: usize| -> BTreeSet<usize> {
                graph
                    .parent_ids(u)
                    .iter()
                    .copied()
                    .filter(|p| graph.kind(graph.name(*p)).ok() == Some(NodeKind::Latent))
                    .collect()
            };
            for (i, &u) in order.iter().enumerate() {
                let prefix: BTreeSet<usize> = order[..=i].iter().copied().collect();
                // component of u among the prefix, linked through shared latent parents
                let mut comp = BTreeSet::from([u]);
                let mut stack = vec![u];
                while let Some(v) = stack.pop() {
                    for l in latent_parents(v) {
                        for &w in graph.child_ids(l) {
                            if prefix.contains(&w) && comp.insert(w) {
                                stack.push(w);
                            }
                        }
                    }
                }
                let mut cond: BTreeSet<usize> = comp.clone();
                for &v in &comp {
                    cond.extend(observed_parents(v));
                }
                cond.remove(&u);
                let ps = cond.into_iter().map(|p| graph.name(p).to_string()).collect();
                out.insert(graph.name(u).to_string(), ps);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(name: &str, k: usize) -> DiscreteVariable {
        DiscreteVariable::indexed(name, k).unwrap()
    }

    fn cpt(child: &str, k: usize, parents: &[(&str, usize)], values: Vec<f64>) -> Cpt {
        let mut scope: Vec<DiscreteVariable> = parents.iter().map(|(n, c)| var(n, *c)).collect();
        scope.push(var(child, k));
        Cpt {
            child: child.to_string(),
            parents: parents.iter().map(|(n, _)| n.to_string()).collect(),
            factor: Factor::new(scope, values).unwrap(),
        }
    }

    #[test]
    fn single_variable_prior() {
        let g = CausalGraph::from_spec("node A\n").unwrap();
        let m = FactorizedModel::new(g, vec![cpt("A", 3, &[], vec![0.2, 0.3, 0.5])]).unwrap();
        let none: &[(&str, usize)] = &[];
        assert_eq!(m.eliminate(&["A"], none).unwrap().values(), &[0.2, 0.3, 0.5]);
    }

    #[test]
    fn deterministic_chain() {
        let g = CausalGraph::from_spec("node A\nnode B\nedge A B\n").unwrap();
        // B = (A + 1) mod 3
        let m = FactorizedModel::new(
            g,
            vec![
                cpt("A", 3, &[], vec![0.2, 0.3, 0.5]),
                cpt("B", 3, &[("A", 3)], vec![0., 1., 0., 0., 0., 1., 1., 0., 0.]),
            ],
        )
        .unwrap();
        for a in 0..3 {
            let post = m.eliminate(&["B"], &[("A", a)]).unwrap();
            let mut expected = vec![0.0; 3];
            expected[(a + 1) % 3] = 1.0;
            assert_eq!(post.values(), expected.as_slice());
        }
    }

    #[test]
    fn zero_probability_evidence_is_an_error() {
        let g = CausalGraph::from_spec("node A\nnode B\nedge A B\n").unwrap();
        let m = FactorizedModel::new(
            g,
            vec![
                cpt("A", 2, &[], vec![1.0, 0.0]),
                cpt("B", 2, &[("A", 2)], vec![0.5, 0.5, 0.5, 0.5]),
            ],
        )
        .unwrap();
        assert!(matches!(
            m.eliminate(&["B"], &[("A", 1)]),
            Err(Error::ZeroProbabilityEvidence)
        ));
        assert!(matches!(m.eliminate(&["B"], &[("B", 1)]), Err(Error::InvalidArgument(_))));
        assert!(matches!(m.eliminate(&["Q"], &[]), Err(Error::UnknownVariable(_))));
    }

    #[test]
    fn rejects_unnormalised_cpt() {
        let g = CausalGraph::from_spec("node A\n").unwrap();
        assert!(FactorizedModel::new(g, vec![cpt("A", 2, &[], vec![0.6, 0.6])]).is_err());
    }

    #[test]
    fn star_leaves_go_first() {
        let g = CausalGraph::from_spec(
            "node C\nnode L1\nnode L2\nnode L3\nedge C L1\nedge C L2\nedge C L3\n",
        )
        .unwrap();
        let leaf = |n: &str| cpt(n, 2, &[("C", 2)], vec![0.5; 4]);
        let m = FactorizedModel::new(
            g,
            vec![cpt("C", 2, &[], vec![0.5, 0.5]), leaf("L1"), leaf("L2"), leaf("L3")],
        )
        .unwrap();
        assert_eq!(m.elimination_order(&["C"]), vec!["L1", "L2", "L3"]);
        // once two leaves are gone, C and L3 tie at degree one and C wins on name
        assert_eq!(m.elimination_order::<&str>(&[]), vec!["L1", "L2", "C", "L3"]);
    }

    #[test]
    fn chain_query_independent_of_order() {
        let g = CausalGraph::from_spec("node A\nnode B\nnode C\nedge A B\nedge B C\n").unwrap();
        let m = FactorizedModel::new(
            g,
            vec![
                cpt("A", 2, &[], vec![0.3, 0.7]),
                cpt("B", 2, &[("A", 2)], vec![0.9, 0.1, 0.2, 0.8]),
                cpt("C", 2, &[("B", 2)], vec![0.6, 0.4, 0.25, 0.75]),
            ],
        )
        .unwrap();
        let none: &[(&str, usize)] = &[];
        let p = m.eliminate(&["C"], none).unwrap();
        let pb1 = 0.3 * 0.1 + 0.7 * 0.8;
        let expected = [(1.0 - pb1) * 0.6 + pb1 * 0.25, (1.0 - pb1) * 0.4 + pb1 * 0.75];
        for (a, b) in p.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn district_sets_absorb_latent_siblings() {
        let g = CausalGraph::from_spec(
            "node U latent\nnode A\nnode B\nnode C\nedge U A\nedge U C\nedge A B\nedge B C\n",
        )
        .unwrap();
        let obs = conditioning_sets(&g, ParentPolicy::Observed).unwrap();
        assert_eq!(obs["C"], vec!["B"]);
        let dis = conditioning_sets(&g, ParentPolicy::District).unwrap();
        assert_eq!(dis["A"], Vec::<String>::new());
        assert_eq!(dis["B"], vec!["A"]);
        assert_eq!(dis["C"], vec!["A", "B"]);
    }
}
