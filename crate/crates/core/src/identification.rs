//! Mechanical checks of do-calculus rules, the backdoor criterion and
//! selection-bias recoverability.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{CausalGraph, NodeKind, Path};

/// Which graph a claim is evaluated in.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct GraphVariant {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub incoming_removed: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub outgoing_removed: Vec<String>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub selection_augmented: bool,
}

impl GraphVariant {
    pub fn is_base(&self) -> bool {
        self.incoming_removed.is_empty() && self.outgoing_removed.is_empty() && !self.selection_augmented
    }

    pub fn apply(&self, g: &CausalGraph) -> Result<CausalGraph> {
        g.mutilate_outgoing(&self.outgoing_removed)?
            .mutilate_incoming(&self.incoming_removed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IndependenceClaim {
    pub a: Vec<String>,
    pub b: Vec<String>,
    pub z: Vec<String>,
    pub variant: GraphVariant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Rule1,
    Rule2,
    Rule3,
    BackdoorA,
    BackdoorB,
    Selection,
}

/// Outcome of one independence check. `witness` is an open path when the
/// claim fails.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClaimResult {
    pub label: String,
    pub rule: Rule,
    pub claim: IndependenceClaim,
    pub holds: bool,
    #[serde(serialize_with = "witness_nodes")]
    pub witness: Option<Path>,
}

fn witness_nodes<S: serde::Serializer>(w: &Option<Path>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match w {
        Some(p) => s.collect_seq(&p.nodes),
        None => s.serialize_none(),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IdentificationReport {
    pub claims: Vec<ClaimResult>,
}

impl IdentificationReport {
    pub fn passed(&self) -> bool {
        self.claims.iter().all(|c| c.holds)
    }
}

/// Node names playing each role in the front-door style estimator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EstimatorRoles {
    pub treatment: String,
    pub outcome: String,
    pub burden: String,
    pub income: String,
    pub adjustment: String,
}

impl Default for EstimatorRoles {
    fn default() -> Self {
        EstimatorRoles {
            treatment: "X".into(),
            outcome: "Y0".into(),
            burden: "W".into(),
            income: "V7".into(),
            adjustment: "V2".into(),
        }
    }
}

impl EstimatorRoles {
    pub fn names(&self) -> [&str; 5] {
        [&self.treatment, &self.outcome, &self.burden, &self.income, &self.adjustment]
    }
}

fn owned(s: &[&str]) -> Vec<String> {
    let set: BTreeSet<&str> = s.iter().copied().collect();
    set.into_iter().map(String::from).collect()
}

fn check_sets(g: &CausalGraph, sets: &[&[&str]]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for set in sets {
        for &n in *set {
            g.kind(n)?;
            if !seen.insert(n) {
                return Err(Error::OverlappingSets(n.to_string()));
            }
        }
    }
    Ok(())
}

fn evaluate(g: &CausalGraph, label: &str, rule: Rule, claim: IndependenceClaim) -> Result<ClaimResult> {
    let h = claim.variant.apply(g)?;
    let (holds, witness) = if claim.a.is_empty() || claim.b.is_empty() {
        (true, None)
    } else if h.d_separated(&claim.a, &claim.b, &claim.z)? {
        (true, None)
    } else {
        let witness = h.d_connecting_path(&claim.a, &claim.b, &claim.z)?;
        debug_assert!(witness.is_some());
        (false, witness)
    };
    Ok(ClaimResult {
        label: label.to_string(),
        rule,
        claim,
        holds,
        witness,
    })
}

fn conditioning(x: &[&str], w: &[&str]) -> Vec<String> {
    let all: Vec<&str> = x.iter().chain(w).copied().collect();
    owned(&all)
}

/// Insertion/deletion of observations: `(Y ⊥ Z | X, W)` with incoming edges of `X` removed.
pub fn check_rule1(g: &CausalGraph, y: &[&str], z: &[&str], x: &[&str], w: &[&str]) -> Result<ClaimResult> {
    check_sets(g, &[y, z, x, w])?;
    let claim = IndependenceClaim {
        a: owned(y),
        b: owned(z),
        z: conditioning(x, w),
        variant: GraphVariant {
            incoming_removed: owned(x),
            ..GraphVariant::default()
        },
    };
    evaluate(g, "rule1", Rule::Rule1, claim)
}

/// Action/observation exchange: incoming edges of `X` and outgoing edges of `Z` removed.
pub fn check_rule2(g: &CausalGraph, y: &[&str], z: &[&str], x: &[&str], w: &[&str]) -> Result<ClaimResult> {
    check_sets(g, &[y, z, x, w])?;
    let claim = IndependenceClaim {
        a: owned(y),
        b: owned(z),
        z: conditioning(x, w),
        variant: GraphVariant {
            incoming_removed: owned(x),
            outgoing_removed: owned(z),
            selection_augmented: false,
        },
    };
    evaluate(g, "rule2", Rule::Rule2, claim)
}

/// Insertion/deletion of actions: incoming edges of `X` and of those `Z` nodes
/// that are not ancestors of `W` (after cutting into `X`) removed.
pub fn check_rule3(g: &CausalGraph, y: &[&str], z: &[&str], x: &[&str], w: &[&str]) -> Result<ClaimResult> {
    check_sets(g, &[y, z, x, w])?;
    let gx = g.mutilate_incoming(x)?;
    let w_ids = gx.ids(w.iter().copied())?;
    let anc_w = gx.ancestors_inclusive(&w_ids);
    let z_of_w: Vec<&str> = z
        .iter()
        .copied()
        .filter(|n| !anc_w.contains(&gx.id(n).unwrap()))
        .collect();
    let removed: Vec<&str> = x.iter().chain(&z_of_w).copied().collect();
    let claim = IndependenceClaim {
        a: owned(y),
        b: owned(z),
        z: conditioning(x, w),
        variant: GraphVariant {
            incoming_removed: owned(&removed),
            ..GraphVariant::default()
        },
    };
    evaluate(g, "rule3", Rule::Rule3, claim)
}

/// Whether `z` satisfies the backdoor criterion for `(x, y)`.
pub fn is_backdoor_set(g: &CausalGraph, x: &str, y: &str, z: &[&str]) -> Result<bool> {
    if x == y {
        return Err(Error::InvalidArgument("treatment and outcome coincide".into()));
    }
    let desc = g.relatives(x, crate::graph::Relation::Descendants)?;
    if z.iter().any(|n| *n == x || *n == y || desc.contains(*n)) {
        return Ok(false);
    }
    g.mutilate_outgoing([x])?.d_separated([x], [y], z)
}

/// Every set of observed nodes (size ≤ `max_size`, no descendant of `x`)
/// blocking all backdoor paths from `x` to `y`, ordered by size then name.
pub fn find_backdoor_adjustment_sets(
    g: &CausalGraph,
    x: &str,
    y: &str,
    max_size: usize,
) -> Result<Vec<Vec<String>>> {
    if x == y {
        return Err(Error::InvalidArgument("treatment and outcome coincide".into()));
    }
    g.kind(y)?;
    let desc = g.relatives(x, crate::graph::Relation::Descendants)?;
    let candidates: Vec<&str> = g
        .nodes_of_kind(NodeKind::Observed)
        .into_iter()
        .filter(|n| *n != x && *n != y && !desc.contains(*n))
        .collect();
    let gu = g.mutilate_outgoing([x])?;
    let mut out = Vec::new();
    for size in 0..=max_size.min(candidates.len()) {
        let mut pick: Vec<usize> = (0..size).collect();
        loop {
            let set: Vec<&str> = pick.iter().map(|&i| candidates[i]).collect();
            if gu.d_separated([x], [y], &set)? {
                out.push(set.iter().map(|s| s.to_string()).collect());
            }
            // next combination in lexicographic order
            let mut i = size;
            while i > 0 && pick[i - 1] == candidates.len() - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            pick[i - 1] += 1;
            for j in i..size {
                pick[j] = pick[j - 1] + 1;
            }
        }
    }
    Ok(out)
}

/// The four independences behind the front-door style estimand, using the default role names.
pub fn verify_estimator_preconditions(g: &CausalGraph) -> Result<IdentificationReport> {
    verify_estimator_preconditions_with(g, &EstimatorRoles::default())
}

pub fn verify_estimator_preconditions_with(g: &CausalGraph, r: &EstimatorRoles) -> Result<IdentificationReport> {
    for n in r.names() {
        if !g.contains(n) {
            return Err(Error::UnknownNode(n.to_string()));
        }
    }
    let (x, y0, w, v7, v2) = (
        r.treatment.as_str(),
        r.outcome.as_str(),
        r.burden.as_str(),
        r.income.as_str(),
        r.adjustment.as_str(),
    );
    let mut claims = Vec::with_capacity(4);
    let mut push = |label: &str, mut c: ClaimResult| {
        c.label = label.to_string();
        claims.push(c);
    };
    push("outcome-exchange", check_rule2(g, &[y0], &[x], &[], &[w, v7])?);
    push("mediator-exchange", check_rule2(g, &[v7, w], &[x], &[], &[v2])?);
    push("adjustment-deletion", check_rule3(g, &[v2], &[x], &[], &[])?);
    push("burden-exchange", check_rule2(g, &[w], &[x], &[], &[v2])?);
    Ok(IdentificationReport { claims })
}

/// `(Y ⊥ S | X, cond)` with incoming edges of `X` removed.
pub fn check_selection_recoverability(g: &CausalGraph, y: &str, x: &str, cond: &[&str]) -> Result<ClaimResult> {
    let s = g.selection_node().ok_or(Error::NoSelectionNode)?;
    let mut c = check_rule1(g, &[y], &[s], &[x], cond)?;
    c.label = "selection-recoverability".into();
    c.rule = Rule::Selection;
    c.claim.variant.selection_augmented = true;
    Ok(c)
}

/// Estimator preconditions plus recoverability under selection on `W`. A graph
/// without a selection node is augmented with `W -> S` first.
pub fn identification_report(g: &CausalGraph, roles: &EstimatorRoles) -> Result<IdentificationReport> {
    let mut report = verify_estimator_preconditions_with(g, roles)?;
    let augmented;
    let gs = if g.selection_node().is_some() {
        g
    } else {
        augmented = g.augment_selection([roles.burden.as_str()])?;
        &augmented
    };
    report.claims.push(check_selection_recoverability(
        gs,
        &roles.outcome,
        &roles.treatment,
        &[roles.burden.as_str()],
    )?);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::ehs_fp;

    fn g(spec: &str) -> CausalGraph {
        CausalGraph::from_spec(spec).unwrap()
    }

    #[test]
    fn ehs_fp_preconditions_hold() {
        let r = verify_estimator_preconditions(&ehs_fp()).unwrap();
        assert_eq!(r.claims.len(), 4);
        assert!(r.passed(), "{r:#?}");
        assert!(r.claims.iter().all(|c| c.witness.is_none()));
    }

    #[test]
    fn perturbed_graph_fails_with_witness() {
        let bad = ehs_fp().with_edge("U5", "V2").unwrap();
        let r = verify_estimator_preconditions(&bad).unwrap();
        assert!(!r.passed());
        let failed: Vec<_> = r.claims.iter().filter(|c| !c.holds).collect();
        assert!(failed.iter().all(|c| c.witness.is_some()));
        let w = failed[0].witness.as_ref().unwrap();
        let h = failed[0].claim.variant.apply(&bad).unwrap();
        assert!(h.path_is_open(w, &failed[0].claim.z).unwrap());
    }

    #[test]
    fn missing_role_node() {
        let h = g("node X\nnode Y0\nnode V2\nnode V7\nedge X Y0\n");
        assert!(matches!(verify_estimator_preconditions(&h), Err(Error::UnknownNode(n)) if n == "W"));
    }

    #[test]
    fn selection_on_burden() {
        let gs = ehs_fp().augment_selection(["W"]).unwrap();
        assert!(check_selection_recoverability(&gs, "Y0", "X", &["W"]).unwrap().holds);
        let open = check_selection_recoverability(&gs, "Y0", "X", &[]).unwrap();
        assert!(!open.holds);
        assert!(open.witness.is_some());
        assert!(check_rule1(&gs, &["Y0"], &["S"], &["X"], &["W"]).unwrap().holds);

        let gy = ehs_fp().augment_selection(["Y0"]).unwrap();
        let c = check_selection_recoverability(&gy, "Y0", "X", &["W"]).unwrap();
        assert!(!c.holds);
        assert_eq!(c.witness.unwrap().to_string(), "Y0 -> S");

        assert!(matches!(
            check_selection_recoverability(&ehs_fp(), "Y0", "X", &[]),
            Err(Error::NoSelectionNode)
        ));
    }

    #[test]
    fn full_report_has_five_true_claims() {
        let r = identification_report(&ehs_fp(), &EstimatorRoles::default()).unwrap();
        assert_eq!(r.claims.len(), 5);
        assert!(r.passed());
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["claims"][4]["rule"], "selection");
    }

    #[test]
    fn rule1_degenerate_cases() {
        let chain = g("node A\nnode B\nnode C\nedge A B\nedge B C\n");
        assert!(!check_rule1(&chain, &["C"], &["A"], &[], &[]).unwrap().holds);
        assert!(check_rule1(&chain, &["C"], &["A"], &[], &["B"]).unwrap().holds);
        assert!(check_rule1(&chain, &["C"], &[], &[], &[]).unwrap().holds);
        assert!(check_rule2(&chain, &["C"], &[], &["A"], &[]).unwrap().holds);
        let c = check_rule1(&chain, &["C"], &["A"], &[], &[]).unwrap();
        assert_eq!(c.witness.unwrap().to_string(), "C <- B <- A");
    }

    #[test]
    fn rule2_confounded_pair() {
        let h = g("node A\nnode B\nnode U latent\nedge U A\nedge U B\nedge A B\n");
        assert!(!check_rule2(&h, &["B"], &["A"], &[], &[]).unwrap().holds);
        let clean = g("node A\nnode B\nedge A B\n");
        assert!(check_rule2(&clean, &["B"], &["A"], &[], &[]).unwrap().holds);
    }

    #[test]
    fn rule3_cases() {
        let chain = g("node A\nnode B\nedge A B\n");
        assert!(!check_rule3(&chain, &["B"], &["A"], &[], &[]).unwrap().holds);
        let iso = g("node A\nnode B\n");
        assert!(check_rule3(&iso, &["B"], &["A"], &[], &[]).unwrap().holds);
        // A -> B -> C with W = {B}: A is an ancestor of B so its incoming edges stay;
        // A has none anyway and B blocks, so deletion is licensed.
        let c3 = g("node A\nnode B\nnode C\nedge A B\nedge B C\n");
        assert!(check_rule3(&c3, &["C"], &["A"], &[], &["B"]).unwrap().holds);
    }

    #[test]
    fn overlapping_sets_rejected() {
        let chain = g("node A\nnode B\nedge A B\n");
        assert!(matches!(
            check_rule2(&chain, &["A"], &["A"], &[], &[]),
            Err(Error::OverlappingSets(_))
        ));
        assert!(check_rule1(&chain, &["A"], &["Q"], &[], &[]).is_err());
    }

    #[test]
    fn backdoor_sets_on_ehs_fp() {
        let gr = ehs_fp();
        let sets = find_backdoor_adjustment_sets(&gr, "X", "Y0", 1).unwrap();
        assert!(sets.contains(&vec!["V2".to_string()]));
        assert!(!sets.contains(&vec![]));
        // every returned set passes the path-by-path criterion
        let paths = gr.enumerate_backdoor_paths("X", "Y0").unwrap();
        for s in &sets {
            for p in &paths {
                assert!(!gr.path_is_open(p, s).unwrap());
            }
        }
    }

    #[test]
    fn backdoor_sets_simple_cases() {
        let h = g("node X\nnode Y\nedge X Y\n");
        assert_eq!(find_backdoor_adjustment_sets(&h, "X", "Y", 2).unwrap(), vec![Vec::<String>::new()]);
        let latent = g("node X\nnode Y\nnode Z\nnode U latent\nedge U X\nedge U Y\nedge X Y\n");
        assert!(find_backdoor_adjustment_sets(&latent, "X", "Y", 3).unwrap().is_empty());
        let fork = g("node X\nnode Y\nnode A\nnode B\nedge A X\nedge A Y\nedge X Y\n");
        let sets = find_backdoor_adjustment_sets(&fork, "X", "Y", 2).unwrap();
        assert_eq!(sets, vec![vec!["A".to_string()], vec!["A".to_string(), "B".to_string()]]);
    }
}
