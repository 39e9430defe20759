//! Tabular structural causal models used as ground truth: ancestral sampling,
//! and exact interventional distributions computed over the full graph
//! including latent nodes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Binning;
use crate::dataset::{DiscreteDataset, Provenance};
use crate::error::{Error, Result};
use crate::factors::{DiscreteVariable, Factor};
use crate::graph::{CausalGraph, NodeKind, Relation};
use crate::inference::{Cpt, FactorizedModel};
use crate::presets;

const BLOCK_ROWS: usize = 4096;

/// A causal model with one conditional table per node over all of its parents.
#[derive(Clone, Debug)]
pub struct ScmSpec {
    name: String,
    graph: CausalGraph,
    variables: BTreeMap<String, DiscreteVariable>,
    mechanisms: BTreeMap<String, Cpt>,
}

#[derive(Serialize, Deserialize)]
struct MechanismDoc {
    node: String,
    scope: Vec<String>,
    table: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScmDocument {
    name: String,
    graph: String,
    variables: Vec<DiscreteVariable>,
    mechanisms: Vec<MechanismDoc>,
}

impl ScmSpec {
    /// `mechanisms` must cover every node; latent nodes take parentless tables.
    pub fn new(name: impl Into<String>, graph: CausalGraph, mechanisms: Vec<Cpt>) -> Result<Self> {
        let mut variables = BTreeMap::new();
        let mut by_node = BTreeMap::new();
        for m in mechanisms {
            let parents = graph.relatives(&m.child, Relation::Parents)?;
            let declared: std::collections::BTreeSet<String> = m.parents.iter().cloned().collect();
            if declared != parents {
                return Err(Error::InvalidArgument(format!(
                    "mechanism for `{}` conditions on {:?}, graph parents are {:?}",
                    m.child, declared, parents
                )));
            }
            for v in m.factor.scope() {
                if let Some(prev) = variables.insert(v.name().to_string(), v.clone()) {
                    if prev != *v {
                        return Err(Error::InvalidArgument(format!(
                            "variable `{}` is declared inconsistently",
                            v.name()
                        )));
                    }
                }
            }
            if by_node.insert(m.child.clone(), m).is_some() {
                return Err(Error::InvalidArgument("two mechanisms for one node".into()));
            }
        }
        for (node, _) in graph.nodes() {
            if !by_node.contains_key(node) {
                return Err(Error::InvalidArgument(format!("no mechanism for `{node}`")));
            }
        }
        let spec = ScmSpec {
            name: name.into(),
            graph,
            variables,
            mechanisms: by_node,
        };
        // row normalisation is checked by the model constructor
        spec.joint_model()?;
        Ok(spec)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn graph(&self) -> &CausalGraph {
        &self.graph
    }

    pub fn variable(&self, name: &str) -> Result<&DiscreteVariable> {
        self.variables
            .get(name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn mechanism(&self, node: &str) -> Result<&Cpt> {
        self.mechanisms
            .get(node)
            .ok_or_else(|| Error::UnknownNode(node.to_string()))
    }

    /// The joint over every node, latents included, as an inference model.
    fn full_model_with(&self, mechanisms: Vec<Cpt>) -> Result<FactorizedModel> {
        let nodes = self.graph.nodes().map(|(n, _)| (n.to_string(), NodeKind::Observed));
        let open = CausalGraph::new(nodes, self.graph.edges())?;
        FactorizedModel::new(open, mechanisms)
    }

    /// The mechanisms as one model over every node, latents included as
    /// ordinary variables. Its marginals are the exact observational ones.
    pub fn joint_model(&self) -> Result<FactorizedModel> {
        self.full_model_with(self.mechanisms.values().cloned().collect())
    }

    fn intervened(&self, intervention: &[(&str, &str)]) -> Result<FactorizedModel> {
        let mut mechs = self.mechanisms.clone();
        for &(node, label) in intervention {
            let kind = self.graph.kind(node)?;
            if kind == NodeKind::Latent {
                return Err(Error::InvalidArgument(format!("cannot intervene on latent `{node}`")));
            }
            let var = self.variable(node)?;
            let state = var.state_index(label)?;
            let m = mechs.get_mut(node).unwrap();
            let scope: Vec<DiscreteVariable> = m.factor.scope().to_vec();
            let pos = scope.iter().position(|v| v.name() == node).unwrap();
            let stride: usize = scope[pos + 1..].iter().map(|v| v.cardinality()).product();
            let card = var.cardinality();
            let values = (0..m.factor.values().len())
                .map(|i| if (i / stride) % card == state { 1.0 } else { 0.0 })
                .collect();
            m.factor = Factor::new(scope, values)?;
        }
        self.full_model_with(mechs.into_values().collect())
    }

    /// `P(query | evidence)` after setting each intervened node to a fixed state.
    pub fn interventional_query(
        &self,
        intervention: &[(&str, &str)],
        query: &[&str],
        evidence: &[(&str, &str)],
    ) -> Result<Factor> {
        self.intervened(intervention)?.query_labeled(query, evidence)
    }

    /// `P(query | do(intervention))`, exact.
    pub fn exact_interventional(&self, intervention: &[(&str, &str)], query: &str) -> Result<Vec<f64>> {
        Ok(self.interventional_query(intervention, &[query], &[])?.values().to_vec())
    }

    /// Observational `P(query | evidence)`, exact.
    pub fn exact_conditional(&self, query: &[&str], evidence: &[(&str, &str)]) -> Result<Factor> {
        self.joint_model()?.query_labeled(query, evidence)
    }

    /// Samples `n` rows of every node, in topological order, one random stream
    /// per block of rows. Columns are keyed by node name.
    pub fn sample_full(&self, n: usize, seed: u64) -> Result<BTreeMap<String, Vec<u32>>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be at least 1".into()));
        }
        let order: Vec<&str> = self.graph.topological_order();
        let pos: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        struct Plan<'a> {
            values: &'a [f64],
            parents: Vec<(usize, usize)>,
            stride: usize,
            card: usize,
        }
        let plans: Vec<Plan> = order
            .iter()
            .map(|node| {
                let f = &self.mechanisms[*node].factor;
                let cards: Vec<usize> = f.scope().iter().map(|v| v.cardinality()).collect();
                let mut stride = 1;
                let mut strides = vec![0; cards.len()];
                for i in (0..cards.len()).rev() {
                    strides[i] = stride;
                    stride *= cards[i];
                }
                let mut parents = Vec::new();
                let mut own = (0, 0);
                for (i, v) in f.scope().iter().enumerate() {
                    if v.name() == *node {
                        own = (strides[i], cards[i]);
                    } else {
                        parents.push((pos[v.name()], strides[i]));
                    }
                }
                Plan {
                    values: f.values(),
                    parents,
                    stride: own.0,
                    card: own.1,
                }
            })
            .collect();

        let blocks = n.div_ceil(BLOCK_ROWS);
        let sampled: Vec<Vec<Vec<u32>>> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let rows = BLOCK_ROWS.min(n - b * BLOCK_ROWS);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b as u64);
                let mut cols = vec![Vec::with_capacity(rows); plans.len()];
                let mut row = vec![0usize; plans.len()];
                for _ in 0..rows {
                    for (i, p) in plans.iter().enumerate() {
                        let base: usize = p.parents.iter().map(|&(j, s)| row[j] * s).sum();
                        let u: f64 = rng.gen();
                        let mut acc = 0.0;
                        let mut pick = p.card - 1;
                        for s in 0..p.card {
                            acc += p.values[base + s * p.stride];
                            if u < acc {
                                pick = s;
                                break;
                            }
                        }
                        // never land on a zero-probability state through rounding
                        while p.values[base + pick * p.stride] == 0.0 && pick > 0 {
                            pick -= 1;
                        }
                        row[i] = pick;
                        cols[i].push(pick as u32);
                    }
                }
                cols
            })
            .collect();
        let mut out: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        for (i, node) in order.iter().enumerate() {
            let mut col = Vec::with_capacity(n);
            for block in &sampled {
                col.extend_from_slice(&block[i]);
            }
            out.insert(node.to_string(), col);
        }
        Ok(out)
    }

    /// Observed-node sample as a dataset; latent and selection columns are dropped.
    pub fn sample_observational(&self, n: usize, seed: u64) -> Result<DiscreteDataset> {
        let mut full = self.sample_full(n, seed)?;
        let observed = self.graph.nodes_of_kind(NodeKind::Observed);
        let mut columns = BTreeMap::new();
        let mut variables = Vec::new();
        for node in observed {
            columns.insert(node.to_string(), full.remove(node).unwrap());
            variables.push(self.variable(node)?.clone());
        }
        let provenance = Provenance {
            source: format!("scm:{}", self.name),
            seed: Some(seed),
            transforms: vec![format!("sample_observational n={n}")],
        };
        Ok(DiscreteDataset::new(variables, columns, None)?.with_provenance(provenance))
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ScmDocument {
            name: self.name.clone(),
            graph: self.graph.to_spec(),
            variables: self.variables.values().cloned().collect(),
            mechanisms: self
                .mechanisms
                .values()
                .map(|m| MechanismDoc {
                    node: m.child.clone(),
                    scope: m.factor.scope().iter().map(|v| v.name().to_string()).collect(),
                    table: m.factor.values().to_vec(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScmDocument = serde_json::from_str(text)?;
        let graph = CausalGraph::from_spec(&doc.graph)?;
        let catalog: BTreeMap<&str, &DiscreteVariable> = doc.variables.iter().map(|v| (v.name(), v)).collect();
        let mut mechanisms = Vec::with_capacity(doc.mechanisms.len());
        for m in doc.mechanisms {
            let scope = m
                .scope
                .iter()
                .map(|n| catalog.get(n.as_str()).map(|v| (*v).clone()).ok_or_else(|| Error::UnknownVariable(n.clone())))
                .collect::<Result<Vec<_>>>()?;
            let parents = m.scope.iter().filter(|n| **n != m.node).cloned().collect();
            mechanisms.push(Cpt {
                child: m.node,
                parents,
                factor: Factor::new(scope, m.table)?,
            });
        }
        ScmSpec::new(doc.name, graph, mechanisms)
    }
}

/// Built-in ground-truth models over the ehs-fp graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    /// Treatment has no effect on anything downstream.
    NullEffect,
    /// Insulation lowers gas use directly and through heating cost, with the
    /// direct saving shrinking as energy burden rises; latents confound.
    ConfoundedRebound,
    /// As above but treatment is assigned at random.
    Unconfounded,
}

impl ReferenceKind {
    pub const ALL: [ReferenceKind; 3] = [
        ReferenceKind::NullEffect,
        ReferenceKind::ConfoundedRebound,
        ReferenceKind::Unconfounded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReferenceKind::NullEffect => "null-effect",
            ReferenceKind::ConfoundedRebound => "confounded-rebound",
            ReferenceKind::Unconfounded => "unconfounded",
        }
    }
}

impl fmt::Display for ReferenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReferenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReferenceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind `{s}`")))
    }
}

/// The committed reference model of `kind`, generated with seed 0.
pub fn fixture(kind: ReferenceKind) -> Result<ScmSpec> {
    let text = match kind {
        ReferenceKind::NullEffect => include_str!("../fixtures/scm_null_effect.json"),
        ReferenceKind::ConfoundedRebound => include_str!("../fixtures/scm_confounded_rebound.json"),
        ReferenceKind::Unconfounded => include_str!("../fixtures/scm_unconfounded.json"),
    };
    ScmSpec::from_json(text)
}

/// Burden bins used by the reference models: five 3-point bins over [0, 0.15].
pub fn reference_burden_bins() -> Binning {
    Binning::equal_width(0.0, 0.15, 5).expect("valid range")
}

/// Gas-use bins used by the reference models: eight 5 MWh bins over [0, 40000] kWh/yr.
pub fn reference_outcome_bins() -> Binning {
    Binning::equal_width(0.0, 40_000.0, 8).expect("valid range")
}

struct Tables<'a> {
    graph: &'a CausalGraph,
    vars: BTreeMap<&'static str, DiscreteVariable>,
    out: Vec<Cpt>,
}

impl<'a> Tables<'a> {
    /// Adds `P(child | parents)`, with `row` mapping a parent lookup to unnormalised weights.
    fn add<F>(&mut self, child: &'static str, row: F) -> Result<()>
    where
        F: Fn(&dyn Fn(&str) -> usize) -> Vec<f64>,
    {
        let parents: Vec<String> = self.graph.relatives(child, Relation::Parents)?.into_iter().collect();
        let pvars: Vec<DiscreteVariable> = parents
            .iter()
            .map(|p| self.vars.get(p.as_str()).cloned().ok_or_else(|| Error::UnknownVariable(p.clone())))
            .collect::<Result<_>>()?;
        let cvar = self.vars[child].clone();
        let n_rows: usize = pvars.iter().map(|v| v.cardinality()).product();
        let mut values = Vec::with_capacity(n_rows * cvar.cardinality());
        let mut states = vec![0usize; pvars.len()];
        for _ in 0..n_rows {
            let lookup = |name: &str| -> usize {
                let i = parents.iter().position(|p| p == name).unwrap_or_else(|| panic!("`{name}` is not a parent of `{child}`"));
                states[i]
            };
            let w = row(&lookup);
            assert_eq!(w.len(), cvar.cardinality(), "row width for `{child}`");
            let total: f64 = w.iter().sum();
            values.extend(w.iter().map(|x| x / total));
            for i in (0..states.len()).rev() {
                states[i] += 1;
                if states[i] < pvars[i].cardinality() {
                    break;
                }
                states[i] = 0;
            }
        }
        let mut scope = pvars;
        scope.push(cvar);
        self.out.push(Cpt {
            child: child.to_string(),
            parents,
            factor: Factor::new(scope, values)?,
        });
        Ok(())
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    logits.iter().map(|l| (l - m).exp()).collect()
}

/// Ordinal logits `(s - mid) * slope` over `k` states.
fn ordinal(k: usize, slope: f64) -> Vec<f64> {
    let mid = (k as f64 - 1.0) / 2.0;
    softmax(&(0..k).map(|s| (s as f64 - mid) * slope).collect::<Vec<_>>())
}

fn bernoulli(p: f64) -> Vec<f64> {
    vec![1.0 - p, p]
}

/// A reference model. `seed` jitters the nuisance mechanisms only; the
/// treatment, burden and outcome mechanisms are fixed.
pub fn reference_scm(kind: ReferenceKind, seed: u64) -> Result<ScmSpec> {
    let mut graph = presets::ehs_fp();
    if kind == ReferenceKind::Unconfounded {
        graph = graph.without_edge("V2", "X")?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.gen_range(-0.25..0.25)).collect() };

    let w_bins = reference_burden_bins();
    let y_bins = reference_outcome_bins();
    let indexed = |n: &str, k: usize| DiscreteVariable::indexed(n, k).unwrap();
    let mut vars: BTreeMap<&'static str, DiscreteVariable> = BTreeMap::new();
    for u in ["U0", "U1", "U2", "U3", "U4", "U5"] {
        vars.insert(u, indexed(u, 2));
    }
    for (n, k) in [("V0", 3), ("V3", 3), ("V4", 2), ("V5", 3), ("V6", 3), ("V8", 3)] {
        vars.insert(n, indexed(n, k));
    }
    vars.insert("V2", DiscreteVariable::new("V2", ["owner", "renter"])?);
    vars.insert("X", DiscreteVariable::binary("X"));
    vars.insert("V7", DiscreteVariable::with_values("V7", [("low", 12_000.0), ("mid", 24_000.0), ("high", 48_000.0)])?);
    vars.insert("V9", DiscreteVariable::with_values("V9", [("low", 0.035), ("high", 0.045)])?);
    vars.insert("V10", DiscreteVariable::with_values("V10", [("low", 400.0), ("high", 800.0)])?);
    vars.insert("V1", DiscreteVariable::with_values("V1", [("low", 400.0), ("mid", 800.0), ("high", 1200.0)])?);
    vars.insert("W", w_bins.variable("W")?);
    vars.insert("Y0", y_bins.variable("Y0")?);

    let j_v0 = jitter(3);
    let j_v3 = jitter(3);
    let j_v5 = jitter(3);
    let j_v8 = jitter(3);
    let j_v6 = jitter(1)[0];
    let j_v1 = jitter(1)[0];
    let effect = kind != ReferenceKind::NullEffect;

    let v1_values = vars["V1"].representatives()?;
    let v7_values = vars["V7"].representatives()?;
    let v10_values = vars["V10"].representatives()?;
    let y_mid = y_bins.bins().iter().map(|b| b.midpoint).collect::<Vec<_>>();

    let mut t = Tables {
        graph: &graph,
        vars,
        out: Vec::new(),
    };
    t.add("U0", |_| bernoulli(0.5))?;
    t.add("U1", |_| bernoulli(0.5))?;
    t.add("U2", |_| bernoulli(0.4))?;
    t.add("U3", |_| bernoulli(0.5))?;
    t.add("U4", |_| bernoulli(0.3))?;
    t.add("U5", |_| bernoulli(0.3))?;
    t.add("V0", |_| softmax(&j_v0))?;
    t.add("V8", |_| softmax(&[0.4 + j_v8[0], 0.2 + j_v8[1], j_v8[2]]))?;
    t.add("V3", |p| {
        let u = p("U3") as f64;
        softmax(&[u + j_v3[0], j_v3[1], -u + j_v3[2]])
    })?;
    t.add("V7", |p| {
        let slope = 2.8 * p("U2") as f64 - 0.7 + 0.3 * p("U1") as f64 - 0.3 * p("U3") as f64
            + 0.2 * (p("V8") as f64 - 1.0);
        ordinal(3, slope)
    })?;
    t.add("V2", |p| bernoulli([0.85, 0.45, 0.08][p("V7")]))?;
    if kind == ReferenceKind::Unconfounded {
        t.add("X", |_| bernoulli(0.45))?;
    } else {
        t.add("X", |p| bernoulli([0.06, 0.85][p("V2")]))?;
    }
    t.add("V5", |p| {
        let mut l = ordinal(3, 0.3 * (p("V7") as f64 - 1.0));
        l.iter_mut().zip(&j_v5).for_each(|(a, j)| *a *= j.exp());
        l
    })?;
    t.add("V6", |p| {
        ordinal(
            3,
            0.8 * (p("V7") as f64 - 1.0) + 0.5 * p("U0") as f64 + 0.2 * (p("V3") as f64 - 1.0) + j_v6,
        )
    })?;
    t.add("V4", |p| bernoulli(0.15 + 0.4 * p("U4") as f64 + 0.1 * (p("V8") == 0) as u8 as f64))?;
    t.add("V9", |p| bernoulli(0.4 + 0.2 * p("U0") as f64))?;
    t.add("V10", |p| bernoulli(0.35 + 0.3 * p("U1") as f64))?;
    t.add("V1", |p| {
        let x = if effect { p("X") as f64 } else { 0.0 };
        ordinal(
            3,
            0.6 * (p("V6") as f64 - 1.0)
                + 0.3 * (p("V3") as f64 - 1.0)
                + 0.2 * (p("V5") as f64 - 1.0)
                + 0.4 * p("V9") as f64
                + 0.1 * (p("V0") as f64 - 1.0)
                + 0.1 * (p("V8") as f64 - 1.0)
                - 0.8 * x
                + j_v1,
        )
    })?;
    t.add("W", |p| {
        let ratio = (v1_values[p("V1")] + v10_values[p("V10")]) / v7_values[p("V7")];
        let mut row = vec![0.0; w_bins.len()];
        row[w_bins.assign(ratio)] = 1.0;
        row
    })?;
    t.add("Y0", |p| {
        let w = p("W") as f64;
        let x = if effect { p("X") as f64 } else { 0.0 };
        let mu = 15_000.0 + 2_000.0 * (p("V6") as f64 - 1.0) + 800.0 * (p("V8") as f64 - 1.0)
            + 1_500.0 * p("V4") as f64
            + 7_000.0 * p("U2") as f64
            + 1_000.0 * p("U4") as f64
            + 2_500.0 * p("U5") as f64
            + 700.0 * (w - 2.0).max(0.0)
            - x * (8_000.0 - 1_750.0 * w);
        let sd = 4_500.0;
        y_mid.iter().map(|m| (-(m - mu).powi(2) / (2.0 * sd * sd)).exp()).collect()
    })?;
    let mechanisms = t.out;
    ScmSpec::new(kind.as_str(), graph, mechanisms)
}
