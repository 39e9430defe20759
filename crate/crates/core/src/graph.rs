//! Causal DAGs with typed nodes.
//!
//! A [`CausalGraph`] is immutable once built. Mutilation and augmentation
//! return new graphs. Node indices follow lexicographic name order, so every
//! traversal that walks neighbour lists in index order is deterministic and
//! emits paths in lexicographic order of their node sequences.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Observed,
    Latent,
    Selection,
}

impl NodeKind {
    fn keyword(self) -> Option<&'static str> {
        match self {
            NodeKind::Observed => None,
            NodeKind::Latent => Some("latent"),
            NodeKind::Selection => Some("selection"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    Parents,
    Children,
    Ancestors,
    Descendants,
}

/// Direction of one step along a path, relative to the order of traversal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Step {
    /// `nodes[i] -> nodes[i + 1]`
    Forward,
    /// `nodes[i] <- nodes[i + 1]`
    Backward,
}

/// A simple path in the skeleton of a graph.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path {
    pub nodes: Vec<String>,
    pub steps: Vec<Step>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Whether the interior node at position `i` has both adjacent edges pointing into it.
    pub fn is_collider(&self, i: usize) -> bool {
        i > 0
            && i + 1 < self.nodes.len()
            && self.steps[i - 1] == Step::Forward
            && self.steps[i] == Step::Backward
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, node) in self.nodes.iter().enumerate() {
            if i > 0 {
                let arrow = match self.steps[i - 1] {
                    Step::Forward => " -> ",
                    Step::Backward => " <- ",
                };
                f.write_str(arrow)?;
            }
            f.write_str(node)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalGraph {
    names: Vec<String>,
    kinds: Vec<NodeKind>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl CausalGraph {
    /// Builds and validates a graph.
    pub fn new<N, E, S, T>(nodes: N, edges: E) -> Result<Self>
    where
        N: IntoIterator<Item = (S, NodeKind)>,
        E: IntoIterator<Item = (T, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        let mut declared: Vec<(String, NodeKind)> =
            nodes.into_iter().map(|(n, k)| (n.into(), k)).collect();
        declared.sort();
        for pair in declared.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::DuplicateNode(pair[0].0.clone()));
            }
        }
        let index: HashMap<String, usize> = declared
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        let n = declared.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for (p, c) in edges {
            let (p, c) = (p.as_ref(), c.as_ref());
            let pi = *index.get(p).ok_or_else(|| Error::UnknownNode(p.to_string()))?;
            let ci = *index.get(c).ok_or_else(|| Error::UnknownNode(c.to_string()))?;
            parents[ci].push(pi);
            children[pi].push(ci);
        }
        for list in parents.iter_mut().chain(children.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        let (names, kinds) = declared.into_iter().unzip();
        let graph = CausalGraph {
            names,
            kinds,
            index,
            parents,
            children,
        };
        graph.validate()?;
        Ok(graph)
    }

    fn validate(&self) -> Result<()> {
        if let Some(cycle) = self.find_cycle() {
            return Err(Error::Cycle(cycle));
        }
        let mut selection = None;
        for i in 0..self.len() {
            match self.kinds[i] {
                NodeKind::Latent if !self.parents[i].is_empty() => {
                    return Err(Error::InvalidGraph(format!(
                        "latent node `{}` has parents",
                        self.names[i]
                    )));
                }
                NodeKind::Selection => {
                    if !self.children[i].is_empty() {
                        return Err(Error::InvalidGraph(format!(
                            "selection node `{}` has children",
                            self.names[i]
                        )));
                    }
                    if let Some(prev) = selection.replace(i) {
                        return Err(Error::DuplicateSelection(self.names[prev].clone()));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn find_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        let mut mark = vec![Mark::White; self.len()];
        let mut stack: Vec<usize> = Vec::new();
        for root in 0..self.len() {
            if mark[root] != Mark::White {
                continue;
            }
            // (node, next child position)
            let mut frames = vec![(root, 0usize)];
            mark[root] = Mark::Grey;
            stack.push(root);
            while let Some(&mut (u, ref mut pos)) = frames.last_mut() {
                if let Some(&v) = self.children[u].get(*pos) {
                    *pos += 1;
                    match mark[v] {
                        Mark::White => {
                            mark[v] = Mark::Grey;
                            stack.push(v);
                            frames.push((v, 0));
                        }
                        Mark::Grey => {
                            let start = stack.iter().position(|&s| s == v).unwrap();
                            let mut cycle: Vec<String> =
                                stack[start..].iter().map(|&s| self.names[s].clone()).collect();
                            cycle.push(self.names[v].clone());
                            return Some(cycle);
                        }
                        Mark::Black => {}
                    }
                } else {
                    mark[u] = Mark::Black;
                    stack.pop();
                    frames.pop();
                }
            }
        }
        None
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, parent: &str, child: &str) -> bool {
        match (self.index.get(parent), self.index.get(child)) {
            (Some(&p), Some(&c)) => self.children[p].binary_search(&c).is_ok(),
            _ => false,
        }
    }

    pub fn kind(&self, name: &str) -> Result<NodeKind> {
        Ok(self.kinds[self.id(name)?])
    }

    /// Nodes in name order.
    pub fn nodes(&self) -> impl Iterator<Item = (&str, NodeKind)> + '_ {
        self.names
            .iter()
            .zip(&self.kinds)
            .map(|(n, &k)| (n.as_str(), k))
    }

    pub fn nodes_of_kind(&self, kind: NodeKind) -> Vec<&str> {
        self.nodes()
            .filter(|&(_, k)| k == kind)
            .map(|(n, _)| n)
            .collect()
    }

    /// Edges sorted lexicographically by (parent, child).
    pub fn edges(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (p, kids) in self.children.iter().enumerate() {
            for &c in kids {
                out.push((self.names[p].as_str(), self.names[c].as_str()));
            }
        }
        out
    }

    pub fn selection_node(&self) -> Option<&str> {
        self.nodes()
            .find(|&(_, k)| k == NodeKind::Selection)
            .map(|(n, _)| n)
    }

    /// Kahn order with ties broken by name.
    pub fn topological_order(&self) -> Vec<&str> {
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..self.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.len());
        while let Some(u) = ready.pop_first() {
            order.push(self.names[u].as_str());
            for &c in &self.children[u] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        order
    }

    pub(crate) fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub(crate) fn ids<I, S>(&self, names: I) -> Result<BTreeSet<usize>>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        names.into_iter().map(|n| self.id(n.as_ref())).collect()
    }

    pub(crate) fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    fn names_of(&self, ids: impl IntoIterator<Item = usize>) -> BTreeSet<String> {
        ids.into_iter().map(|i| self.names[i].clone()).collect()
    }

    fn neighbours(&self, u: usize) -> Vec<(usize, Step)> {
        let mut out: Vec<(usize, Step)> = self.children[u]
            .iter()
            .map(|&c| (c, Step::Forward))
            .chain(self.parents[u].iter().map(|&p| (p, Step::Backward)))
            .collect();
        out.sort_unstable_by_key(|&(v, _)| v);
        out
    }

    /// Builds a new graph from this one's nodes and a filtered or extended edge list.
    fn rebuild(
        &self,
        extra_nodes: Vec<(String, NodeKind)>,
        keep: impl Fn(usize, usize) -> bool,
        extra_edges: Vec<(String, String)>,
    ) -> Result<CausalGraph> {
        let nodes = self
            .nodes()
            .map(|(n, k)| (n.to_string(), k))
            .chain(extra_nodes);
        let mut edges: Vec<(String, String)> = Vec::new();
        for (p, kids) in self.children.iter().enumerate() {
            for &c in kids {
                if keep(p, c) {
                    edges.push((self.names[p].clone(), self.names[c].clone()));
                }
            }
        }
        edges.extend(extra_edges);
        CausalGraph::new(nodes, edges)
    }

    /// Removes every edge pointing into a node of `targets`.
    pub fn mutilate_incoming<I, S>(&self, targets: I) -> Result<CausalGraph>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let t = self.ids(targets)?;
        self.rebuild(Vec::new(), |_, c| !t.contains(&c), Vec::new())
    }

    /// Removes every edge leaving a node of `targets`.
    pub fn mutilate_outgoing<I, S>(&self, targets: I) -> Result<CausalGraph>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let t = self.ids(targets)?;
        self.rebuild(Vec::new(), |p, _| !t.contains(&p), Vec::new())
    }

    /// Adds a selection node `S` with an edge from each of `parents`.
    pub fn augment_selection<I, S>(&self, parents: I) -> Result<CausalGraph>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if let Some(existing) = self.selection_node() {
            return Err(Error::DuplicateSelection(existing.to_string()));
        }
        let parents = self.ids(parents)?;
        for &p in &parents {
            if self.kinds[p] != NodeKind::Observed {
                return Err(Error::InvalidGraph(format!(
                    "selection parent `{}` is not observed",
                    self.names[p]
                )));
            }
        }
        let edges = parents
            .iter()
            .map(|&p| (self.names[p].clone(), SELECTION_NODE.to_string()))
            .collect();
        self.rebuild(
            vec![(SELECTION_NODE.to_string(), NodeKind::Selection)],
            |_, _| true,
            edges,
        )
    }

    /// Returns a copy with one extra edge. Fails if the edge would break an invariant.
    pub fn with_edge(&self, parent: &str, child: &str) -> Result<CausalGraph> {
        self.id(parent)?;
        self.id(child)?;
        self.rebuild(
            Vec::new(),
            |_, _| true,
            vec![(parent.to_string(), child.to_string())],
        )
    }

    /// Returns a copy without the edge `parent -> child`.
    pub fn without_edge(&self, parent: &str, child: &str) -> Result<CausalGraph> {
        let (p, c) = (self.id(parent)?, self.id(child)?);
        if !self.parents[c].contains(&p) {
            return Err(Error::InvalidArgument(format!("no edge {parent} -> {child}")));
        }
        self.rebuild(Vec::new(), |a, b| (a, b) != (p, c), Vec::new())
    }

    /// Marginalises every node outside `keep`. Kept nodes get an edge `a -> b`
    /// when `a` reaches `b` through dropped nodes only, and a fresh latent parent
    /// `L_a_b` when some dropped node reaches both that way.
    pub fn latent_projection<I, S>(&self, keep: I) -> Result<CausalGraph>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let keep = self.ids(keep)?;
        if let Some(&l) = keep.iter().find(|&&u| self.kinds[u] == NodeKind::Latent) {
            return Err(Error::InvalidArgument(format!(
                "cannot keep latent node `{}` in a projection",
                self.names[l]
            )));
        }
        // kept nodes reachable from u along directed paths whose interior is dropped
        let reach = |u: usize| -> BTreeSet<usize> {
            let mut out = BTreeSet::new();
            let mut seen = BTreeSet::new();
            let mut stack: Vec<usize> = self.children[u].clone();
            while let Some(v) = stack.pop() {
                if !seen.insert(v) {
                    continue;
                }
                if keep.contains(&v) {
                    out.insert(v);
                } else {
                    stack.extend(&self.children[v]);
                }
            }
            out
        };
        let mut edges: Vec<(String, String)> = Vec::new();
        let mut nodes: Vec<(String, NodeKind)> =
            keep.iter().map(|&u| (self.names[u].clone(), self.kinds[u])).collect();
        for &a in &keep {
            for b in reach(a) {
                edges.push((self.names[a].clone(), self.names[b].clone()));
            }
        }
        let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
        for d in (0..self.len()).filter(|d| !keep.contains(d)) {
            let r: Vec<usize> = reach(d).into_iter().collect();
            for (i, &a) in r.iter().enumerate() {
                for &b in &r[i + 1..] {
                    pairs.insert((a, b));
                }
            }
        }
        for (a, b) in pairs {
            let mut name = format!("L_{}_{}", self.names[a], self.names[b]);
            while self.index.contains_key(&name) {
                name.push('_');
            }
            edges.push((name.clone(), self.names[a].clone()));
            edges.push((name.clone(), self.names[b].clone()));
            nodes.push((name, NodeKind::Latent));
        }
        CausalGraph::new(nodes, edges)
    }

    pub fn relatives(&self, node: &str, relation: Relation) -> Result<BTreeSet<String>> {
        let u = self.id(node)?;
        let ids = match relation {
            Relation::Parents => self.parents[u].iter().copied().collect(),
            Relation::Children => self.children[u].iter().copied().collect(),
            Relation::Ancestors => {
                let mut s = self.closure(&[u], &self.parents);
                s.remove(&u);
                s
            }
            Relation::Descendants => {
                let mut s = self.closure(&[u], &self.children);
                s.remove(&u);
                s
            }
        };
        Ok(self.names_of(ids))
    }

    /// Reflexive closure of `seeds` under the given adjacency.
    fn closure(&self, seeds: &[usize], adj: &[Vec<usize>]) -> BTreeSet<usize> {
        let mut seen: BTreeSet<usize> = seeds.iter().copied().collect();
        let mut queue: VecDeque<usize> = seeds.iter().copied().collect();
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    pub(crate) fn ancestors_inclusive(&self, seeds: &BTreeSet<usize>) -> BTreeSet<usize> {
        let seeds: Vec<usize> = seeds.iter().copied().collect();
        self.closure(&seeds, &self.parents)
    }

    pub(crate) fn parent_ids(&self, u: usize) -> &[usize] {
        &self.parents[u]
    }

    pub(crate) fn child_ids(&self, u: usize) -> &[usize] {
        &self.children[u]
    }

    fn path_from(&self, ids: &[usize]) -> Path {
        let steps = ids
            .windows(2)
            .map(|w| {
                if self.children[w[0]].binary_search(&w[1]).is_ok() {
                    Step::Forward
                } else {
                    Step::Backward
                }
            })
            .collect();
        Path {
            nodes: ids.iter().map(|&i| self.names[i].clone()).collect(),
            steps,
        }
    }

    /// Depth-first enumeration of simple skeleton paths from `from` to `to`.
    /// `first` filters the first step; `extend` decides whether a partial path
    /// may continue through its current last node given the next step.
    fn walk_paths<F, G>(&self, from: usize, to: &BTreeSet<usize>, first: F, mut extend: G, limit: Option<usize>) -> Vec<Path>
    where
        F: Fn(Step) -> bool,
        G: FnMut(usize, Step, Step) -> bool,
    {
        let mut out = Vec::new();
        let mut on_path = vec![false; self.len()];
        on_path[from] = true;
        let mut trail = vec![from];
        let mut arrived: Vec<Step> = Vec::new();
        let mut frames: Vec<(Vec<(usize, Step)>, usize)> = vec![(self.neighbours(from), 0)];
        while let Some((nbrs, pos)) = frames.last_mut() {
            if limit.is_some_and(|l| out.len() >= l) {
                break;
            }
            let Some(&(v, step)) = nbrs.get(*pos) else {
                frames.pop();
                if let Some(u) = trail.pop() {
                    on_path[u] = false;
                }
                arrived.pop();
                continue;
            };
            *pos += 1;
            if on_path[v] {
                continue;
            }
            let u = *trail.last().unwrap();
            let allowed = match arrived.last() {
                None => first(step),
                Some(&prev) => extend(u, prev, step),
            };
            if !allowed {
                continue;
            }
            if to.contains(&v) {
                trail.push(v);
                out.push(self.path_from(&trail));
                trail.pop();
                continue;
            }
            on_path[v] = true;
            trail.push(v);
            arrived.push(step);
            frames.push((self.neighbours(v), 0));
        }
        out
    }

    /// All simple paths between `a` and `b` in the skeleton, in lexicographic order.
    pub fn enumerate_simple_paths(&self, a: &str, b: &str) -> Result<Vec<Path>> {
        let (ai, bi) = (self.id(a)?, self.id(b)?);
        if ai == bi {
            return Err(Error::InvalidArgument(format!("path endpoints are both `{a}`")));
        }
        let to = BTreeSet::from([bi]);
        Ok(self.walk_paths(ai, &to, |_| true, |_, _, _| true, None))
    }

    /// Simple paths from `x` to `y` whose first edge points into `x`.
    pub fn enumerate_backdoor_paths(&self, x: &str, y: &str) -> Result<Vec<Path>> {
        let (xi, yi) = (self.id(x)?, self.id(y)?);
        if xi == yi {
            return Err(Error::InvalidArgument(format!("path endpoints are both `{x}`")));
        }
        let to = BTreeSet::from([yi]);
        Ok(self.walk_paths(xi, &to, |s| s == Step::Backward, |_, _, _| true, None))
    }

    fn check_disjoint(&self, sets: &[&BTreeSet<usize>]) -> Result<()> {
        for (i, s) in sets.iter().enumerate() {
            for t in &sets[i + 1..] {
                if let Some(&shared) = s.intersection(t).next() {
                    return Err(Error::OverlappingSets(self.names[shared].clone()));
                }
            }
        }
        Ok(())
    }

    /// d-separation of `a` and `b` given `z`, decided by reachability.
    pub fn d_separated<A, B, Z, S1, S2, S3>(&self, a: A, b: B, z: Z) -> Result<bool>
    where
        A: IntoIterator<Item = S1>,
        B: IntoIterator<Item = S2>,
        Z: IntoIterator<Item = S3>,
        S1: AsRef<str>,
        S2: AsRef<str>,
        S3: AsRef<str>,
    {
        let (a, b, z) = (self.ids(a)?, self.ids(b)?, self.ids(z)?);
        self.check_disjoint(&[&a, &b, &z])?;
        let reach = self.reachable(&a, &z);
        Ok(b.iter().all(|&v| !reach[v]))
    }

    /// Nodes d-connected to `sources` given `z` (Bayes-ball over (node, direction) states).
    pub(crate) fn reachable(&self, sources: &BTreeSet<usize>, z: &BTreeSet<usize>) -> Vec<bool> {
        let n = self.len();
        let anc_z = self.ancestors_inclusive(z);
        let in_z: Vec<bool> = (0..n).map(|i| z.contains(&i)).collect();
        // direction 0: arrived from a child (moving up), 1: arrived from a parent (moving down)
        let mut visited = vec![[false; 2]; n];
        let mut reach = vec![false; n];
        let mut queue: VecDeque<(usize, usize)> = sources.iter().map(|&s| (s, 0)).collect();
        while let Some((u, dir)) = queue.pop_front() {
            if visited[u][dir] {
                continue;
            }
            visited[u][dir] = true;
            if !in_z[u] {
                reach[u] = true;
            }
            if dir == 0 {
                if !in_z[u] {
                    queue.extend(self.parents[u].iter().map(|&p| (p, 0)));
                    queue.extend(self.children[u].iter().map(|&c| (c, 1)));
                }
            } else {
                if !in_z[u] {
                    queue.extend(self.children[u].iter().map(|&c| (c, 1)));
                }
                if anc_z.contains(&u) {
                    queue.extend(self.parents[u].iter().map(|&p| (p, 0)));
                }
            }
        }
        reach
    }

    /// Whether the interior node `mid` lets a path through given `z` and its ancestor closure.
    fn passes(&self, mid: usize, arrived: Step, leave: Step, in_z: &[bool], anc_z: &BTreeSet<usize>) -> bool {
        let collider = arrived == Step::Forward && leave == Step::Backward;
        if collider {
            anc_z.contains(&mid)
        } else {
            !in_z[mid]
        }
    }

    /// First (lexicographic) simple path between `a` and `b` that is open given `z`.
    pub fn d_connecting_path<A, B, Z, S1, S2, S3>(&self, a: A, b: B, z: Z) -> Result<Option<Path>>
    where
        A: IntoIterator<Item = S1>,
        B: IntoIterator<Item = S2>,
        Z: IntoIterator<Item = S3>,
        S1: AsRef<str>,
        S2: AsRef<str>,
        S3: AsRef<str>,
    {
        let (a, b, z) = (self.ids(a)?, self.ids(b)?, self.ids(z)?);
        self.check_disjoint(&[&a, &b, &z])?;
        let anc_z = self.ancestors_inclusive(&z);
        let in_z: Vec<bool> = (0..self.len()).map(|i| z.contains(&i)).collect();
        for &start in &a {
            let found = self.walk_paths(
                start,
                &b,
                |_| true,
                |mid, arrived, leave| self.passes(mid, arrived, leave, &in_z, &anc_z),
                Some(1),
            );
            if let Some(p) = found.into_iter().next() {
                return Ok(Some(p));
            }
        }
        Ok(None)
    }

    /// Whether an explicit path is open given `z`.
    pub fn path_is_open<I, S>(&self, path: &Path, z: I) -> Result<bool>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let z = self.ids(z)?;
        let anc_z = self.ancestors_inclusive(&z);
        let in_z: Vec<bool> = (0..self.len()).map(|i| z.contains(&i)).collect();
        for i in 1..path.nodes.len().saturating_sub(1) {
            let mid = self.id(&path.nodes[i])?;
            if !self.passes(mid, path.steps[i - 1], path.steps[i], &in_z, &anc_z) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Parses the line-oriented graph-spec format.
    pub fn from_spec(text: &str) -> Result<Self> {
        let mut nodes: Vec<(String, NodeKind)> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut edges: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let content = raw.split('#').next().unwrap_or("");
            let tokens = tokenize(content);
            let Some(&(col, keyword)) = tokens.first() else {
                continue;
            };
            let err = |column: usize, message: String| Error::Parse {
                line: line_no,
                column,
                message,
            };
            match keyword {
                "node" => {
                    let (ncol, name) = *tokens
                        .get(1)
                        .ok_or_else(|| err(col + keyword.len(), "expected node name".into()))?;
                    check_identifier(name).map_err(|m| err(ncol, m))?;
                    let kind = match tokens.get(2) {
                        None => NodeKind::Observed,
                        Some(&(_, "latent")) => NodeKind::Latent,
                        Some(&(_, "selection")) => NodeKind::Selection,
                        Some(&(kcol, other)) => {
                            return Err(err(kcol, format!("unknown node kind `{other}`")))
                        }
                    };
                    if let Some(&(xcol, extra)) = tokens.get(3) {
                        return Err(err(xcol, format!("unexpected token `{extra}`")));
                    }
                    if seen.insert(name.to_string(), line_no).is_some() {
                        return Err(err(ncol, format!("node `{name}` declared twice")));
                    }
                    nodes.push((name.to_string(), kind));
                }
                "edge" => {
                    if tokens.len() != 3 {
                        return Err(err(col, "expected `edge <parent> <child>`".into()));
                    }
                    for &(c, name) in &tokens[1..] {
                        check_identifier(name).map_err(|m| err(c, m))?;
                    }
                    edges.push((tokens[1].1.to_string(), tokens[2].1.to_string()));
                }
                other => return Err(err(col, format!("unknown directive `{other}`"))),
            }
        }
        CausalGraph::new(nodes, edges)
    }

    /// Canonical text form: nodes by name, then edges sorted lexicographically.
    pub fn to_spec(&self) -> String {
        let mut out = String::new();
        for (name, kind) in self.nodes() {
            out.push_str("node ");
            out.push_str(name);
            if let Some(k) = kind.keyword() {
                out.push(' ');
                out.push_str(k);
            }
            out.push('\n');
        }
        for (p, c) in self.edges() {
            out.push_str(&format!("edge {p} {c}\n"));
        }
        out
    }
}

pub const SELECTION_NODE: &str = "S";

impl FromStr for CausalGraph {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CausalGraph::from_spec(s)
    }
}

impl fmt::Display for CausalGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_spec())
    }
}

/// Whitespace-separated tokens with their 1-based column.
fn tokenize(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((s + 1, &line[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

fn check_identifier(name: &str) -> std::result::Result<(), String> {
    let mut chars = name.chars();
    let ok = chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    if ok {
        Ok(())
    } else {
        Err(format!("`{name}` is not a valid identifier"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> CausalGraph {
        "node A\nnode B\nnode C\nedge A B\nedge B C\n".parse().unwrap()
    }

    fn collider() -> CausalGraph {
        "node A\nnode B\nnode C\nedge A B\nedge C B\n".parse().unwrap()
    }

    #[test]
    fn minimal_spec() {
        let g: CausalGraph = "node A\nnode B\nedge A B".parse().unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.edge_count(), 1);
        assert!(g.has_edge("A", "B"));
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let err = CausalGraph::from_spec("node A\nedge A A\n").unwrap_err();
        assert!(matches!(err, Error::Cycle(ref c) if c == &["A", "A"]), "{err}");
    }

    #[test]
    fn longer_cycle_is_reported() {
        let err = CausalGraph::from_spec("node A\nnode B\nnode C\nedge A B\nedge B C\nedge C A\n")
            .unwrap_err();
        match err {
            Error::Cycle(c) => {
                assert_eq!(c.first(), c.last());
                assert_eq!(c.len(), 4);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_edge_endpoint() {
        let err = CausalGraph::from_spec("node A\nedge A B\n").unwrap_err();
        assert!(matches!(err, Error::UnknownNode(ref n) if n == "B"));
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = CausalGraph::from_spec("node A\n  vertex B\n").unwrap_err();
        match err {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (2, 3)),
            other => panic!("unexpected {other}"),
        }
        let err = CausalGraph::from_spec("node A weird\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, column: 8, .. }), "{err}");
        let err = CausalGraph::from_spec("node 1A\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, column: 6, .. }), "{err}");
    }

    #[test]
    fn comments_and_kinds() {
        let g = CausalGraph::from_spec("# header\nnode U latent # hidden\nnode A\nedge U A\n").unwrap();
        assert_eq!(g.kind("U").unwrap(), NodeKind::Latent);
        assert_eq!(g.kind("A").unwrap(), NodeKind::Observed);
    }

    #[test]
    fn kind_invariants() {
        assert!(matches!(
            CausalGraph::from_spec("node U latent\nnode A\nedge A U\n"),
            Err(Error::InvalidGraph(_))
        ));
        assert!(matches!(
            CausalGraph::from_spec("node S selection\nnode A\nedge S A\n"),
            Err(Error::InvalidGraph(_))
        ));
        assert!(matches!(
            CausalGraph::from_spec("node S selection\nnode T selection\n"),
            Err(Error::DuplicateSelection(_))
        ));
    }

    #[test]
    fn serialization_is_sorted_and_round_trips() {
        let g = CausalGraph::from_spec("node b\nnode a latent\nedge a b\n").unwrap();
        assert_eq!(g.to_spec(), "node a latent\nnode b\nedge a b\n");
        assert_eq!(CausalGraph::from_spec(&g.to_spec()).unwrap(), g);
    }

    #[test]
    fn mutilation() {
        let g = chain();
        let inc = g.mutilate_incoming(["B"]).unwrap();
        assert_eq!(inc.edges(), vec![("B", "C")]);
        let out = g.mutilate_outgoing(["B"]).unwrap();
        assert_eq!(out.edges(), vec![("A", "B")]);
        assert_eq!(g.mutilate_incoming(Vec::<&str>::new()).unwrap(), g);
        assert_eq!(g.mutilate_outgoing(Vec::<&str>::new()).unwrap(), g);
        assert!(matches!(g.mutilate_incoming(["Q"]), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn selection_augmentation() {
        let g = chain();
        let s = g.augment_selection(Vec::<&str>::new()).unwrap();
        assert_eq!(s.kind("S").unwrap(), NodeKind::Selection);
        assert_eq!(s.edge_count(), g.edge_count());
        let s2 = g.augment_selection(["A", "C"]).unwrap();
        let mut expected: Vec<(&str, &str)> = g.edges();
        expected.extend([("A", "S"), ("C", "S")]);
        expected.sort();
        assert_eq!(s2.edges(), expected);
        assert!(matches!(s2.augment_selection(["A"]), Err(Error::DuplicateSelection(_))));
    }

    #[test]
    fn chain_and_collider_separation() {
        let g = chain();
        assert!(g.d_separated(["A"], ["C"], ["B"]).unwrap());
        assert!(!g.d_separated(["A"], ["C"], Vec::<&str>::new()).unwrap());
        let g = collider();
        assert!(g.d_separated(["A"], ["C"], Vec::<&str>::new()).unwrap());
        assert!(!g.d_separated(["A"], ["C"], ["B"]).unwrap());
    }

    #[test]
    fn collider_opened_by_descendant() {
        let g = CausalGraph::from_spec("node A\nnode B\nnode C\nnode D\nedge A B\nedge C B\nedge B D\n")
            .unwrap();
        assert!(!g.d_separated(["A"], ["C"], ["D"]).unwrap());
        let witness = g.d_connecting_path(["A"], ["C"], ["D"]).unwrap().unwrap();
        assert_eq!(witness.to_string(), "A -> B <- C");
    }

    #[test]
    fn overlapping_sets_rejected() {
        let g = chain();
        assert!(matches!(
            g.d_separated(["A"], ["A"], Vec::<&str>::new()),
            Err(Error::OverlappingSets(_))
        ));
        assert!(matches!(g.d_separated(["A"], ["C"], ["A"]), Err(Error::OverlappingSets(_))));
    }

    #[test]
    fn relatives_of_chain() {
        let g = chain();
        let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(g.relatives("C", Relation::Ancestors).unwrap(), set(&["A", "B"]));
        assert_eq!(g.relatives("A", Relation::Descendants).unwrap(), set(&["B", "C"]));
        assert_eq!(g.relatives("B", Relation::Parents).unwrap(), set(&["A"]));
        assert_eq!(g.relatives("B", Relation::Children).unwrap(), set(&["C"]));
        assert!(g.relatives("Z", Relation::Parents).is_err());
    }

    #[test]
    fn backdoor_paths_skip_direct_edge() {
        // Z -> X -> Y, Z -> Y
        let g = CausalGraph::from_spec("node X\nnode Y\nnode Z\nedge Z X\nedge X Y\nedge Z Y\n").unwrap();
        let paths = g.enumerate_backdoor_paths("X", "Y").unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].to_string(), "X <- Z -> Y");
        assert_eq!(g.enumerate_simple_paths("X", "Y").unwrap().len(), 2);
    }

    #[test]
    fn path_order_is_lexicographic() {
        let g = CausalGraph::from_spec(
            "node A\nnode B\nnode C\nnode D\nedge A B\nedge A C\nedge B D\nedge C D\nedge A D\n",
        )
        .unwrap();
        let paths: Vec<Vec<String>> = g
            .enumerate_simple_paths("A", "D")
            .unwrap()
            .into_iter()
            .map(|p| p.nodes)
            .collect();
        let mut sorted = paths.clone();
        sorted.sort();
        assert_eq!(paths, sorted);
        assert_eq!(paths.len(), 3);
    }

    #[test]
    fn latent_projection_marginalises_dropped_nodes() {
        // A -> M -> B, U -> A, U -> C, C -> B
        let g = CausalGraph::from_spec(
            "node A\nnode B\nnode C\nnode M\nnode U latent\nedge A M\nedge M B\nedge U A\nedge U C\nedge C B\n",
        )
        .unwrap();
        let p = g.latent_projection(["A", "B"]).unwrap();
        assert_eq!(p.nodes_of_kind(NodeKind::Observed), vec!["A", "B"]);
        assert!(p.has_edge("A", "B"));
        // U reaches A directly and B through C
        assert!(p.has_edge("L_A_B", "A") && p.has_edge("L_A_B", "B"));
        assert_eq!(p.edge_count(), 3);
        let q = g.latent_projection(["A", "B", "C"]).unwrap();
        assert!(q.has_edge("L_A_C", "A") && q.has_edge("C", "B") && q.has_edge("A", "B"));
        assert!(!q.contains("L_A_B"));
        assert!(g.latent_projection(["U"]).is_err());
    }

    #[test]
    fn topological_order_respects_edges() {
        let g = chain();
        assert_eq!(g.topological_order(), vec!["A", "B", "C"]);
    }
}
