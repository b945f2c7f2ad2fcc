//! Communication topologies and exhaustive robustness verification.
//!
//! Robustness checks enumerate every pair of nonempty disjoint node subsets,
//! which is exponential in the node count; they are therefore capped at
//! [`ENUMERATION_LIMIT`] nodes and refuse larger graphs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::streams::{self, tag};

/// Largest node count accepted by the subset-pair enumeration.
pub const ENUMERATION_LIMIT: usize = 15;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("node {node} out of range for graph with {n} nodes")]
    InvalidNode { node: usize, n: usize },
    #[error("subset must be nonempty")]
    EmptySubset,
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("graph has {n} nodes, robustness enumeration is limited to {limit}")]
    NodeLimitExceeded { n: usize, limit: usize },
    #[error("({a}, {b}) is not an edge")]
    NotAnEdge { a: usize, b: usize },
    #[error("invalid node count {0}")]
    InvalidNodeCount(usize),
    #[error("{kind} construction on {n} nodes failed post-construction {r}-robustness check")]
    ConstructionFailed {
        kind: &'static str,
        n: usize,
        r: usize,
    },
    #[error("no {r}-robust graph found in {attempts} sampling attempts")]
    GenerationFailed { r: usize, attempts: usize },
    #[error("adjacency parse error: {0}")]
    Parse(String),
    #[error("asymmetric adjacency: {a} lists {b} but not vice versa")]
    Asymmetric { a: usize, b: usize },
}

/// Undirected graph over nodes `0..n`, no self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    n: usize,
    adj: Vec<BTreeSet<usize>>,
}

impl UndirectedGraph {
    pub fn new(n: usize) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::InvalidNodeCount(0));
        }
        Ok(Self {
            n,
            adj: vec![BTreeSet::new(); n],
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn add_edge(&mut self, a: usize, b: usize) -> Result<(), GraphError> {
        self.check_node(a)?;
        self.check_node(b)?;
        if a == b {
            return Err(GraphError::SelfLoop(a));
        }
        self.adj[a].insert(b);
        self.adj[b].insert(a);
        Ok(())
    }

    pub fn remove_edge(&mut self, a: usize, b: usize) -> Result<(), GraphError> {
        if !self.has_edge(a, b) {
            return Err(GraphError::NotAnEdge { a, b });
        }
        self.adj[a].remove(&b);
        self.adj[b].remove(&a);
        Ok(())
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.n && self.adj[a].contains(&b)
    }

    pub fn neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn min_degree(&self) -> usize {
        (0..self.n).map(|v| self.degree(v)).min().unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(|s| s.len()).sum::<usize>() / 2
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.n {
            for &b in &self.adj[a] {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    fn check_node(&self, v: usize) -> Result<(), GraphError> {
        if v >= self.n {
            return Err(GraphError::InvalidNode { node: v, n: self.n });
        }
        Ok(())
    }

    fn adjacency_masks(&self) -> Vec<u32> {
        let mut masks = vec![0u32; self.n];
        for (v, nbrs) in self.adj.iter().enumerate() {
            for &u in nbrs {
                masks[v] |= 1 << u;
            }
        }
        masks
    }

    /// A subset is r-reachable when some member has at least `r` neighbors
    /// outside the subset.
    pub fn is_r_reachable(&self, subset: &BTreeSet<usize>, r: usize) -> Result<bool, GraphError> {
        if subset.is_empty() {
            return Err(GraphError::EmptySubset);
        }
        for &v in subset {
            self.check_node(v)?;
        }
        Ok(subset
            .iter()
            .any(|&v| self.adj[v].difference(subset).count() >= r))
    }

    /// Exhaustive r-robustness check over all pairs of nonempty disjoint
    /// subsets.
    pub fn is_r_robust(&self, r: usize) -> Result<bool, GraphError> {
        self.check_enumeration_limit()?;
        Ok(pairwise_robust(self.n, &self.adjacency_masks(), r))
    }

    /// Largest verified robustness level, found by ascending search from 0.
    pub fn max_robustness(&self) -> Result<RobustnessReport, GraphError> {
        self.check_enumeration_limit()?;
        let masks = self.adjacency_masks();
        let mut verified_levels = BTreeMap::new();
        verified_levels.insert(0, true);
        let mut r_max = 0;
        for r in 1..=self.n {
            let ok = pairwise_robust(self.n, &masks, r);
            verified_levels.insert(r, ok);
            if ok {
                r_max = r;
            } else {
                break;
            }
        }
        Ok(RobustnessReport {
            r_max,
            verified_levels,
            node_limit_hit: false,
        })
    }

    /// A subset S is f-local when every node outside S has at most `f`
    /// neighbors inside S.
    pub fn is_f_local(&self, subset: &BTreeSet<usize>, f: usize) -> Result<bool, GraphError> {
        for &v in subset {
            self.check_node(v)?;
        }
        Ok((0..self.n)
            .filter(|v| !subset.contains(v))
            .all(|v| self.adj[v].intersection(subset).count() <= f))
    }

    /// Orient every edge both ways, then drop the requested incoming arcs.
    /// `removal[i]` lists in-neighbors whose arc into `i` is removed.
    pub fn remove_incoming(
        &self,
        removal: &BTreeMap<usize, BTreeSet<usize>>,
    ) -> Result<DirectedGraph, GraphError> {
        for (&v, dropped) in removal {
            self.check_node(v)?;
            for &u in dropped {
                if !self.has_edge(u, v) {
                    return Err(GraphError::NotAnEdge { a: u, b: v });
                }
            }
        }
        let mut d = DirectedGraph::new(self.n)?;
        for (a, b) in self.edges() {
            let a_drops_b = removal.get(&a).map_or(false, |s| s.contains(&b));
            let b_drops_a = removal.get(&b).map_or(false, |s| s.contains(&a));
            if !a_drops_b {
                d.add_arc(b, a)?;
            }
            if !b_drops_a {
                d.add_arc(a, b)?;
            }
        }
        Ok(d)
    }

    fn check_enumeration_limit(&self) -> Result<(), GraphError> {
        if self.n > ENUMERATION_LIMIT {
            return Err(GraphError::NodeLimitExceeded {
                n: self.n,
                limit: ENUMERATION_LIMIT,
            });
        }
        Ok(())
    }

    /// Serialize as one record per node: `id: sorted neighbor ids`.
    pub fn to_adjacency_text(&self) -> String {
        let mut out = String::new();
        for v in 0..self.n {
            let nbrs: Vec<String> = self.adj[v].iter().map(|u| u.to_string()).collect();
            out.push_str(&format!("{}: {}\n", v, nbrs.join(" ")));
        }
        out
    }

    /// Parse the adjacency-list format written by [`to_adjacency_text`].
    /// Rejects asymmetric adjacency, self-loops, and out-of-range ids.
    ///
    /// [`to_adjacency_text`]: UndirectedGraph::to_adjacency_text
    pub fn from_adjacency_text(text: &str) -> Result<Self, GraphError> {
        let mut records: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id_part, rest) = line
                .split_once(':')
                .ok_or_else(|| GraphError::Parse(format!("line {}: missing ':'", lineno + 1)))?;
            let id: usize = id_part.trim().parse().map_err(|_| {
                GraphError::Parse(format!("line {}: bad node id {:?}", lineno + 1, id_part))
            })?;
            let mut nbrs = Vec::new();
            for tok in rest.split_whitespace() {
                let u: usize = tok.parse().map_err(|_| {
                    GraphError::Parse(format!("line {}: bad neighbor {:?}", lineno + 1, tok))
                })?;
                nbrs.push(u);
            }
            if records.insert(id, nbrs).is_some() {
                return Err(GraphError::Parse(format!("duplicate record for node {}", id)));
            }
        }
        let n = records.len();
        if n == 0 {
            return Err(GraphError::Parse("no records".into()));
        }
        if records.keys().copied().ne(0..n) {
            return Err(GraphError::Parse(format!(
                "node ids must be exactly 0..{}",
                n - 1
            )));
        }
        let mut g = UndirectedGraph::new(n)?;
        for (&v, nbrs) in &records {
            for &u in nbrs {
                if u >= n {
                    return Err(GraphError::InvalidNode { node: u, n });
                }
                if u == v {
                    return Err(GraphError::SelfLoop(v));
                }
            }
        }
        for (&v, nbrs) in &records {
            for &u in nbrs {
                if !records[&u].contains(&v) {
                    return Err(GraphError::Asymmetric { a: v, b: u });
                }
                g.adj[v].insert(u);
            }
        }
        Ok(g)
    }
}

/// Directed graph; arc (i, j) means j receives from i.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n: usize,
    out_nbrs: Vec<BTreeSet<usize>>,
    in_nbrs: Vec<BTreeSet<usize>>,
}

impl DirectedGraph {
    pub fn new(n: usize) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::InvalidNodeCount(0));
        }
        Ok(Self {
            n,
            out_nbrs: vec![BTreeSet::new(); n],
            in_nbrs: vec![BTreeSet::new(); n],
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn add_arc(&mut self, from: usize, to: usize) -> Result<(), GraphError> {
        if from >= self.n {
            return Err(GraphError::InvalidNode { node: from, n: self.n });
        }
        if to >= self.n {
            return Err(GraphError::InvalidNode { node: to, n: self.n });
        }
        if from == to {
            return Err(GraphError::SelfLoop(from));
        }
        self.out_nbrs[from].insert(to);
        self.in_nbrs[to].insert(from);
        Ok(())
    }

    pub fn has_arc(&self, from: usize, to: usize) -> bool {
        from < self.n && self.out_nbrs[from].contains(&to)
    }

    pub fn arc_count(&self) -> usize {
        self.out_nbrs.iter().map(|s| s.len()).sum()
    }

    pub fn in_neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.in_nbrs[v]
    }

    /// Directed r-robustness: a subset is r-reachable when some member has
    /// at least `r` in-neighbors outside the subset.
    pub fn is_r_robust(&self, r: usize) -> Result<bool, GraphError> {
        if self.n > ENUMERATION_LIMIT {
            return Err(GraphError::NodeLimitExceeded {
                n: self.n,
                limit: ENUMERATION_LIMIT,
            });
        }
        let mut masks = vec![0u32; self.n];
        for (v, nbrs) in self.in_nbrs.iter().enumerate() {
            for &u in nbrs {
                masks[v] |= 1 << u;
            }
        }
        Ok(pairwise_robust(self.n, &masks, r))
    }

    /// True when some node reaches every other node along arcs.
    pub fn has_rooted_out_branching(&self) -> bool {
        (0..self.n).any(|root| self.reachable_from(root) == self.n)
    }

    fn reachable_from(&self, root: usize) -> usize {
        let mut seen = vec![false; self.n];
        let mut stack = vec![root];
        seen[root] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &u in &self.out_nbrs[v] {
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    stack.push(u);
                }
            }
        }
        count
    }
}

/// Result of an ascending robustness search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RobustnessReport {
    pub r_max: usize,
    pub verified_levels: BTreeMap<usize, bool>,
    pub node_limit_hit: bool,
}

impl fmt::Display for RobustnessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r_max = {}", self.r_max)
    }
}

/// Core of the robustness check: every pair of nonempty disjoint subsets
/// must contain an r-reachable member. `masks[v]` is the neighbor bitmask
/// used for reachability (in-neighbors for the directed variant).
fn pairwise_robust(n: usize, masks: &[u32], r: usize) -> bool {
    if r == 0 {
        return true;
    }
    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    // reachable[s] = subset s (nonempty) is r-reachable
    let mut reachable = vec![false; (full as usize) + 1];
    for s in 1..=full {
        let outside = full & !s;
        let mut m = s;
        let mut ok = false;
        while m != 0 {
            let v = m.trailing_zeros() as usize;
            if (masks[v] & outside).count_ones() as usize >= r {
                ok = true;
                break;
            }
            m &= m - 1;
        }
        reachable[s as usize] = ok;
    }
    // Unordered pairs: s1 paired with every nonempty submask s2 of its
    // complement with s2 > s1.
    for s1 in 1..=full {
        if reachable[s1 as usize] {
            continue;
        }
        let comp = full & !s1;
        let mut s2 = comp;
        while s2 != 0 {
            if s2 > s1 && !reachable[s2 as usize] {
                return false;
            }
            s2 = (s2 - 1) & comp;
        }
    }
    true
}

/// Complete graph on `n` nodes.
pub fn build_complete(n: usize) -> Result<UndirectedGraph, GraphError> {
    let mut g = UndirectedGraph::new(n)?;
    for a in 0..n {
        for b in (a + 1)..n {
            g.add_edge(a, b)?;
        }
    }
    Ok(g)
}

/// Maximally robust graph with few edges, for gamma = ceil(n/2).
///
/// Odd n: clique on gamma+1 nodes, every remaining node attached to gamma
/// clique members. Even n: gamma hub nodes adjacent to everything, then
/// ceil((gamma-2)/2) disjoint hub pairs lose their mutual edge. The result
/// is verified gamma-robust; construction fails loudly otherwise.
pub fn build_merg(n: usize) -> Result<UndirectedGraph, GraphError> {
    build_merg_with(n, None)
}

/// [`build_merg`] with seeded-uniform attachment targets instead of the
/// lowest-id rule.
pub fn build_merg_with(n: usize, seed: Option<u64>) -> Result<UndirectedGraph, GraphError> {
    if n < 3 {
        return Err(GraphError::InvalidNodeCount(n));
    }
    let gamma = n.div_ceil(2);
    let mut g = UndirectedGraph::new(n)?;
    if n % 2 == 1 {
        // clique X = {0..gamma}, |X| = gamma + 1
        for a in 0..=gamma {
            for b in (a + 1)..=gamma {
                g.add_edge(a, b)?;
            }
        }
        for v in (gamma + 1)..n {
            for t in attachment_targets(gamma + 1, gamma, seed, v as u64) {
                g.add_edge(v, t)?;
            }
        }
    } else {
        // hubs X = {0..gamma-1} adjacent to all other nodes
        for x in 0..gamma {
            for v in 0..n {
                if v != x {
                    g.add_edge(x, v)?;
                }
            }
        }
        let pairs = (gamma.saturating_sub(2)).div_ceil(2);
        for p in 0..pairs {
            g.remove_edge(2 * p, 2 * p + 1)?;
        }
    }
    if !g.is_r_robust(gamma)? {
        return Err(GraphError::ConstructionFailed {
            kind: "merg",
            n,
            r: gamma,
        });
    }
    Ok(g)
}

/// Complete core of 2r-1 nodes; every remaining node attached to r core
/// nodes. Verified r-robust.
pub fn build_preferential(
    n: usize,
    r: usize,
    seed: Option<u64>,
) -> Result<UndirectedGraph, GraphError> {
    if r == 0 || n < 2 * r - 1 {
        return Err(GraphError::InvalidNodeCount(n));
    }
    let core = 2 * r - 1;
    let mut g = UndirectedGraph::new(n)?;
    for a in 0..core {
        for b in (a + 1)..core {
            g.add_edge(a, b)?;
        }
    }
    for v in core..n {
        for t in attachment_targets(core, r, seed, v as u64) {
            g.add_edge(v, t)?;
        }
    }
    if !g.is_r_robust(r)? {
        return Err(GraphError::ConstructionFailed {
            kind: "preferential",
            n,
            r,
        });
    }
    Ok(g)
}

/// Pick `k` attachment targets out of `0..pool`: lowest ids by default,
/// seeded-uniform when a seed is supplied.
fn attachment_targets(pool: usize, k: usize, seed: Option<u64>, node: u64) -> Vec<usize> {
    match seed {
        None => (0..k).collect(),
        Some(s) => {
            let mut rng = streams::derive(&[s, tag::TOPOLOGY, node]);
            let mut ids: Vec<usize> = (0..pool).collect();
            // partial Fisher-Yates
            for i in 0..k {
                let j = rng.gen_range(i..ids.len());
                ids.swap(i, j);
            }
            ids.truncate(k);
            ids
        }
    }
}

/// Edge probability from the r-robustness threshold for G(n, p).
pub fn erdos_renyi_probability(n: usize, r: usize) -> f64 {
    let nf = n as f64;
    let p = (nf.ln() + (r as f64 - 1.0) * nf.ln().ln()) / nf;
    p.clamp(0.0, 1.0)
}

/// Sample G(n, p) repeatedly until a verified r-robust graph appears.
///
/// The first attempt uses the threshold probability exactly; subsequent
/// attempts escalate p linearly toward 1 so that, for any attainable r,
/// generation terminates well inside the attempt budget. The threshold
/// formula is asymptotic and far too sparse at small n (measured ~0.25%
/// hit rate for n=7, r=4); verification remains authoritative either way.
pub fn build_erdos_renyi(
    n: usize,
    r: usize,
    seed: u64,
    max_attempts: usize,
) -> Result<UndirectedGraph, GraphError> {
    if n == 0 {
        return Err(GraphError::InvalidNodeCount(0));
    }
    if n > ENUMERATION_LIMIT {
        return Err(GraphError::NodeLimitExceeded {
            n,
            limit: ENUMERATION_LIMIT,
        });
    }
    let p0 = erdos_renyi_probability(n, r);
    const ESCALATION_HORIZON: usize = 25;
    for attempt in 0..max_attempts {
        let boost = (attempt as f64 / ESCALATION_HORIZON as f64).min(1.0);
        let p = p0 + (1.0 - p0) * boost;
        let mut rng = streams::derive(&[seed, tag::TOPOLOGY, attempt as u64]);
        let mut g = UndirectedGraph::new(n)?;
        for a in 0..n {
            for b in (a + 1)..n {
                if rng.gen::<f64>() < p {
                    g.add_edge(a, b)?;
                }
            }
        }
        if g.is_r_robust(r)? {
            return Ok(g);
        }
    }
    Err(GraphError::GenerationFailed {
        r,
        attempts: max_attempts,
    })
}
