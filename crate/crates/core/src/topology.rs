//! Static communication graph, the coverage path used by the threshold rule,
//! and B-bounded connectivity checks on per-iteration edge sets.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Undirected edge, always stored with the smaller index first.
pub type Edge = (usize, usize);

/// Normalizes an unordered pair to `(min, max)`.
pub fn edge(i: usize, j: usize) -> Edge {
    if i <= j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Largest worker count for which [`coverage_path`] runs the exact search.
pub const EXACT_COVERAGE_MAX_N: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<Edge>,
    adjacency: Vec<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    Ring,
    Path,
    Complete,
    Random { p: f64 },
}

/// JSON form of a graph: `{"n": N, "edges": [[i, j], ...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDoc {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
}

impl Graph {
    /// Builds a graph and rejects it unless it is connected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let g = Self::new_allow_disconnected(n, edges)?;
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }

    /// Structural checks only. Used for window unions and analysis inputs.
    pub fn new_allow_disconnected(n: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Graph("graph needs at least one worker".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(Error::Graph(format!("self-loop at worker {i}")));
            }
            if i >= n || j >= n {
                return Err(Error::WorkerOutOfRange { index: i.max(j), n });
            }
            if !set.insert(edge(i, j)) {
                return Err(Error::Graph(format!("duplicate edge ({i}, {j})")));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in &set {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }
        Ok(Self {
            n,
            edges: set,
            adjacency,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&edge(i, j))
    }

    /// Sorted neighbor list of `j`, never containing `j` itself.
    pub fn neighbor_slice(&self, j: usize) -> &[usize] {
        &self.adjacency[j]
    }

    pub fn degree(&self, j: usize) -> usize {
        self.adjacency[j].len()
    }

    pub fn neighbors(&self, j: usize) -> Result<BTreeSet<usize>> {
        if j >= self.n {
            return Err(Error::WorkerOutOfRange { index: j, n: self.n });
        }
        Ok(self.adjacency[j].iter().copied().collect())
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(v) = queue.pop_front() {
            for &u in &self.adjacency[v] {
                if !seen[u] {
                    seen[u] = true;
                    reached += 1;
                    queue.push_back(u);
                }
            }
        }
        reached == self.n
    }

    pub fn to_doc(&self) -> GraphDoc {
        GraphDoc {
            n: self.n,
            edges: self.edges.iter().map(|&(i, j)| [i, j]).collect(),
        }
    }

    pub fn from_doc(doc: &GraphDoc) -> Result<Self> {
        Self::new(doc.n, doc.edges.iter().map(|e| (e[0], e[1])))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_doc()).expect("graph doc serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: GraphDoc = serde_json::from_str(s)?;
        Self::from_doc(&doc)
    }
}

/// Generates a connected communication graph, deterministic per seed.
pub fn generate_graph(n: usize, kind: GraphKind, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(Error::Graph(format!("need at least 2 workers, got {n}")));
    }
    let mut edges = BTreeSet::new();
    match kind {
        GraphKind::Ring => {
            for i in 0..n {
                edges.insert(edge(i, (i + 1) % n));
            }
        }
        GraphKind::Path => {
            for i in 0..n - 1 {
                edges.insert((i, i + 1));
            }
        }
        GraphKind::Complete => {
            for i in 0..n {
                for j in i + 1..n {
                    edges.insert((i, j));
                }
            }
        }
        GraphKind::Random { p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Graph(format!("edge probability must lie in (0, 1], got {p}")));
            }
            let mut rng = rng::stream(seed, Domain::Graph, n as u64, 0);
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random::<f64>() < p {
                        edges.insert((i, j));
                    }
                }
            }
            // random spanning-tree backbone: each node in a shuffled order
            // attaches to one node placed before it
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for pos in 1..n {
                let parent = order[rng.random_range(0..pos)];
                edges.insert(edge(order[pos], parent));
            }
        }
    }
    Graph::new(n, edges)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoveragePath {
    links: Vec<Edge>,
}

impl CoveragePath {
    /// Validates the links against `g`: each must be an edge and together
    /// they must touch every worker.
    pub fn new(g: &Graph, links: Vec<Edge>) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::Graph("coverage path is empty".into()));
        }
        let mut touched = vec![false; g.n()];
        let mut seen = BTreeSet::new();
        for &(i, j) in &links {
            if !g.has_edge(i, j) {
                return Err(Error::Graph(format!("link ({i}, {j}) is not a graph edge")));
            }
            if !seen.insert(edge(i, j)) {
                return Err(Error::Graph(format!("link ({i}, {j}) listed twice")));
            }
            touched[i] = true;
            touched[j] = true;
        }
        if let Some(miss) = touched.iter().position(|t| !t) {
            return Err(Error::Graph(format!("coverage path misses worker {miss}")));
        }
        Ok(Self {
            links: links.into_iter().map(|(i, j)| edge(i, j)).collect(),
        })
    }

    pub fn links(&self) -> &[Edge] {
        &self.links
    }

    /// Number of links `d`, also the DTUR epoch length.
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn contains(&self, e: Edge) -> bool {
        self.links.contains(&e)
    }
}

/// Finds the set of links the threshold rule must re-establish each epoch.
///
/// Up to [`EXACT_COVERAGE_MAX_N`] workers this is the link set of a
/// minimum-length walk visiting every worker (a Hamiltonian path whenever
/// one exists), choosing the lexicographically smallest node sequence among
/// optimal walks. Links are listed in first-traversal order. Larger graphs
/// use a DFS over a BFS spanning tree, giving `d = N - 1`.
pub fn coverage_path(g: &Graph) -> Result<CoveragePath> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let links = if g.n() <= EXACT_COVERAGE_MAX_N {
        exact_covering_walk(g)
    } else {
        spanning_tree_dfs(g)
    };
    CoveragePath::new(g, links)
}

/// Shortest covering walk by dynamic programming over (node, visited-mask).
fn exact_covering_walk(g: &Graph) -> Vec<Edge> {
    let n = g.n();
    if n == 1 {
        return Vec::new();
    }
    let full = (1usize << n) - 1;
    let idx = |v: usize, mask: usize| mask * n + v;
    // remaining[v, mask]: fewest steps still needed when standing on v having
    // visited `mask`
    let mut remaining = vec![u32::MAX; (full + 1) * n];
    for v in 0..n {
        remaining[idx(v, full)] = 0;
    }
    for mask in (1..full).rev() {
        // entries leaving the mask come from already-final supersets
        let mut layer = vec![u32::MAX; n];
        for v in (0..n).filter(|v| mask >> v & 1 == 1) {
            for &u in g.neighbor_slice(v) {
                if mask >> u & 1 == 0 {
                    let r = remaining[idx(u, mask | 1 << u)];
                    if r != u32::MAX {
                        layer[v] = layer[v].min(r + 1);
                    }
                }
            }
        }
        // relax moves inside the mask (unit weights, at most n rounds)
        loop {
            let mut changed = false;
            for v in (0..n).filter(|v| mask >> v & 1 == 1) {
                for &u in g.neighbor_slice(v) {
                    if mask >> u & 1 == 1 && layer[u] != u32::MAX && layer[u] + 1 < layer[v] {
                        layer[v] = layer[u] + 1;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        for v in 0..n {
            if mask >> v & 1 == 1 {
                remaining[idx(v, mask)] = layer[v];
            }
        }
    }

    let start = (0..n).min_by_key(|&v| (remaining[idx(v, 1 << v)], v)).expect("n >= 1");
    let mut v = start;
    let mut mask = 1usize << start;
    let mut links = Vec::new();
    let mut seen = BTreeSet::new();
    while mask != full {
        let here = remaining[idx(v, mask)];
        let next = g
            .neighbor_slice(v)
            .iter()
            .copied()
            .find(|&u| remaining[idx(u, mask | 1 << u)] + 1 == here)
            .expect("an optimal successor exists");
        let e = edge(v, next);
        if seen.insert(e) {
            links.push(e);
        }
        v = next;
        mask |= 1 << next;
    }
    links
}

fn spanning_tree_dfs(g: &Graph) -> Vec<Edge> {
    let n = g.n();
    let mut parent = vec![usize::MAX; n];
    let mut children = vec![Vec::new(); n];
    let mut queue = VecDeque::from([0]);
    parent[0] = 0;
    while let Some(v) = queue.pop_front() {
        for &u in g.neighbor_slice(v) {
            if parent[u] == usize::MAX {
                parent[u] = v;
                children[v].push(u);
                queue.push_back(u);
            }
        }
    }
    let mut links = Vec::with_capacity(n - 1);
    let mut stack = vec![0];
    while let Some(v) = stack.pop() {
        if v != 0 {
            links.push(edge(parent[v], v));
        }
        for &c in children[v].iter().rev() {
            stack.push(c);
        }
    }
    links
}

/// Ordered per-iteration edge sets `E_k`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeSetSequence {
    sets: Vec<BTreeSet<Edge>>,
}

impl EdgeSetSequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, set: BTreeSet<Edge>) {
        self.sets.push(set);
    }

    pub fn sets(&self) -> &[BTreeSet<Edge>] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

impl FromIterator<BTreeSet<Edge>> for EdgeSetSequence {
    fn from_iter<T: IntoIterator<Item = BTreeSet<Edge>>>(iter: T) -> Self {
        Self {
            sets: iter.into_iter().collect(),
        }
    }
}

/// True iff every disjoint window of `b` consecutive edge sets unions to a
/// connected graph on all workers. A trailing partial window is ignored.
pub fn check_b_connectivity(g: &Graph, seq: &EdgeSetSequence, b: usize) -> Result<bool> {
    if seq.is_empty() {
        return Err(Error::Empty("edge set sequence"));
    }
    if b == 0 || b > seq.len() {
        return Err(Error::Graph(format!(
            "window length {b} must lie in [1, {}]",
            seq.len()
        )));
    }
    for (k, set) in seq.sets().iter().enumerate() {
        if let Some(&(i, j)) = set.iter().find(|&&(i, j)| !g.has_edge(i, j)) {
            return Err(Error::Graph(format!("edge ({i}, {j}) in set {k} is not a graph edge")));
        }
    }
    for window in seq.sets().chunks_exact(b) {
        let union: BTreeSet<Edge> = window.iter().flatten().copied().collect();
        let h = Graph::new_allow_disconnected(g.n(), union)?;
        if !h.is_connected() {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Graph {
        Graph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    fn path3() -> Graph {
        Graph::new(3, [(0, 1), (1, 2)]).unwrap()
    }

    fn set(edges: &[Edge]) -> BTreeSet<Edge> {
        edges.iter().copied().collect()
    }

    #[test]
    fn ring_of_three_is_a_triangle() {
        let g = generate_graph(3, GraphKind::Ring, 99).unwrap();
        assert_eq!(g.edges(), &set(&[(0, 1), (1, 2), (0, 2)]));
    }

    #[test]
    fn path_of_four() {
        let g = generate_graph(4, GraphKind::Path, 0).unwrap();
        assert_eq!(g.edges(), &set(&[(0, 1), (1, 2), (2, 3)]));
    }

    #[test]
    fn random_graph_is_connected_and_deterministic() {
        let g = generate_graph(6, GraphKind::Random { p: 0.4 }, 7).unwrap();
        assert!(g.is_connected());
        assert_eq!(g, generate_graph(6, GraphKind::Random { p: 0.4 }, 7).unwrap());
    }

    #[test]
    fn rejects_too_few_workers_and_bad_probability() {
        assert!(generate_graph(1, GraphKind::Ring, 0).is_err());
        assert!(generate_graph(4, GraphKind::Random { p: 0.0 }, 0).is_err());
        assert!(generate_graph(4, GraphKind::Random { p: 1.5 }, 0).is_err());
    }

    #[test]
    fn rejects_malformed_edges() {
        assert!(Graph::new(3, [(0, 0)]).is_err());
        assert!(Graph::new(3, [(0, 3)]).is_err());
        assert!(Graph::new(3, [(0, 1), (1, 0), (1, 2)]).is_err());
        assert!(matches!(Graph::new(4, [(0, 1), (2, 3)]), Err(Error::Disconnected)));
    }

    #[test]
    fn neighbors_exclude_self() {
        let p = path3();
        assert_eq!(p.neighbors(1).unwrap(), BTreeSet::from([0, 2]));
        assert_eq!(p.neighbors(0).unwrap(), BTreeSet::from([1]));
        assert_eq!(triangle().neighbors(2).unwrap(), BTreeSet::from([0, 1]));
        assert!(p.neighbors(3).is_err());
    }

    #[test]
    fn connectivity() {
        assert!(triangle().is_connected());
        let split = Graph::new_allow_disconnected(4, [(0, 1), (2, 3)]).unwrap();
        assert!(!split.is_connected());
    }

    #[test]
    fn coverage_path_examples() {
        let p = coverage_path(&path3()).unwrap();
        assert_eq!(p.links(), &[(0, 1), (1, 2)]);
        let t = coverage_path(&triangle()).unwrap();
        assert_eq!(t.links(), &[(0, 1), (1, 2)]);
        let star = Graph::new(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let s = coverage_path(&star).unwrap();
        assert_eq!(s.links(), &[(0, 1), (0, 2), (0, 3)]);
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn coverage_path_rejects_disconnected() {
        let split = Graph::new_allow_disconnected(4, [(0, 1), (2, 3)]).unwrap();
        assert!(matches!(coverage_path(&split), Err(Error::Disconnected)));
    }

    #[test]
    fn large_graph_uses_tree_fallback() {
        let g = generate_graph(16, GraphKind::Random { p: 0.2 }, 3).unwrap();
        let p = coverage_path(&g).unwrap();
        assert_eq!(p.len(), 15);
    }

    #[test]
    fn b_connectivity_examples() {
        let p = path3();
        let full: EdgeSetSequence = std::iter::repeat_n(p.edges().clone(), 4).collect();
        assert!(check_b_connectivity(&p, &full, 1).unwrap());

        let alternating: EdgeSetSequence = (0..6)
            .map(|k| if k % 2 == 0 { set(&[(0, 1)]) } else { set(&[(1, 2)]) })
            .collect();
        assert!(check_b_connectivity(&p, &alternating, 2).unwrap());
        assert!(!check_b_connectivity(&p, &alternating, 1).unwrap());
    }

    #[test]
    fn b_connectivity_errors() {
        let p = path3();
        assert!(check_b_connectivity(&p, &EdgeSetSequence::new(), 1).is_err());
        let bad: EdgeSetSequence = [set(&[(0, 2)])].into_iter().collect();
        assert!(check_b_connectivity(&p, &bad, 1).is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = generate_graph(5, GraphKind::Random { p: 0.5 }, 11).unwrap();
        let back = Graph::from_json(&g.to_json()).unwrap();
        assert_eq!(g, back);
        assert!(Graph::from_json(r#"{"n": 4, "edges": [[0,1],[2,3]]}"#).is_err());
    }
}
