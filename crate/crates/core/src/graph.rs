//! K-regular random concept graphs and Question/Answer task selection.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::{keyed_stream, Domain};

/// Node identifier. Graphs are limited to `u32::MAX` nodes.
pub type NodeId = u32;

/// Full restarts allowed before [`GraphError::GenerationFailure`].
pub const MAX_RESTARTS: usize = 1000;

const GRAPH_HEADER: &str = "conet-graph v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("n*k = {n}*{k} is odd; no regular graph exists")]
    OddDegreeSum { n: usize, k: usize },
    #[error("degree {k} is infeasible for {n} nodes (need 2 <= k < n)")]
    InfeasibleDegree { n: usize, k: usize },
    #[error("no simple connected graph after {restarts} restarts")]
    GenerationFailure { restarts: usize },
    #[error("no ordered pair with distance in [{d_min}, {d_max}]")]
    NoFeasiblePair { d_min: u32, d_max: u32 },
    #[error("invalid distance window [{d_min}, {d_max}] for {n} nodes")]
    InvalidWindow { d_min: u32, d_max: u32, n: usize },
    #[error("invalid adjacency: {0}")]
    InvalidAdjacency(String),
    #[error("graph parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A simple, connected, undirected K-regular graph.
///
/// Neighbor lists are stored flat, `k` slots per node, each row sorted
/// ascending. A slot index is the position of a neighbor inside its row and is
/// what the policy uses to address directed edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConceptGraph {
    n: usize,
    k: usize,
    seed: u64,
    adjacency: Vec<NodeId>,
}

impl ConceptGraph {
    /// Builds a graph from explicit neighbor lists, checking every invariant.
    pub fn from_adjacency(lists: Vec<Vec<NodeId>>, seed: u64) -> Result<Self, GraphError> {
        let n = lists.len();
        if n == 0 {
            return Err(GraphError::InvalidAdjacency("empty graph".into()));
        }
        let k = lists[0].len();
        let mut adjacency = Vec::with_capacity(n * k);
        for (i, mut row) in lists.into_iter().enumerate() {
            if row.len() != k {
                return Err(GraphError::InvalidAdjacency(format!("node {i} has degree {} (expected {k})", row.len())));
            }
            row.sort_unstable();
            for (s, &j) in row.iter().enumerate() {
                if j as usize >= n {
                    return Err(GraphError::InvalidAdjacency(format!("node {i}: neighbor {j} out of range")));
                }
                if j as usize == i {
                    return Err(GraphError::InvalidAdjacency(format!("self-loop at {i}")));
                }
                if s > 0 && row[s - 1] == j {
                    return Err(GraphError::InvalidAdjacency(format!("duplicate edge {i}-{j}")));
                }
            }
            adjacency.extend_from_slice(&row);
        }
        let graph = ConceptGraph { n, k, seed, adjacency };
        for i in 0..n as NodeId {
            for &j in graph.neighbors(i) {
                if graph.slot_of(j, i).is_none() {
                    return Err(GraphError::InvalidAdjacency(format!("edge {i}->{j} has no reverse")));
                }
            }
        }
        if !graph.is_connected() {
            return Err(GraphError::InvalidAdjacency("graph is disconnected".into()));
        }
        Ok(graph)
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_edges(&self) -> usize {
        self.n * self.k / 2
    }

    #[inline]
    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        let start = node as usize * self.k;
        &self.adjacency[start..start + self.k]
    }

    /// Position of `to` in the neighbor row of `from`, if the two are adjacent.
    #[inline]
    pub fn slot_of(&self, from: NodeId, to: NodeId) -> Option<usize> {
        self.neighbors(from).iter().position(|&j| j == to)
    }

    /// Flat neighbor table, node-major.
    pub fn adjacency(&self) -> &[NodeId] {
        &self.adjacency
    }

    pub fn is_connected(&self) -> bool {
        bfs_distances(self, 0).iter().all(|&d| d != u32::MAX)
    }

    /// A 64-bit digest of the adjacency structure, used to bind checkpoints to
    /// the graph they were trained on.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        h.update((self.k as u64).to_le_bytes());
        for &j in &self.adjacency {
            h.update(j.to_le_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
    }

    /// Serializes to the `conet-graph v1` text format.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.n * (self.k * 6 + 8));
        let _ = writeln!(out, "{GRAPH_HEADER} {} {} {}", self.n, self.k, self.seed);
        for i in 0..self.n as NodeId {
            let _ = write!(out, "{i}:");
            for &j in self.neighbors(i) {
                let _ = write!(out, " {j}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses the `conet-graph v1` text format.
    pub fn from_text(text: &str) -> Result<Self, GraphError> {
        let perr = |line: usize, msg: &str| GraphError::Parse { line, msg: msg.to_string() };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| perr(1, "missing header"))?;
        let rest = header.strip_prefix(GRAPH_HEADER).ok_or_else(|| perr(1, "bad magic"))?;
        let fields: Vec<&str> = rest.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(perr(1, "expected `<n> <k> <seed>`"));
        }
        let n: usize = fields[0].parse().map_err(|_| perr(1, "bad n"))?;
        let k: usize = fields[1].parse().map_err(|_| perr(1, "bad k"))?;
        let seed: u64 = fields[2].parse().map_err(|_| perr(1, "bad seed"))?;
        let mut lists = Vec::with_capacity(n);
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            if line.is_empty() {
                continue;
            }
            let (id, nbrs) = line.split_once(':').ok_or_else(|| perr(lineno, "missing ':'"))?;
            let id: usize = id.trim().parse().map_err(|_| perr(lineno, "bad node id"))?;
            if id != lists.len() {
                return Err(perr(lineno, "node ids must be consecutive from 0"));
            }
            let row = nbrs
                .split_whitespace()
                .map(|t| t.parse::<NodeId>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| perr(lineno, "bad neighbor id"))?;
            if row.len() != k {
                return Err(perr(lineno, "wrong neighbor count"));
            }
            lists.push(row);
        }
        if lists.len() != n {
            return Err(perr(n + 1, "wrong node count"));
        }
        Self::from_adjacency(lists, seed)
    }
}

/// Breadth-first distances from `source`; unreachable nodes get `u32::MAX`.
pub fn bfs_distances(graph: &ConceptGraph, source: NodeId) -> Vec<u32> {
    let mut dist = vec![u32::MAX; graph.n_nodes()];
    let mut queue = VecDeque::new();
    dist[source as usize] = 0;
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let du = dist[u as usize];
        for &v in graph.neighbors(u) {
            if dist[v as usize] == u32::MAX {
                dist[v as usize] = du + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Shortest-path distance from `source` to `target`, stopping early.
fn bfs_pair_distance(graph: &ConceptGraph, source: NodeId, target: NodeId, dist: &mut [u32]) -> u32 {
    dist.fill(u32::MAX);
    let mut queue = VecDeque::new();
    dist[source as usize] = 0;
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let du = dist[u as usize];
        if u == target {
            return du;
        }
        for &v in graph.neighbors(u) {
            if dist[v as usize] == u32::MAX {
                dist[v as usize] = du + 1;
                queue.push_back(v);
            }
        }
    }
    u32::MAX
}

/// Generates a simple connected `k`-regular graph on `n` nodes.
///
/// Stubs are paired at random; a pair that would create a self-loop or a
/// repeated edge is redrawn, and the whole pairing restarts when no valid pair
/// remains or when the finished graph is disconnected.
pub fn generate_regular_graph(n: usize, k: usize, seed: u64) -> Result<ConceptGraph, GraphError> {
    if k < 2 || k >= n {
        return Err(GraphError::InfeasibleDegree { n, k });
    }
    if (n * k) % 2 == 1 {
        return Err(GraphError::OddDegreeSum { n, k });
    }
    if n > NodeId::MAX as usize {
        return Err(GraphError::InfeasibleDegree { n, k });
    }
    if k == n - 1 {
        // The complete graph is the only simple (n-1)-regular graph.
        let lists = (0..n as NodeId).map(|i| (0..n as NodeId).filter(|&j| j != i).collect()).collect();
        return ConceptGraph::from_adjacency(lists, seed);
    }

    let mut rng = keyed_stream(Domain::Graph, seed, n as u64, k as u64);
    for _ in 0..MAX_RESTARTS {
        if let Some(lists) = try_pairing(n, k, &mut rng) {
            let mut adjacency = Vec::with_capacity(n * k);
            for mut row in lists {
                row.sort_unstable();
                adjacency.extend_from_slice(&row);
            }
            let graph = ConceptGraph { n, k, seed, adjacency };
            if graph.is_connected() {
                return Ok(graph);
            }
        }
    }
    Err(GraphError::GenerationFailure { restarts: MAX_RESTARTS })
}

fn try_pairing<R: Rng>(n: usize, k: usize, rng: &mut R) -> Option<Vec<Vec<NodeId>>> {
    let mut stubs: Vec<NodeId> = (0..n as NodeId).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let mut lists: Vec<Vec<NodeId>> = vec![Vec::with_capacity(k); n];
    let mut misses = 0usize;
    while !stubs.is_empty() {
        let len = stubs.len();
        let a = rng.random_range(0..len);
        let mut b = rng.random_range(0..len - 1);
        if b >= a {
            b += 1;
        }
        let (u, v) = (stubs[a], stubs[b]);
        if u != v && !lists[u as usize].contains(&v) {
            lists[u as usize].push(v);
            lists[v as usize].push(u);
            let (hi, lo) = if a > b { (a, b) } else { (b, a) };
            stubs.swap_remove(hi);
            stubs.swap_remove(lo);
            misses = 0;
        } else {
            misses += 1;
            if misses > 64 {
                if !has_valid_pair(&stubs, &lists) {
                    return None;
                }
                misses = 0;
            }
        }
    }
    Some(lists)
}

fn has_valid_pair(stubs: &[NodeId], lists: &[Vec<NodeId>]) -> bool {
    let mut distinct: Vec<NodeId> = stubs.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    for (x, &u) in distinct.iter().enumerate() {
        for &v in &distinct[x + 1..] {
            if !lists[u as usize].contains(&v) {
                return true;
            }
        }
    }
    false
}

/// A reasoning task: walk from `q` until `a` is entered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub q: NodeId,
    pub a: NodeId,
    pub distance: u32,
}

/// Draws an ordered `(q, a)` pair uniformly among pairs whose shortest-path
/// distance lies in `[d_min, d_max]`.
pub fn select_task(graph: &ConceptGraph, seed: u64, d_min: u32, d_max: u32) -> Result<TaskInstance, GraphError> {
    let n = graph.n_nodes();
    if d_min < 1 || d_min > d_max || d_max as usize >= n {
        return Err(GraphError::InvalidWindow { d_min, d_max, n });
    }
    let mut rng = keyed_stream(Domain::Task, seed, d_min as u64, d_max as u64);
    let mut scratch = vec![u32::MAX; n];
    for _ in 0..10 * n {
        let q = rng.random_range(0..n as NodeId);
        let mut a = rng.random_range(0..n as NodeId - 1);
        if a >= q {
            a += 1;
        }
        let d = bfs_pair_distance(graph, q, a, &mut scratch);
        if (d_min..=d_max).contains(&d) {
            return Ok(TaskInstance { q, a, distance: d });
        }
    }

    // Exhaustive fallback: count feasible pairs, then locate a uniform one.
    let in_window = |d: u32| (d_min..=d_max).contains(&d);
    let mut total: u64 = 0;
    for q in 0..n as NodeId {
        total += bfs_distances(graph, q).into_iter().filter(|&d| in_window(d)).count() as u64;
    }
    if total == 0 {
        return Err(GraphError::NoFeasiblePair { d_min, d_max });
    }
    let mut target = rng.random_range(0..total);
    for q in 0..n as NodeId {
        let dist = bfs_distances(graph, q);
        for (a, &d) in dist.iter().enumerate() {
            if in_window(d) {
                if target == 0 {
                    return Ok(TaskInstance { q, a: a as NodeId, distance: d });
                }
                target -= 1;
            }
        }
    }
    unreachable!("feasible pair count and enumeration disagree")
}
