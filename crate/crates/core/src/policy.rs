//! Learnable transition strengths and the group-relative policy-gradient update.
//!
//! A walker at node `i` moves to neighbor `j` with probability
//! `theta[i->j] / sum_k theta[i->k]`. Strengths are stored per directed edge in
//! a flat `n * k` array addressed by `(node, slot)`, where `slot` is the index
//! of the neighbor in the graph's ascending neighbor row.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ConceptGraph, NodeId};
use crate::rng::{keyed_stream, Domain};

const CHECKPOINT_MAGIC: &str = "conet-theta v1";

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid update config: {0}")]
    InvalidConfig(String),
    #[error("path is not a walk on the graph: {0}")]
    NotAWalk(String),
    #[error("checkpoint does not match graph: {0}")]
    CheckpointMismatch(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// How rollout advantages are formed from rewards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    /// `A = r - mean(r)`
    #[default]
    MeanBaseline,
    /// `A = (r - mean(r)) / max(std(r), 1e-8)`
    MeanStd,
}

/// Initial strength of every directed edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaInit {
    Constant(f64),
    UniformRandom { lo: f64, hi: f64 },
}

impl Default for ThetaInit {
    fn default() -> Self {
        ThetaInit::Constant(0.5)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpdateConfig {
    pub learning_rate: f64,
    pub advantage_mode: AdvantageMode,
    pub theta_init: ThetaInit,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        UpdateConfig {
            learning_rate: 0.01,
            advantage_mode: AdvantageMode::MeanBaseline,
            theta_init: ThetaInit::default(),
            theta_min: 1e-6,
            theta_max: 1.0 - 1e-6,
        }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |msg: String| Err(PolicyError::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0 < self.theta_min && self.theta_min < self.theta_max && self.theta_max < 1.0) {
            return bad(format!("need 0 < theta_min < theta_max < 1, got [{}, {}]", self.theta_min, self.theta_max));
        }
        match self.theta_init {
            ThetaInit::Constant(c) if !(c > 0.0 && c < 1.0) => bad(format!("constant init {c} outside (0, 1)")),
            ThetaInit::UniformRandom { lo, hi } if !(0.0 <= lo && lo < hi && hi < 1.0) => {
                bad(format!("uniform init [{lo}, {hi}) outside [0, 1)"))
            }
            _ => Ok(()),
        }
    }
}

/// Transition strengths bound to one graph.
#[derive(Clone, Debug)]
pub struct Policy {
    graph: Arc<ConceptGraph>,
    theta: Vec<f64>,
    row_sums: Vec<f64>,
}

impl PartialEq for Policy {
    fn eq(&self, other: &Self) -> bool {
        self.graph.fingerprint() == other.graph.fingerprint()
            && self.theta.len() == other.theta.len()
            && self.theta.iter().zip(&other.theta).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Policy {
    /// Draws the initial strengths; identical `(graph, config, seed)` gives an
    /// identical table.
    pub fn init(graph: Arc<ConceptGraph>, config: &UpdateConfig, seed: u64) -> Result<Self, PolicyError> {
        config.validate()?;
        let len = graph.n_nodes() * graph.degree();
        let clip = |x: f64| x.clamp(config.theta_min, config.theta_max);
        let theta = match config.theta_init {
            ThetaInit::Constant(c) => vec![clip(c); len],
            ThetaInit::UniformRandom { lo, hi } => {
                let mut rng = keyed_stream(Domain::ThetaInit, seed, 0, 0);
                (0..len).map(|_| clip(rng.random_range(lo..hi))).collect()
            }
        };
        Ok(Self::from_parts(graph, theta))
    }

    /// Wraps an explicit strength table (node-major, ascending-neighbor order).
    pub fn from_theta(graph: Arc<ConceptGraph>, theta: Vec<f64>) -> Result<Self, PolicyError> {
        let len = graph.n_nodes() * graph.degree();
        if theta.len() != len {
            return Err(PolicyError::CheckpointMismatch(format!(
                "{} weights for a graph with {len} directed edges",
                theta.len()
            )));
        }
        if let Some(x) = theta.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
            return Err(PolicyError::Malformed(format!("non-positive weight {x}")));
        }
        Ok(Self::from_parts(graph, theta))
    }

    fn from_parts(graph: Arc<ConceptGraph>, theta: Vec<f64>) -> Self {
        let mut policy = Policy { row_sums: vec![0.0; graph.n_nodes()], graph, theta };
        policy.refresh_row_sums();
        policy
    }

    fn refresh_row_sums(&mut self) {
        let k = self.graph.degree();
        for (sum, row) in self.row_sums.iter_mut().zip(self.theta.chunks_exact(k)) {
            *sum = row.iter().sum();
        }
    }

    pub fn graph(&self) -> &Arc<ConceptGraph> {
        &self.graph
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    #[inline]
    pub fn theta_row(&self, node: NodeId) -> &[f64] {
        let k = self.graph.degree();
        let start = node as usize * k;
        &self.theta[start..start + k]
    }

    #[inline]
    pub fn row_sum(&self, node: NodeId) -> f64 {
        self.row_sums[node as usize]
    }

    /// Strength of the directed edge `from -> to`, if the nodes are adjacent.
    pub fn weight(&self, from: NodeId, to: NodeId) -> Option<f64> {
        self.graph.slot_of(from, to).map(|s| self.theta_row(from)[s])
    }

    /// Transition probabilities over `node`'s neighbors, in neighbor order.
    pub fn transition_probs(&self, node: NodeId) -> Vec<f64> {
        let sum = self.row_sum(node);
        self.theta_row(node).iter().map(|t| t / sum).collect()
    }

    /// Picks the next node given a uniform variate `u` in `[0, 1)`.
    #[inline]
    pub fn step_from(&self, node: NodeId, u: f64) -> NodeId {
        let row = self.theta_row(node);
        let nbrs = self.graph.neighbors(node);
        let target = u * self.row_sum(node);
        let mut acc = 0.0;
        for (s, &t) in row.iter().enumerate() {
            acc += t;
            if target < acc {
                return nbrs[s];
            }
        }
        nbrs[nbrs.len() - 1]
    }

    /// Validates a walk and returns its `(node, slot)` steps.
    fn walk_slots<'a>(&'a self, path: &'a [NodeId]) -> Result<impl Iterator<Item = (NodeId, usize)> + 'a, PolicyError> {
        if path.len() < 2 {
            return Err(PolicyError::NotAWalk(format!("path has {} nodes; need at least 2", path.len())));
        }
        let n = self.graph.n_nodes();
        if let Some(bad) = path.iter().find(|&&v| v as usize >= n) {
            return Err(PolicyError::NotAWalk(format!("node {bad} out of range")));
        }
        for w in path.windows(2) {
            if self.graph.slot_of(w[0], w[1]).is_none() {
                return Err(PolicyError::NotAWalk(format!("{} and {} are not adjacent", w[0], w[1])));
            }
        }
        Ok(path.windows(2).map(move |w| (w[0], self.graph.slot_of(w[0], w[1]).expect("validated"))))
    }

    /// Log-probability of following `path` step by step.
    pub fn log_prob(&self, path: &[NodeId]) -> Result<f64, PolicyError> {
        Ok(self.walk_slots(path)?.map(|(i, s)| (self.theta_row(i)[s] / self.row_sum(i)).ln()).sum())
    }

    /// Gradient of [`Policy::log_prob`] with respect to every strength it touches.
    ///
    /// Each step `i -> j` adds `1/theta_ij - 1/S_i` to `(i, j)` and `-1/S_i` to
    /// every other out-edge of `i`. Edges never leaving a visited node are absent.
    pub fn log_prob_gradient(&self, path: &[NodeId]) -> Result<BTreeMap<(NodeId, NodeId), f64>, PolicyError> {
        let mut grad = BTreeMap::new();
        for (i, s) in self.walk_slots(path)? {
            let sum = self.row_sum(i);
            let row = self.theta_row(i);
            for (slot, &j) in self.graph.neighbors(i).iter().enumerate() {
                let g = if slot == s { 1.0 / row[slot] - 1.0 / sum } else { -1.0 / sum };
                *grad.entry((i, j)).or_insert(0.0) += g;
            }
        }
        Ok(grad)
    }

    /// `theta <- clip(theta + lr * sum_m A_m * grad log pi(path_m))`.
    ///
    /// Contributions are accumulated in rollout order. All paths are validated
    /// before any weight changes, so an error leaves the policy untouched.
    pub fn apply_update<'a, I>(&mut self, rollouts: I, config: &UpdateConfig) -> Result<(), PolicyError>
    where
        I: IntoIterator<Item = (&'a [NodeId], f64)>,
    {
        config.validate()?;
        let k = self.graph.degree();
        // Per directed edge: sum of A/theta over traversals. Per node: sum of A
        // over departures, which multiplies -1/S for every out-edge.
        let mut edge_acc = vec![0.0f64; self.theta.len()];
        let mut node_acc = vec![0.0f64; self.graph.n_nodes()];
        let mut any = false;
        for (path, adv) in rollouts {
            let steps = self.walk_slots(path)?;
            if adv == 0.0 {
                continue;
            }
            any = true;
            for (i, s) in steps {
                let idx = i as usize * k + s;
                edge_acc[idx] += adv / self.theta[idx];
                node_acc[i as usize] += adv;
            }
        }
        if !any {
            return Ok(());
        }
        let lr = config.learning_rate;
        for (i, &w) in node_acc.iter().enumerate() {
            if w == 0.0 && edge_acc[i * k..(i + 1) * k].iter().all(|&e| e == 0.0) {
                continue;
            }
            let sum = self.row_sums[i];
            let row = &mut self.theta[i * k..(i + 1) * k];
            for (t, &e) in row.iter_mut().zip(&edge_acc[i * k..(i + 1) * k]) {
                *t = (*t + lr * (e - w / sum)).clamp(config.theta_min, config.theta_max);
            }
        }
        self.refresh_row_sums();
        Ok(())
    }

    /// Writes the `conet-theta v1` checkpoint: one ASCII header line followed
    /// by little-endian `f64` strengths in node-major, ascending-neighbor order.
    pub fn write_checkpoint<W: Write>(&self, step: u64, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "{CHECKPOINT_MAGIC} {} {} {} {:016x}",
            self.graph.n_nodes(),
            self.graph.degree(),
            step,
            self.graph.fingerprint()
        )?;
        let mut buf = Vec::with_capacity(self.theta.len() * 8);
        for t in &self.theta {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        out.write_all(&buf)
    }

    /// Reads a checkpoint written by [`Policy::write_checkpoint`] and binds it
    /// to `graph`, returning the policy and the step it was saved at.
    pub fn read_checkpoint<R: Read>(graph: Arc<ConceptGraph>, mut input: R) -> Result<(Self, u64), PolicyError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| PolicyError::Malformed("missing header line".into()))?;
        let header =
            std::str::from_utf8(&bytes[..nl]).map_err(|_| PolicyError::Malformed("header is not UTF-8".into()))?;
        let rest = header.strip_prefix(CHECKPOINT_MAGIC).ok_or_else(|| PolicyError::Malformed("bad magic".into()))?;
        let fields: Vec<&str> = rest.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(PolicyError::Malformed("expected `<n> <k> <step> <graph>`".into()));
        }
        let parse = |s: &str, what: &str| s.parse::<u64>().map_err(|_| PolicyError::Malformed(format!("bad {what}")));
        let n = parse(fields[0], "n")? as usize;
        let k = parse(fields[1], "k")? as usize;
        let step = parse(fields[2], "step")?;
        let fp = u64::from_str_radix(fields[3], 16).map_err(|_| PolicyError::Malformed("bad graph digest".into()))?;
        if n != graph.n_nodes() || k != graph.degree() {
            return Err(PolicyError::CheckpointMismatch(format!(
                "checkpoint is for n={n}, k={k}; graph has n={}, k={}",
                graph.n_nodes(),
                graph.degree()
            )));
        }
        if fp != graph.fingerprint() {
            return Err(PolicyError::CheckpointMismatch(format!(
                "graph digest {fp:016x} != {:016x}",
                graph.fingerprint()
            )));
        }
        let body = &bytes[nl + 1..];
        if body.len() != n * k * 8 {
            return Err(PolicyError::Malformed(format!("expected {} weight bytes, found {}", n * k * 8, body.len())));
        }
        let theta = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        Ok((Self::from_theta(graph, theta)?, step))
    }
}
