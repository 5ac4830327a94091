//! Exact first-passage distribution by propagating node occupancy.

use serde::{Deserialize, Serialize};

use crate::graph::TaskInstance;
use crate::policy::Policy;
use crate::sampler::Batch;

/// `probs[L - 1]` is the probability of first entering A at step `L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstPassage {
    pub probs: Vec<f64>,
    pub failure_mass: f64,
}

impl FirstPassage {
    pub fn l_max(&self) -> u32 {
        self.probs.len() as u32
    }

    /// Empirical frequencies of a sampled batch on the same support.
    pub fn empirical(batch: &Batch) -> Self {
        let m = batch.len() as f64;
        let mut counts = vec![0u64; batch.l_max as usize];
        let mut fails = 0u64;
        for r in &batch.rollouts {
            if r.success {
                counts[r.length as usize - 1] += 1;
            } else {
                fails += 1;
            }
        }
        FirstPassage { probs: counts.into_iter().map(|c| c as f64 / m).collect(), failure_mass: fails as f64 / m }
    }

    /// Total-variation distance over `{1, ..., l_max, fail}`.
    pub fn total_variation(&self, other: &FirstPassage) -> f64 {
        assert_eq!(self.probs.len(), other.probs.len(), "support mismatch");
        let body: f64 = self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).sum();
        0.5 * (body + (self.failure_mass - other.failure_mass).abs())
    }
}

/// Exact `P(L)` for `L = 1..=l_max` with A absorbing. Costs `O(l_max * N * K)`.
///
/// The failure mass is the occupancy still in flight after `l_max` steps.
pub fn exact_first_passage(policy: &Policy, task: &TaskInstance, l_max: u32) -> FirstPassage {
    let graph = policy.graph();
    let n = graph.n_nodes();
    let mut occ = vec![0.0f64; n];
    let mut next = vec![0.0f64; n];
    occ[task.q as usize] = 1.0;
    let mut probs = Vec::with_capacity(l_max as usize);
    for _ in 0..l_max {
        next.fill(0.0);
        for (i, &mass) in occ.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let node = i as u32;
            let sum = policy.row_sum(node);
            for (&j, &t) in graph.neighbors(node).iter().zip(policy.theta_row(node)) {
                next[j as usize] += mass * t / sum;
            }
        }
        let arrived = std::mem::replace(&mut next[task.a as usize], 0.0);
        probs.push(arrived);
        std::mem::swap(&mut occ, &mut next);
    }
    FirstPassage { probs, failure_mass: occ.iter().sum() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_regular_graph, select_task, ConceptGraph};
    use crate::policy::{ThetaInit, UpdateConfig};
    use std::sync::Arc;

    fn triangle() -> Arc<ConceptGraph> {
        Arc::new(ConceptGraph::from_adjacency(vec![vec![1, 2], vec![0, 2], vec![0, 1]], 0).unwrap())
    }

    #[test]
    fn single_edge_forces_arrival() {
        // K_2 is 1-regular, which the generator excludes; build it by hand.
        let g = Arc::new(ConceptGraph::from_adjacency(vec![vec![1], vec![0]], 0).unwrap());
        let p = Policy::from_theta(g, vec![0.5, 0.5]).unwrap();
        let fp = exact_first_passage(&p, &TaskInstance { q: 0, a: 1, distance: 1 }, 5);
        assert_eq!(fp.probs[0], 1.0);
        assert!(fp.probs[1..].iter().all(|&x| x == 0.0));
        assert_eq!(fp.failure_mass, 0.0);
    }

    #[test]
    fn triangle_closed_form() {
        // From Q the walker hits A w.p. 1/2, otherwise moves to the third node,
        // from which the same holds: P(L) = 2^-L.
        let p = Policy::init(triangle(), &UpdateConfig::default(), 0).unwrap();
        let fp = exact_first_passage(&p, &TaskInstance { q: 0, a: 1, distance: 1 }, 40);
        for (l, &x) in fp.probs.iter().enumerate() {
            assert_eq!(x, 0.5f64.powi(l as i32 + 1));
        }
        assert_eq!(fp.failure_mass, 0.5f64.powi(40));
    }

    #[test]
    fn probability_is_conserved() {
        let cfg = UpdateConfig { theta_init: ThetaInit::UniformRandom { lo: 0.01, hi: 0.99 }, ..Default::default() };
        for seed in 0..5 {
            let g = Arc::new(generate_regular_graph(40, 3, seed).unwrap());
            let task = select_task(&g, seed, 2, 5).unwrap();
            let p = Policy::init(g, &cfg, seed).unwrap();
            for l_max in [1, 7, 200] {
                let fp = exact_first_passage(&p, &task, l_max);
                let total: f64 = fp.probs.iter().sum::<f64>() + fp.failure_mass;
                assert!((total - 1.0).abs() < 1e-12, "{total}");
                let before = (task.distance as usize - 1).min(fp.probs.len());
                assert!(fp.probs[..before].iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn total_variation_basics() {
        let a = FirstPassage { probs: vec![0.5, 0.25], failure_mass: 0.25 };
        let b = FirstPassage { probs: vec![0.25, 0.25], failure_mass: 0.5 };
        assert_eq!(a.total_variation(&a), 0.0);
        assert_eq!(a.total_variation(&b), 0.25);
    }
}
