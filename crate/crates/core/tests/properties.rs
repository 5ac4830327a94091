use std::collections::VecDeque;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use conet_core::metrics::fit;
use conet_core::{
    compute_advantages, generate_regular_graph, sample_batch, select_task, AdvantageMode, Binning, ConceptGraph,
    FitModel, LengthHistogram, NodeId, Policy, Population, RewardMode, ThetaInit, UpdateConfig,
};

/// Plain breadth-first search written against the adjacency lists only.
fn bfs_oracle(graph: &ConceptGraph, from: NodeId, to: NodeId) -> Option<u32> {
    let mut dist = vec![u32::MAX; graph.n_nodes()];
    let mut queue = VecDeque::from([from]);
    dist[from as usize] = 0;
    while let Some(u) = queue.pop_front() {
        if u == to {
            return Some(dist[u as usize]);
        }
        for &v in graph.neighbors(u) {
            if dist[v as usize] == u32::MAX {
                dist[v as usize] = dist[u as usize] + 1;
                queue.push_back(v);
            }
        }
    }
    None
}

fn audit(graph: &ConceptGraph) {
    let (n, k) = (graph.n_nodes(), graph.degree());
    for i in 0..n as NodeId {
        let nbrs = graph.neighbors(i);
        assert_eq!(nbrs.len(), k);
        assert!(!nbrs.contains(&i), "self-loop at {i}");
        assert!(nbrs.windows(2).all(|w| w[0] < w[1]), "duplicate or unsorted row {i}");
        for &j in nbrs {
            assert!(graph.neighbors(j).contains(&i), "asymmetric edge {i}-{j}");
        }
    }
    assert!((1..n as NodeId).all(|j| bfs_oracle(graph, 0, j).is_some()), "disconnected");
}

#[test]
fn task_distance_matches_bfs_on_100_seeds() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..100u64 {
        let k = rng.random_range(3..=5);
        let n = 2 * rng.random_range(k..=100);
        let graph = generate_regular_graph(n, k, seed).unwrap();
        let task = select_task(&graph, seed, 2, 4).unwrap();
        assert_ne!(task.q, task.a);
        assert_eq!(bfs_oracle(&graph, task.q, task.a), Some(task.distance), "seed {seed}");
        assert!((2..=4).contains(&task.distance));
    }
}

#[test]
fn fifty_node_task_matches_bfs() {
    let graph = generate_regular_graph(50, 4, 3).unwrap();
    let task = select_task(&graph, 3, 2, 5).unwrap();
    assert_eq!(bfs_oracle(&graph, task.q, task.a), Some(task.distance));
}

#[test]
fn complete_graph_task_is_any_distinct_pair() {
    for k in 2..7 {
        let graph = generate_regular_graph(k + 1, k, 5).unwrap();
        let task = select_task(&graph, 9, 1, 1).unwrap();
        assert_ne!(task.q, task.a);
        assert_eq!(task.distance, 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_graphs_pass_audit(half_n in 3usize..120, k in 2usize..7, seed in any::<u64>()) {
        let n = 2 * half_n;
        prop_assume!(k < n);
        let graph = generate_regular_graph(n, k, seed).unwrap();
        audit(&graph);
        prop_assert_eq!(graph.n_edges(), n * k / 2);
        let again = generate_regular_graph(n, k, seed).unwrap();
        prop_assert_eq!(graph.adjacency(), again.adjacency());
    }
}

#[test]
fn random_rows_normalize() {
    let graph = Arc::new(generate_regular_graph(2000, 5, 1).unwrap());
    let cfg = UpdateConfig { theta_init: ThetaInit::UniformRandom { lo: 1e-6, hi: 1.0 - 1e-6 }, ..Default::default() };
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let policy = Policy::init(graph.clone(), &cfg, seed).unwrap();
        for i in 0..2000 {
            let sum: f64 = policy.transition_probs(i).iter().sum();
            worst = worst.max((sum - 1.0).abs());
        }
    }
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn updates_respect_clip_and_baseline() {
    let graph = Arc::new(generate_regular_graph(60, 3, 4).unwrap());
    let task = select_task(&graph, 4, 3, 3).unwrap();
    let cfg = UpdateConfig { learning_rate: 0.5, theta_min: 0.01, theta_max: 0.9, ..Default::default() };
    let mut policy = Policy::init(graph, &cfg, 0).unwrap();
    for step in 1..=40 {
        let mut batch = sample_batch(&policy, &task, 300, 40, RewardMode::Binary, 8, step);
        compute_advantages(&mut batch, AdvantageMode::MeanBaseline);
        let total: f64 = batch.rollouts.iter().map(|r| r.advantage).sum();
        assert!(total.abs() <= 1e-9, "step {step}: sum of advantages {total}");
        for r in &batch.rollouts {
            assert_eq!(r.path.len(), r.length as usize + 1);
            if r.success {
                assert_eq!(*r.path.last().unwrap(), task.a);
                assert!(!r.path[..r.path.len() - 1].contains(&task.a));
            } else {
                assert_eq!(r.length, 40);
            }
        }
        policy.apply_update(batch.update_terms(), &cfg).unwrap();
        let (lo, hi) = policy.theta().iter().fold((f64::MAX, f64::MIN), |(a, b), &t| (a.min(t), b.max(t)));
        assert!(lo >= cfg.theta_min && hi <= cfg.theta_max, "step {step}: [{lo}, {hi}]");
    }
    // A large step size must have driven some weights to both bounds.
    assert!(policy.theta().contains(&0.9) && policy.theta().contains(&0.01));
}

fn sample_hist(weights: &[f64], n: usize, seed: u64) -> LengthHistogram {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    let cdf: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = weights.len() as u32;
    let lengths: Vec<(u32, bool)> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            (((cdf.partition_point(|&c| c < u) as u32) + 1).min(max), true)
        })
        .collect();
    LengthHistogram::from_lengths(0, Binning::Linear { width: 1 }, max, lengths).unwrap()
}

fn strictly_better(win: &conet_core::FitResult, lose: &conet_core::FitResult) -> bool {
    win.r_squared > lose.r_squared && win.ks_distance < lose.ks_distance
}

#[test]
fn correct_model_wins_on_synthetic_power_laws() {
    // Near gamma = 0.1 the two models differ by less than the KS noise of
    // 1e5 samples, so the larger size is used throughout.
    for (i, gamma) in [0.1, 0.3, 0.7, 1.0, 1.5, 2.0].into_iter().enumerate() {
        let weights: Vec<f64> = (1..=200).map(|l| f64::from(l).powf(-gamma)).collect();
        let hist = sample_hist(&weights, 1_000_000, i as u64).rebin(Binning::Logarithmic { factor: 1.25 }).unwrap();
        let pl = fit(&hist, (10, 150), Population::Success, FitModel::PowerLaw).unwrap();
        let ex = fit(&hist, (10, 150), Population::Success, FitModel::Exponential).unwrap();
        assert!(strictly_better(&pl, &ex), "gamma {gamma}: {pl:?} vs {ex:?}");
    }
}

#[test]
fn correct_model_wins_on_synthetic_exponentials() {
    const SAMPLES: usize = 100_000;
    for (i, alpha) in [0.1f64, 0.3, 0.7, 1.0, 1.5, 2.0].into_iter().enumerate() {
        let weights: Vec<f64> = (1..=200).map(|l| (-alpha * f64::from(l)).exp()).collect();
        let hist = sample_hist(&weights, SAMPLES, 100 + i as u64);
        // Window ends where the expected count per length drops to about 100.
        let top = ((SAMPLES as f64 * (1.0 - (-alpha).exp()) / 100.0).ln() / alpha).floor() as u32;
        let pl = fit(&hist, (1, top), Population::Success, FitModel::PowerLaw).unwrap();
        let ex = fit(&hist, (1, top), Population::Success, FitModel::Exponential).unwrap();
        assert!(strictly_better(&ex, &pl), "alpha {alpha} on [1, {top}]: {ex:?} vs {pl:?}");
    }
}

#[test]
fn exponential_on_short_support_recovers_rate() {
    let weights: Vec<f64> = (1..=60).map(|l| (-0.5 * f64::from(l)).exp()).collect();
    let hist = sample_hist(&weights, 1_000_000, 7);
    let f = fit(&hist, (1, 16), Population::Success, FitModel::Exponential).unwrap();
    assert!((f.exponent - 0.5).abs() <= 0.02, "{}", f.exponent);
}
