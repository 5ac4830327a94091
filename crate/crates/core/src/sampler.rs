//! Rollout sampling, rewards and group-relative advantages.

use std::io::{self, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, TaskInstance};
use crate::policy::{AdvantageMode, Policy};
use crate::rng::rollout_stream;

/// Lower bound on the standard deviation in [`AdvantageMode::MeanStd`].
pub const STD_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// 1 on success, 0 otherwise.
    #[default]
    Binary,
    /// `success * (1 - L / l_max)`.
    LengthShaped,
}

impl RewardMode {
    pub fn reward(self, success: bool, length: u32, l_max: u32) -> f64 {
        match (self, success) {
            (_, false) => 0.0,
            (RewardMode::Binary, true) => 1.0,
            (RewardMode::LengthShaped, true) => 1.0 - f64::from(length) / f64::from(l_max),
        }
    }
}

/// One sampled Q -> A walk.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// Visited nodes, starting at Q. `path.len() == length + 1`.
    pub path: Vec<NodeId>,
    pub length: u32,
    pub success: bool,
    pub reward: f64,
    pub advantage: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub step: u64,
    pub l_max: u32,
    pub rollouts: Vec<Rollout>,
    pub mean_reward: f64,
    pub accuracy: f64,
}

impl Batch {
    pub fn from_rollouts(step: u64, l_max: u32, rollouts: Vec<Rollout>) -> Self {
        let m = rollouts.len() as f64;
        let successes = rollouts.iter().filter(|r| r.success).count() as f64;
        let total: f64 = rollouts.iter().map(|r| r.reward).sum();
        Batch { step, l_max, mean_reward: total / m, accuracy: successes / m, rollouts }
    }

    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    /// `(path, advantage)` pairs in rollout order, as consumed by
    /// [`Policy::apply_update`].
    pub fn update_terms(&self) -> impl Iterator<Item = (&[NodeId], f64)> {
        self.rollouts.iter().map(|r| (r.path.as_slice(), r.advantage))
    }

    /// Writes `step,m,L,success,reward,advantage` records; with `with_paths`
    /// a seventh column holds the space-separated node sequence.
    pub fn write_csv<W: Write>(&self, mut out: W, with_paths: bool) -> io::Result<()> {
        if with_paths {
            writeln!(out, "step,m,L,success,reward,advantage,path")?;
        } else {
            writeln!(out, "step,m,L,success,reward,advantage")?;
        }
        for (m, r) in self.rollouts.iter().enumerate() {
            write!(out, "{},{},{},{},{:.16e},{:.16e}", self.step, m, r.length, r.success as u8, r.reward, r.advantage)?;
            if with_paths {
                let nodes: Vec<String> = r.path.iter().map(|v| v.to_string()).collect();
                write!(out, ",{}", nodes.join(" "))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Walks from `task.q` until `task.a` is entered or `l_max` steps are taken.
pub fn sample_path<R: Rng>(
    policy: &Policy,
    task: &TaskInstance,
    l_max: u32,
    reward_mode: RewardMode,
    rng: &mut R,
) -> Rollout {
    let mut path = Vec::with_capacity(64);
    path.push(task.q);
    let mut node = task.q;
    let mut success = false;
    for _ in 0..l_max {
        node = policy.step_from(node, rng.random::<f64>());
        path.push(node);
        if node == task.a {
            success = true;
            break;
        }
    }
    let length = (path.len() - 1) as u32;
    Rollout { reward: reward_mode.reward(success, length, l_max), path, length, success, advantage: 0.0 }
}

/// Samples `m` rollouts on the current rayon pool.
///
/// Rollout `i` draws from the stream keyed by `(seed, step, i)`, so the batch
/// does not depend on how many threads the pool has.
pub fn sample_batch(
    policy: &Policy,
    task: &TaskInstance,
    m: usize,
    l_max: u32,
    reward_mode: RewardMode,
    seed: u64,
    step: u64,
) -> Batch {
    assert!(m >= 1 && l_max >= 1, "need m >= 1 and l_max >= 1");
    let rollouts: Vec<Rollout> = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rollout_stream(seed, step, i);
            sample_path(policy, task, l_max, reward_mode, &mut rng)
        })
        .collect();
    Batch::from_rollouts(step, l_max, rollouts)
}

/// Runs `f` on a dedicated pool of `workers` threads (0 = rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("thread pool").install(f)
}

/// Fills in every rollout's advantage from the batch rewards.
pub fn compute_advantages(batch: &mut Batch, mode: AdvantageMode) {
    let first = match batch.rollouts.first() {
        Some(r) => r.reward,
        None => return,
    };
    if batch.rollouts.iter().all(|r| r.reward == first) {
        for r in &mut batch.rollouts {
            r.advantage = 0.0;
        }
        return;
    }
    let m = batch.rollouts.len() as f64;
    let mean = batch.rollouts.iter().map(|r| r.reward).sum::<f64>() / m;
    let scale = match mode {
        AdvantageMode::MeanBaseline => 1.0,
        AdvantageMode::MeanStd => {
            let var = batch.rollouts.iter().map(|r| (r.reward - mean).powi(2)).sum::<f64>() / m;
            var.sqrt().max(STD_EPSILON)
        }
    };
    for r in &mut batch.rollouts {
        r.advantage = (r.reward - mean) / scale;
    }
}
