use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use super::{hist_file, write_file, ExperimentError};
use crate::graph::{ConceptGraph, TaskInstance};
use crate::metrics::{length_histogram, Binning, LengthHistogram};
use crate::policy::Policy;
use crate::sampler::{sample_batch, Batch, RewardMode};

#[derive(Clone, Debug)]
pub struct ReplayOutput {
    /// Step stored in the checkpoint.
    pub checkpoint_step: u64,
    pub batch: Batch,
    /// Unit-bin histogram of the batch, labelled `checkpoint_step + 1`.
    pub histogram: LengthHistogram,
}

impl ReplayOutput {
    /// Writes `hist_<step>.json` (and, if requested, the rollout CSV) into `dir`.
    pub fn write(&self, dir: &Path, with_rollouts: bool, with_paths: bool) -> Result<(), ExperimentError> {
        let json = serde_json::to_string(&self.histogram).expect("histogram serializes");
        write_file(&dir.join(hist_file(self.histogram.step)), json.as_bytes())?;
        if with_rollouts {
            let mut buf = Vec::new();
            self.batch.write_csv(&mut buf, with_paths).expect("writing to memory");
            write_file(&dir.join(super::rollouts_file(self.histogram.step)), &buf)?;
        }
        Ok(())
    }
}

/// Samples a fresh batch of `m` rollouts under frozen checkpointed strengths.
///
/// The batch draws from the rollout streams of step `s + 1`, where `s` is the
/// checkpoint step. Replaying a training checkpoint with the run's train seed
/// and batch size therefore reproduces the next step's batch exactly.
#[allow(clippy::too_many_arguments)]
pub fn replay(
    graph: Arc<ConceptGraph>,
    checkpoint: &Path,
    task: &TaskInstance,
    m: usize,
    l_max: u32,
    reward_mode: RewardMode,
    seed: u64,
    workers: usize,
) -> Result<ReplayOutput, ExperimentError> {
    if m == 0 || l_max == 0 {
        return Err(ExperimentError::ConfigInvalid("m and l_max must be positive".into()));
    }
    let n = graph.n_nodes() as u32;
    if task.q >= n || task.a >= n {
        return Err(ExperimentError::ConfigInvalid(format!("task {}->{} is outside the graph", task.q, task.a)));
    }
    let file = File::open(checkpoint).map_err(|e| ExperimentError::io(checkpoint, e))?;
    let (policy, checkpoint_step) = Policy::read_checkpoint(graph, BufReader::new(file))?;
    let step = checkpoint_step + 1;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::ConfigInvalid(format!("thread pool: {e}")))?;
    let batch = pool.install(|| sample_batch(&policy, task, m, l_max, reward_mode, seed, step));
    let histogram = length_histogram(&batch, Binning::Linear { width: 1 })?;
    Ok(ReplayOutput { checkpoint_step, batch, histogram })
}
