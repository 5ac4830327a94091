use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use super::{
    checkpoint_file, hist_file, rollouts_file, write_file, ExperimentConfig, ExperimentError, RunManifest, StepEntry,
    CONFIG_FILE, GRAPH_FILE, MANIFEST_FILE, METRICS_FILE, TASK_FILE,
};
use crate::graph::{generate_regular_graph, select_task, ConceptGraph, TaskInstance};
use crate::metrics::{step_metrics, METRICS_CSV_HEADER};
use crate::policy::Policy;
use crate::sampler::{compute_advantages, sample_batch};

/// Runs `config.steps` training steps from scratch into `config.output_dir`.
///
/// Each step samples a batch under the current strengths, computes
/// advantages, records metrics and histograms, then applies the update.
/// Output files are a pure function of the configuration.
pub fn run_training(config: &ExperimentConfig) -> Result<RunManifest, ExperimentError> {
    config.validate()?;
    let (graph, task) = build_instance(config)?;
    let policy = Policy::init(graph.clone(), &config.update_config(), config.train_seed)?;
    write_static_artifacts(config, &graph, &task, &policy)?;
    train_from(config, task, policy, 0, Vec::new(), Vec::new())
}

/// Continues an interrupted run in `config.output_dir` from `checkpoint`.
///
/// Metrics rows up to the checkpoint step are kept verbatim; later rows are
/// regenerated, so the result matches an uninterrupted run byte for byte.
pub fn resume_training(config: &ExperimentConfig, checkpoint: &Path) -> Result<RunManifest, ExperimentError> {
    config.validate()?;
    let (graph, task) = build_instance(config)?;
    let file = File::open(checkpoint).map_err(|e| ExperimentError::io(checkpoint, e))?;
    let (policy, start) = Policy::read_checkpoint(graph.clone(), std::io::BufReader::new(file))?;
    if start > config.steps {
        return Err(ExperimentError::ConfigInvalid(format!(
            "checkpoint step {start} is beyond steps = {}",
            config.steps
        )));
    }
    let dir = &config.output_dir;
    let metrics_path = dir.join(METRICS_FILE);
    let text = std::fs::read_to_string(&metrics_path)
        .map_err(|e| ExperimentError::MissingArtifacts(format!("{}: {e}", metrics_path.display())))?;
    let rows: Vec<String> =
        text.lines().skip(1).filter(|l| !l.is_empty()).take(start as usize).map(str::to_string).collect();
    for (i, row) in rows.iter().enumerate() {
        if row.split(',').next() != Some(&(i as u64 + 1).to_string()) {
            return Err(ExperimentError::MissingArtifacts(format!("metrics.csv lacks step {}", i + 1)));
        }
    }
    if rows.len() as u64 != start {
        return Err(ExperimentError::MissingArtifacts(format!("metrics.csv lacks step {}", rows.len() + 1)));
    }

    let previous = RunManifest::load(dir).ok();
    let entries: Vec<StepEntry> = (1..=start)
        .map(|t| {
            previous.as_ref().and_then(|m| m.steps.iter().find(|e| e.step == t).cloned()).unwrap_or_else(|| StepEntry {
                step: t,
                histogram: hist_file(t),
                checkpoint: dir.join(checkpoint_file(t)).is_file().then(|| checkpoint_file(t)),
                rollouts: dir.join(rollouts_file(t)).is_file().then(|| rollouts_file(t)),
                wall_ms: 0.0,
            })
        })
        .collect();

    let initial = Policy::init(graph.clone(), &config.update_config(), config.train_seed)?;
    write_static_artifacts(config, &graph, &task, &initial)?;
    train_from(config, task, policy, start, rows, entries)
}

fn build_instance(config: &ExperimentConfig) -> Result<(Arc<ConceptGraph>, TaskInstance), ExperimentError> {
    let graph = Arc::new(generate_regular_graph(config.n, config.k, config.graph_seed)?);
    let task = select_task(&graph, config.task_seed, config.d_min, config.d_max)?;
    Ok((graph, task))
}

fn write_static_artifacts(
    config: &ExperimentConfig,
    graph: &ConceptGraph,
    task: &TaskInstance,
    initial: &Policy,
) -> Result<(), ExperimentError> {
    let dir = &config.output_dir;
    let json = serde_json::to_string_pretty(config).expect("config serializes");
    write_file(&dir.join(CONFIG_FILE), json.as_bytes())?;
    write_file(&dir.join(GRAPH_FILE), graph.to_text().as_bytes())?;
    write_file(&dir.join(TASK_FILE), serde_json::to_string(task).expect("task serializes").as_bytes())?;
    save_checkpoint(dir, initial, 0)
}

fn save_checkpoint(dir: &Path, policy: &Policy, step: u64) -> Result<(), ExperimentError> {
    let mut buf = Vec::new();
    policy.write_checkpoint(step, &mut buf).expect("writing to memory");
    write_file(&dir.join(checkpoint_file(step)), &buf)
}

fn train_from(
    config: &ExperimentConfig,
    task: TaskInstance,
    mut policy: Policy,
    start: u64,
    prior_rows: Vec<String>,
    mut entries: Vec<StepEntry>,
) -> Result<RunManifest, ExperimentError> {
    let dir = &config.output_dir;
    let update = config.update_config();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| ExperimentError::ConfigInvalid(format!("thread pool: {e}")))?;

    let metrics_path = dir.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(|e| ExperimentError::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let io_err = |e| ExperimentError::io(&metrics_path, e);
    writeln!(metrics, "{METRICS_CSV_HEADER}").map_err(io_err)?;
    for row in &prior_rows {
        writeln!(metrics, "{row}").map_err(io_err)?;
    }
    metrics.flush().map_err(io_err)?;

    for step in start + 1..=config.steps {
        let started = Instant::now();
        let mut batch = pool.install(|| {
            sample_batch(&policy, &task, config.m, config.l_max, config.reward_mode, config.train_seed, step)
        });
        compute_advantages(&mut batch, config.advantage_mode);
        let record = step_metrics(&batch)?;

        writeln!(metrics, "{}", record.csv_row()).map_err(io_err)?;
        metrics.flush().map_err(io_err)?;
        let hist = record.histogram.as_ref().expect("step_metrics attaches a histogram");
        let hist_name = hist_file(step);
        write_file(&dir.join(&hist_name), serde_json::to_string(hist).expect("histogram serializes").as_bytes())?;
        let rollouts = if config.dump_rollouts {
            let name = rollouts_file(step);
            let mut buf = Vec::new();
            batch.write_csv(&mut buf, config.dump_paths).expect("writing to memory");
            write_file(&dir.join(&name), &buf)?;
            Some(name)
        } else {
            None
        };

        policy.apply_update(batch.update_terms(), &update)?;

        let checkpoint = if step % config.snapshot_every == 0 || step == config.steps {
            save_checkpoint(dir, &policy, step)?;
            Some(checkpoint_file(step))
        } else {
            None
        };
        entries.push(StepEntry {
            step,
            histogram: hist_name,
            checkpoint,
            rollouts,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    drop(metrics);

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        config_hash: config.hash(),
        graph: GRAPH_FILE.to_string(),
        task,
        metrics: METRICS_FILE.to_string(),
        initial_checkpoint: checkpoint_file(0),
        steps: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}
