//! Training runs, their on-disk artifacts, post-hoc analysis and replay.
//!
//! A run directory holds:
//!
//! ```text
//! config.json            resolved configuration
//! graph.txt              conet-graph v1
//! task.json              {"q", "a", "distance"}
//! metrics.csv            one row per step
//! hist_<step>.json       unit-bin length histogram of each step
//! checkpoints/theta_<step>.bin   strengths after the update of <step>
//! rollouts_<step>.csv    optional per-rollout dump
//! manifest.json          index of all of the above
//! fits.json, report.txt  written by `analyze_run`
//! ```

mod analyze;
mod config;
mod replay;
mod run;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, TaskInstance};
use crate::metrics::MetricsError;
use crate::policy::PolicyError;

pub use analyze::{analyze_run, AnalysisReport, DistributionFits, FitRecord};
pub use config::{ExperimentConfig, FitConfig};
pub use replay::{replay, ReplayOutput};
pub use run::{resume_training, run_training};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("missing or unreadable artifact: {0}")]
    MissingArtifacts(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        ExperimentError::Io { path: path.to_path_buf(), source }
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const GRAPH_FILE: &str = "graph.txt";
pub const TASK_FILE: &str = "task.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FITS_FILE: &str = "fits.json";
pub const REPORT_FILE: &str = "report.txt";

pub fn hist_file(step: u64) -> String {
    format!("hist_{step}.json")
}

pub fn checkpoint_file(step: u64) -> String {
    format!("checkpoints/theta_{step}.bin")
}

pub fn rollouts_file(step: u64) -> String {
    format!("rollouts_{step}.csv")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepEntry {
    pub step: u64,
    pub histogram: String,
    pub checkpoint: Option<String>,
    pub rollouts: Option<String>,
    pub wall_ms: f64,
}

/// Index of a run directory. Paths are relative to the directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub graph: String,
    pub task: TaskInstance,
    pub metrics: String,
    /// Checkpoint of the initial strengths (step 0).
    pub initial_checkpoint: String,
    pub steps: Vec<StepEntry>,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self, ExperimentError> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| ExperimentError::MissingArtifacts(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::MissingArtifacts(format!("{}: {e}", path.display())))
    }

    /// Checks that every referenced file exists.
    pub fn verify(&self, run_dir: &Path) -> Result<(), ExperimentError> {
        let mut files = vec![&self.graph, &self.metrics, &self.initial_checkpoint];
        for s in &self.steps {
            files.push(&s.histogram);
            files.extend(s.checkpoint.iter());
            files.extend(s.rollouts.iter());
        }
        match files.into_iter().find(|f| !run_dir.join(f).is_file()) {
            Some(missing) => Err(ExperimentError::MissingArtifacts(missing.clone())),
            None => Ok(()),
        }
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| ExperimentError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| ExperimentError::io(path, e))
}

pub(crate) fn read_artifact(path: &Path) -> Result<String, ExperimentError> {
    fs::read_to_string(path).map_err(|e| ExperimentError::MissingArtifacts(format!("{}: {e}", path.display())))
}
