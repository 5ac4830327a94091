//! Concept-network model: a Markovian walk on a random regular graph whose
//! transition strengths are learned by a group-relative policy gradient, plus
//! the statistics used to locate and characterize its learning transition.

pub mod experiment;
pub mod graph;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod sampler;

pub use experiment::{
    analyze_run, replay, resume_training, run_training, AnalysisReport, ExperimentConfig, ExperimentError, RunManifest,
};
pub use graph::{generate_regular_graph, select_task, ConceptGraph, GraphError, NodeId, TaskInstance};
pub use metrics::{
    detect_transition, exact_first_passage, fit_exponential, fit_power_law, length_histogram, step_metrics, Binning,
    FirstPassage, FitModel, FitResult, LengthHistogram, MetricsError, Population, StepRecord, TransitionReport,
};
pub use policy::{AdvantageMode, Policy, PolicyError, ThetaInit, UpdateConfig};
pub use sampler::{compute_advantages, sample_batch, sample_path, Batch, RewardMode, Rollout};
