use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use conet_core::experiment::{self, ExperimentError};
use conet_core::metrics::{fit, Binning, FitModel, LengthHistogram, Population};
use conet_core::{
    generate_regular_graph, select_task, ConceptGraph, ExperimentConfig, GraphError, PolicyError, TaskInstance,
};

#[derive(Debug, Parser)]
#[command(name = "conet", version, about = "Concept-network learning-transition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the configured random regular graph and pick a task on it.
    GenerateGraph {
        #[command(flatten)]
        config: ConfigArgs,
        /// Graph file to write; defaults to `<output_dir>/graph.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run training and write the run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue an interrupted run in `output_dir` from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Detect the transition in a run and fit its length distributions.
    Analyze { run_dir: PathBuf },
    /// Resample a batch under a saved checkpoint without updating it.
    Replay {
        run_dir: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Batch size; defaults to the run's `m`.
        #[arg(long)]
        m: Option<usize>,
        /// Rollout seed; defaults to the run's train seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to `<run_dir>/replay`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the per-rollout CSV.
        #[arg(long)]
        rollouts: bool,
        /// Include node sequences in the rollout CSV.
        #[arg(long)]
        paths: bool,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Fit power-law and/or exponential models to a histogram file.
    Fit {
        hist: PathBuf,
        #[arg(long, value_enum, default_value_t = ModelChoice::Both)]
        model: ModelChoice,
        /// Inclusive length window, `lo,hi`.
        #[arg(long, default_value = "10,150", value_parser = parse_window)]
        window: (u32, u32),
        #[arg(long, value_enum, default_value_t = PopulationArg::Success)]
        population: PopulationArg,
        /// `linear:<width>` or `log:<factor>`; the histogram is rebinned first.
        #[arg(long, value_parser = parse_binning)]
        binning: Option<Binning>,
    },
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON configuration document; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Field overrides as `--key value` pairs (`--seed` sets all three seeds).
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelChoice {
    PowerLaw,
    Exponential,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PopulationArg {
    All,
    Success,
    Fail,
    Odd,
    Even,
}

impl From<PopulationArg> for Population {
    fn from(p: PopulationArg) -> Self {
        match p {
            PopulationArg::All => Population::All,
            PopulationArg::Success => Population::Success,
            PopulationArg::Fail => Population::Fail,
            PopulationArg::Odd => Population::Odd,
            PopulationArg::Even => Population::Even,
        }
    }
}

fn parse_window(s: &str) -> Result<(u32, u32), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo = lo.trim().parse::<u32>().map_err(|e| e.to_string())?;
    let hi = hi.trim().parse::<u32>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

fn parse_binning(s: &str) -> Result<Binning, String> {
    let (kind, arg) = s.split_once(':').ok_or("expected linear:<width> or log:<factor>")?;
    match kind {
        "linear" => Ok(Binning::Linear { width: arg.parse().map_err(|e| format!("{e}"))? }),
        "log" | "logarithmic" => Ok(Binning::Logarithmic { factor: arg.parse().map_err(|e| format!("{e}"))? }),
        _ => Err(format!("unknown binning kind {kind:?}")),
    }
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
enum CliError {
    Config(String),
    Io(String),
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        let msg = e.to_string();
        match e {
            ExperimentError::ConfigInvalid(_) => CliError::Config(msg),
            ExperimentError::Io { .. } | ExperimentError::MissingArtifacts(_) => CliError::Io(msg),
            ExperimentError::Graph(g) => g.into(),
            ExperimentError::Policy(p) => p.into(),
            ExperimentError::Metrics(_) => CliError::Other(msg),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        let msg = e.to_string();
        match e {
            GraphError::GenerationFailure { .. } => CliError::Other(msg),
            GraphError::Parse { .. } | GraphError::InvalidAdjacency(_) => CliError::Io(msg),
            _ => CliError::Config(msg),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        let msg = e.to_string();
        match e {
            PolicyError::InvalidConfig(_) | PolicyError::CheckpointMismatch(_) => CliError::Config(msg),
            PolicyError::Malformed(_) | PolicyError::Io(_) => CliError::Io(msg),
            PolicyError::NotAWalk(_) => CliError::Other(msg),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Loads `--config` (if any) and applies the trailing overrides in order.
///
/// Clap stops parsing at the first override, so `--config` and the
/// subcommand options named in `options` are also accepted among them; the
/// latter are returned by name.
fn resolve_config(args: &ConfigArgs, options: &[&str]) -> Result<(ExperimentConfig, Vec<(String, String)>), CliError> {
    let mut pairs = Vec::new();
    let mut rest = args.overrides.iter();
    while let Some(flag) = rest.next() {
        let Some(key) = flag.strip_prefix("--") else {
            return Err(CliError::Config(format!("expected --key, found {flag:?}")));
        };
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = rest.next().ok_or_else(|| CliError::Config(format!("--{key} needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        pairs.push((key, value));
    }

    let mut config_path = args.config.clone();
    let mut found = Vec::new();
    let mut overrides = Vec::new();
    for (key, value) in pairs {
        if key == "config" {
            if config_path.replace(PathBuf::from(value)).is_some() {
                return Err(CliError::Config("--config given twice".into()));
            }
        } else if options.contains(&key.as_str()) {
            found.push((key, value));
        } else {
            overrides.push((key, value));
        }
    }
    let mut config = match &config_path {
        Some(path) => ExperimentConfig::from_json(&read(path)?)?,
        None => ExperimentConfig::default(),
    };
    for (key, value) in &overrides {
        config.apply_override(key, value)?;
    }
    config.validate()?;
    Ok((config, found))
}

/// Value of a subcommand option given either before or among the overrides.
fn option(direct: Option<PathBuf>, found: &[(String, String)], name: &str) -> Result<Option<PathBuf>, CliError> {
    let late = found.iter().find(|(k, _)| k == name).map(|(_, v)| PathBuf::from(v));
    match (direct, late) {
        (Some(_), Some(_)) => Err(CliError::Config(format!("--{name} given twice"))),
        (a, b) => Ok(a.or(b)),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenerateGraph { config, out } => {
            let (config, found) = resolve_config(&config, &["out"])?;
            let out = option(out, &found, "out")?;
            let graph = generate_regular_graph(config.n, config.k, config.graph_seed)?;
            let task = select_task(&graph, config.task_seed, config.d_min, config.d_max)?;
            let path = out.unwrap_or_else(|| config.output_dir.join(experiment::GRAPH_FILE));
            write(&path, &graph.to_text())?;
            let task_path = path.with_file_name(experiment::TASK_FILE);
            write(&task_path, &serde_json::to_string(&task).expect("task serializes"))?;
            println!(
                "graph n={} k={} seed={} fingerprint={:016x} -> {}",
                graph.n_nodes(),
                graph.degree(),
                graph.seed(),
                graph.fingerprint(),
                path.display()
            );
            println!("task q={} a={} distance={} -> {}", task.q, task.a, task.distance, task_path.display());
        }
        Command::Train { config, resume } => {
            let (config, found) = resolve_config(&config, &["resume"])?;
            let resume = option(resume, &found, "resume")?;
            let manifest = match resume {
                Some(ckpt) => experiment::resume_training(&config, &ckpt)?,
                None => experiment::run_training(&config)?,
            };
            let records = conet_core::metrics::read_metrics_csv(
                read(&config.output_dir.join(experiment::METRICS_FILE))?.as_bytes(),
            )
            .map_err(|e| CliError::Io(e.to_string()))?;
            match records.last() {
                Some(last) => println!(
                    "{} steps -> {} (final accuracy {:.4}, mean length {:.2})",
                    manifest.steps.len(),
                    config.output_dir.display(),
                    last.accuracy,
                    last.mean_len
                ),
                None => println!("0 steps -> {}", config.output_dir.display()),
            }
        }
        Command::Analyze { run_dir } => {
            let report = experiment::analyze_run(&run_dir)?;
            print!("{}", report.render());
        }
        Command::Replay { run_dir, checkpoint, m, seed, out, rollouts, paths, workers } => {
            let config = ExperimentConfig::from_json(&read(&run_dir.join(experiment::CONFIG_FILE))?)?;
            let graph = Arc::new(ConceptGraph::from_text(&read(&run_dir.join(experiment::GRAPH_FILE))?)?);
            let task: TaskInstance = serde_json::from_str(&read(&run_dir.join(experiment::TASK_FILE))?)
                .map_err(|e| CliError::Io(format!("{}: {e}", experiment::TASK_FILE)))?;
            let output = experiment::replay(
                graph,
                &checkpoint,
                &task,
                m.unwrap_or(config.m),
                config.l_max,
                config.reward_mode,
                seed.unwrap_or(config.train_seed),
                workers,
            )?;
            let out = out.unwrap_or_else(|| run_dir.join("replay"));
            output.write(&out, rollouts, paths)?;
            let successes = output.batch.rollouts.iter().filter(|r| r.success).count();
            println!(
                "replayed checkpoint step {} with {} rollouts: accuracy {:.4} -> {}",
                output.checkpoint_step,
                output.batch.len(),
                successes as f64 / output.batch.len() as f64,
                out.join(experiment::hist_file(output.histogram.step)).display()
            );
        }
        Command::Fit { hist, model, window, population, binning } => {
            let hist: LengthHistogram =
                serde_json::from_str(&read(&hist)?).map_err(|e| CliError::Io(format!("{}: {e}", hist.display())))?;
            let hist = match binning {
                Some(b) => hist.rebin(b).map_err(|e| CliError::Config(e.to_string()))?,
                None => hist,
            };
            let models: &[FitModel] = match model {
                ModelChoice::PowerLaw => &[FitModel::PowerLaw],
                ModelChoice::Exponential => &[FitModel::Exponential],
                ModelChoice::Both => &[FitModel::PowerLaw, FitModel::Exponential],
            };
            let mut results = Vec::new();
            for &m in models {
                results.push(fit(&hist, window, population.into(), m).map_err(|e| CliError::Other(e.to_string()))?);
            }
            println!("{}", serde_json::to_string_pretty(&results).expect("fits serialize"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("conet: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
