use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::metrics::Binning;
use crate::policy::{AdvantageMode, ThetaInit, UpdateConfig};
use crate::sampler::RewardMode;

/// Windows and binnings used when characterizing length distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Tail window for the critical-step fits, inclusive.
    pub power_law_window: (u32, u32),
    /// Growth factor of the logarithmic bins used on the tail window.
    pub log_factor: f64,
    /// The local-peak window is `[L* - peak_below, L* + peak_above]` around
    /// the modal success length `L*`, on unit bins.
    pub peak_below: u32,
    pub peak_above: u32,
    /// Steps after the variance peak at which the local-peak fits are made.
    pub post_offset: u64,
    /// Fit the all-rollout histogram instead of successes only.
    pub include_failures: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            power_law_window: (10, 150),
            log_factor: 1.25,
            peak_below: 10,
            peak_above: 30,
            post_offset: 5,
            include_failures: false,
        }
    }
}

impl FitConfig {
    pub fn tail_binning(&self) -> Binning {
        Binning::Logarithmic { factor: self.log_factor }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub k: usize,
    pub graph_seed: u64,
    pub task_seed: u64,
    pub train_seed: u64,
    /// Rollouts per training step.
    pub m: usize,
    pub l_max: u32,
    pub steps: u64,
    pub learning_rate: f64,
    pub advantage_mode: AdvantageMode,
    pub reward_mode: RewardMode,
    pub theta_init: ThetaInit,
    pub theta_min: f64,
    pub theta_max: f64,
    pub d_min: u32,
    pub d_max: u32,
    pub fit: FitConfig,
    /// Checkpoint cadence in steps; the final step is always saved.
    pub snapshot_every: u64,
    pub output_dir: PathBuf,
    /// Sampling threads; 0 uses every available core. Does not affect results.
    pub workers: usize,
    /// Write `rollouts_<step>.csv` every step.
    pub dump_rollouts: bool,
    /// Include node sequences in the rollout dumps.
    pub dump_paths: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 8000,
            k: 5,
            graph_seed: 1,
            task_seed: 1,
            train_seed: 1,
            m: 10_000,
            l_max: 200,
            steps: 100,
            learning_rate: 0.003,
            advantage_mode: AdvantageMode::MeanBaseline,
            reward_mode: RewardMode::Binary,
            theta_init: ThetaInit::Constant(0.5),
            theta_min: 3e-3,
            theta_max: 1.0 - 1e-6,
            d_min: 7,
            d_max: 7,
            fit: FitConfig::default(),
            snapshot_every: 1,
            output_dir: PathBuf::from("runs/default"),
            workers: 0,
            dump_rollouts: false,
            dump_paths: false,
        }
    }
}

impl ExperimentConfig {
    pub fn update_config(&self) -> UpdateConfig {
        UpdateConfig {
            learning_rate: self.learning_rate,
            advantage_mode: self.advantage_mode,
            theta_init: self.theta_init,
            theta_min: self.theta_min,
            theta_max: self.theta_max,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::ConfigInvalid(msg));
        if self.k < 2 || self.n <= self.k {
            return bad(format!("need 2 <= k < n, got n={}, k={}", self.n, self.k));
        }
        if (self.n * self.k) % 2 == 1 {
            return bad(format!("n*k = {} is odd", self.n * self.k));
        }
        if self.m == 0 || self.l_max == 0 {
            return bad("m and l_max must be positive".into());
        }
        if self.snapshot_every == 0 {
            return bad("snapshot_every must be positive".into());
        }
        if self.d_min == 0 || self.d_min > self.d_max || self.d_max as usize >= self.n {
            return bad(format!("bad distance window [{}, {}]", self.d_min, self.d_max));
        }
        let (lo, hi) = self.fit.power_law_window;
        if lo == 0 || lo > hi {
            return bad(format!("bad power-law window [{lo}, {hi}]"));
        }
        self.fit.tail_binning().validate().map_err(|e| ExperimentError::ConfigInvalid(e.to_string()))?;
        self.update_config().validate().map_err(|e| ExperimentError::ConfigInvalid(e.to_string()))
    }

    /// Digest of every field that influences results (not the output location
    /// or the worker count).
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut value {
            map.remove("output_dir");
            map.remove("workers");
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::ConfigInvalid(e.to_string()))
    }

    /// Sets one field from a command-line style `key value` pair. Keys may use
    /// dashes or underscores and dots for nesting (`fit.log_factor`); values
    /// are read as JSON, falling back to a plain string. The key `seed` sets
    /// all three seeds.
    pub fn apply_override(&mut self, key: &str, raw: &str) -> Result<(), ExperimentError> {
        let key = key.trim_start_matches("--").replace('-', "_");
        if key == "seed" {
            let seed: u64 = raw
                .parse()
                .map_err(|_| ExperimentError::ConfigInvalid(format!("seed must be an integer, got {raw:?}")))?;
            self.graph_seed = seed;
            self.task_seed = seed;
            self.train_seed = seed;
            return Ok(());
        }
        let parsed: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut root = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| ExperimentError::ConfigInvalid(format!("unknown config key {key:?}")))?;
        }
        *slot = parsed;
        *self =
            serde_json::from_value(root).map_err(|e| ExperimentError::ConfigInvalid(format!("{key} = {raw}: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_full_scale() {
        let c = ExperimentConfig::default();
        assert_eq!((c.n, c.k, c.m, c.l_max), (8000, 5, 10_000, 200));
        assert_eq!((c.d_min, c.d_max), (7, 7));
        c.validate().unwrap();
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::default();
        c.apply_override("--n", "100").unwrap();
        c.apply_override("learning-rate", "0.5").unwrap();
        c.apply_override("fit.log_factor", "1.5").unwrap();
        c.apply_override("advantage_mode", "mean_std").unwrap();
        c.apply_override("theta_init", r#"{"uniform_random":{"lo":0.1,"hi":0.9}}"#).unwrap();
        c.apply_override("output_dir", "/tmp/x").unwrap();
        c.apply_override("seed", "42").unwrap();
        assert_eq!(c.n, 100);
        assert_eq!(c.learning_rate, 0.5);
        assert_eq!(c.fit.log_factor, 1.5);
        assert_eq!(c.advantage_mode, AdvantageMode::MeanStd);
        assert_eq!(c.theta_init, ThetaInit::UniformRandom { lo: 0.1, hi: 0.9 });
        assert_eq!(c.output_dir, PathBuf::from("/tmp/x"));
        assert_eq!((c.graph_seed, c.task_seed, c.train_seed), (42, 42, 42));
        assert!(c.apply_override("nope", "1").is_err());
        assert!(c.apply_override("n", "\"many\"").is_err());
    }

    #[test]
    fn invalid_configs() {
        let cases: [fn(&mut ExperimentConfig); 6] = [
            |c| c.n = 5,
            |c| c.m = 0,
            |c| c.theta_init = ThetaInit::Constant(1.5),
            |c| c.d_min = 9,
            |c| c.fit.log_factor = 1.0,
            |c| c.snapshot_every = 0,
        ];
        for mutate in cases {
            let mut c = ExperimentConfig::default();
            mutate(&mut c);
            assert!(matches!(c.validate(), Err(ExperimentError::ConfigInvalid(_))));
        }
    }

    #[test]
    fn hash_ignores_location_and_workers() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { output_dir: "/elsewhere".into(), workers: 8, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig { train_seed: 2, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn json_round_trip_and_partial_documents() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        let partial = ExperimentConfig::from_json(r#"{"n": 50, "k": 3}"#).unwrap();
        assert_eq!(partial.n, 50);
        assert_eq!(partial.m, 10_000);
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }
}
