//! Per-step observables, length distributions and their fits, transition
//! detection, and the exact first-passage oracle.

mod fit;
mod histogram;
mod oracle;
mod transition;

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::Batch;

pub use fit::{fit, fit_exponential, fit_power_law, FitModel, FitResult};
pub use histogram::{length_histogram, Bin, Binning, LengthHistogram, Population};
pub use oracle::{exact_first_passage, FirstPassage};
pub use transition::{detect_transition, fit_sigmoid, SigmoidFit, TransitionReport};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("bad binning: {0}")]
    BadBinning(String),
    #[error("fit window {window:?} has {found} non-empty bins; need at least 3")]
    InsufficientBins { found: usize, window: (u32, u32) },
    #[error("length {length} outside 1..={max_len}")]
    LengthOutOfRange { length: u32, max_len: u32 },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("need at least {needed} step records, found {found}")]
    TooFewRecords { found: usize, needed: usize },
    #[error("metrics.csv line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub const METRICS_CSV_HEADER: &str = "step,accuracy,mean_len,var_len,success_count,failure_count";

/// Observables of one training step. Failed rollouts count at `L = l_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub accuracy: f64,
    pub mean_len: f64,
    /// Population variance of the rollout lengths.
    pub var_len: f64,
    pub success_count: u64,
    pub failure_count: u64,
    /// Unit-width length histogram; absent for records read back from CSV.
    #[serde(skip)]
    pub histogram: Option<LengthHistogram>,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{},{}",
            self.step, self.accuracy, self.mean_len, self.var_len, self.success_count, self.failure_count
        )
    }
}

/// Accuracy, mean and variance of the path length, and the unit-bin histogram.
pub fn step_metrics(batch: &Batch) -> Result<StepRecord, MetricsError> {
    if batch.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    // Welford's streaming update.
    let (mut count, mut mean, mut m2) = (0u64, 0.0f64, 0.0f64);
    let mut successes = 0u64;
    for r in &batch.rollouts {
        count += 1;
        let x = f64::from(r.length);
        let delta = x - mean;
        mean += delta / count as f64;
        m2 += delta * (x - mean);
        successes += u64::from(r.success);
    }
    let m = batch.len() as u64;
    Ok(StepRecord {
        step: batch.step,
        accuracy: successes as f64 / m as f64,
        mean_len: mean,
        var_len: (m2 / count as f64).max(0.0),
        success_count: successes,
        failure_count: m - successes,
        histogram: Some(length_histogram(batch, Binning::Linear { width: 1 })?),
    })
}

pub fn write_metrics_csv<W: Write>(records: &[StepRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn read_metrics_csv<R: BufRead>(input: R) -> Result<Vec<StepRecord>, MetricsError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let perr = |msg: &str| MetricsError::Parse { line: i + 1, msg: msg.to_string() };
        if i == 0 {
            if line != METRICS_CSV_HEADER {
                return Err(perr("unexpected header"));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(perr("expected 6 fields"));
        }
        let real = |s: &str| s.parse::<f64>().map_err(|_| perr("bad real"));
        let int = |s: &str| s.parse::<u64>().map_err(|_| perr("bad integer"));
        records.push(StepRecord {
            step: int(f[0])?,
            accuracy: real(f[1])?,
            mean_len: real(f[2])?,
            var_len: real(f[3])?,
            success_count: int(f[4])?,
            failure_count: int(f[5])?,
            histogram: None,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::Rollout;

    fn batch(lengths: &[(u32, bool)], l_max: u32) -> Batch {
        let rollouts = lengths
            .iter()
            .map(|&(l, s)| Rollout {
                path: vec![0; l as usize + 1],
                length: l,
                success: s,
                reward: f64::from(u8::from(s)),
                advantage: 0.0,
            })
            .collect();
        Batch::from_rollouts(1, l_max, rollouts)
    }

    #[test]
    fn all_failures() {
        let r = step_metrics(&batch(&[(200, false); 10], 200)).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.mean_len, 200.0);
        assert_eq!(r.var_len, 0.0);
        assert_eq!(r.failure_count, 10);
    }

    #[test]
    fn two_point_distribution() {
        let mut ls = vec![(7, true); 50];
        ls.extend(vec![(200, false); 50]);
        let r = step_metrics(&batch(&ls, 200)).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert!((r.mean_len - 103.5).abs() < 1e-12);
        assert!((r.var_len - 9312.25).abs() < 1e-9);
        let h = r.histogram.unwrap();
        assert_eq!(h.total(Population::Success), r.success_count);
        assert_eq!(h.total(Population::All), 100);
    }

    #[test]
    fn streamed_variance_matches_two_pass() {
        let ls: Vec<(u32, bool)> = (0..997u32).map(|i| ((i * 37 % 200) + 1, i % 3 == 0)).collect();
        let r = step_metrics(&batch(&ls, 200)).unwrap();
        let n = ls.len() as f64;
        let mean = ls.iter().map(|l| f64::from(l.0)).sum::<f64>() / n;
        let var = ls.iter().map(|l| (f64::from(l.0) - mean).powi(2)).sum::<f64>() / n;
        assert!(((r.var_len - var) / var).abs() < 1e-9);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let b = Batch { step: 0, l_max: 5, rollouts: vec![], mean_reward: 0.0, accuracy: 0.0 };
        assert!(matches!(step_metrics(&b), Err(MetricsError::EmptyBatch)));
    }

    #[test]
    fn csv_round_trip() {
        let mut ls = vec![(7, true); 3];
        ls.push((200, false));
        let r = step_metrics(&batch(&ls, 200)).unwrap();
        let mut out = Vec::new();
        write_metrics_csv(std::slice::from_ref(&r), &mut out).unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        assert!(
            text.starts_with("step,accuracy,mean_len,var_len,success_count,failure_count\n1,7.5000000000000000e-1,")
        );
        let back = read_metrics_csv(&out[..]).unwrap();
        assert_eq!(back[0], StepRecord { histogram: None, ..r });
    }
}
