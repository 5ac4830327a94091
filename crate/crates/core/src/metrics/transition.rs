//! Locating the learning transition in a training trace.

use serde::{Deserialize, Serialize};

use super::{MetricsError, StepRecord};

/// `a(t) = a_inf / (1 + exp(-(t - t_c) / w))`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmoidFit {
    pub a_inf: f64,
    pub t_c: f64,
    pub w: f64,
    /// Root-mean-square residual of the fitted curve.
    pub residual: f64,
}

impl SigmoidFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.a_inf * logistic((t - self.t_c) / self.w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    /// Step with the largest length variance (earliest on ties).
    pub t_var: u64,
    pub max_var: f64,
    /// Absent when the run is degenerate.
    pub sigmoid: Option<SigmoidFit>,
    /// Accuracy never exceeded twice its initial value.
    pub degenerate: bool,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Finds the variance peak and fits a sigmoid to the accuracy trace.
pub fn detect_transition(records: &[StepRecord]) -> Result<TransitionReport, MetricsError> {
    if records.len() < 5 {
        return Err(MetricsError::TooFewRecords { found: records.len(), needed: 5 });
    }
    let mut peak = &records[0];
    for r in &records[1..] {
        if r.var_len > peak.var_len {
            peak = r;
        }
    }
    let initial = records[0].accuracy;
    let degenerate = !records.iter().any(|r| r.accuracy > 2.0 * initial);
    let sigmoid = if degenerate {
        None
    } else {
        let pts: Vec<(f64, f64)> = records.iter().map(|r| (r.step as f64, r.accuracy)).collect();
        Some(fit_sigmoid(&pts))
    };
    Ok(TransitionReport { t_var: peak.step, max_var: peak.var_len, sigmoid, degenerate })
}

/// Least-squares sigmoid fit. `a_inf` is solved in closed form for each
/// `(t_c, w)`; those two are found by a grid scan and then a shrinking
/// pattern search in `(t_c, ln w)`.
pub fn fit_sigmoid(points: &[(f64, f64)]) -> SigmoidFit {
    let t_min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let t_max = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let span = (t_max - t_min).max(1.0);

    let sse = |t_c: f64, ln_w: f64| -> (f64, f64) {
        let w = ln_w.exp();
        let (mut sy, mut ss) = (0.0, 0.0);
        for &(t, a) in points {
            let s = logistic((t - t_c) / w);
            sy += s * a;
            ss += s * s;
        }
        let a_inf = if ss > 0.0 { sy / ss } else { 0.0 };
        let err = points.iter().map(|&(t, a)| (a - a_inf * logistic((t - t_c) / w)).powi(2)).sum();
        (err, a_inf)
    };

    let (ln_w_lo, ln_w_hi) = ((0.05f64).ln(), span.ln());
    let mut best = (f64::INFINITY, t_min, 0.0);
    let tc_steps = 200;
    let w_steps = 60;
    for i in 0..=tc_steps {
        let t_c = t_min + span * i as f64 / tc_steps as f64;
        for j in 0..=w_steps {
            let ln_w = ln_w_lo + (ln_w_hi - ln_w_lo) * j as f64 / w_steps as f64;
            let (e, _) = sse(t_c, ln_w);
            if e < best.0 {
                best = (e, t_c, ln_w);
            }
        }
    }

    let (mut err, mut t_c, mut ln_w) = best;
    let mut dt = span / tc_steps as f64;
    let mut dw = (ln_w_hi - ln_w_lo) / w_steps as f64;
    while dt > 1e-9 || dw > 1e-9 {
        let mut moved = false;
        for (ddt, ddw) in [(dt, 0.0), (-dt, 0.0), (0.0, dw), (0.0, -dw)] {
            let (e, _) = sse(t_c + ddt, ln_w + ddw);
            if e < err {
                err = e;
                t_c += ddt;
                ln_w += ddw;
                moved = true;
                break;
            }
        }
        if !moved {
            dt *= 0.5;
            dw *= 0.5;
        }
    }
    let (err, a_inf) = sse(t_c, ln_w);
    SigmoidFit { a_inf, t_c, w: ln_w.exp(), residual: (err / points.len() as f64).sqrt() }
}
