//! Log-space least-squares fits of power-law and exponential length tails.

use serde::{Deserialize, Serialize};

use super::histogram::{LengthHistogram, Population};
use super::MetricsError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `P(L) = amplitude * L^-exponent`
    PowerLaw,
    /// `P(L) = amplitude * exp(-exponent * L)`
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub exponent: f64,
    pub amplitude: f64,
    pub window: (u32, u32),
    pub population: Population,
    pub n_bins: usize,
    pub r_squared: f64,
    pub ks_distance: f64,
}

impl FitResult {
    /// Model preference: higher r² wins, lower KS distance breaks ties.
    pub fn beats(&self, other: &FitResult) -> bool {
        if self.r_squared != other.r_squared {
            self.r_squared > other.r_squared
        } else {
            self.ks_distance < other.ks_distance
        }
    }
}

/// Fits `log P = log A - gamma * log L` over the non-empty bins lying inside `window`.
pub fn fit_power_law(hist: &LengthHistogram, window: (u32, u32), pop: Population) -> Result<FitResult, MetricsError> {
    fit(hist, window, pop, FitModel::PowerLaw)
}

/// Fits `log P = log A - alpha * L` over the non-empty bins lying inside `window`.
pub fn fit_exponential(hist: &LengthHistogram, window: (u32, u32), pop: Population) -> Result<FitResult, MetricsError> {
    fit(hist, window, pop, FitModel::Exponential)
}

pub fn fit(
    hist: &LengthHistogram,
    window: (u32, u32),
    pop: Population,
    model: FitModel,
) -> Result<FitResult, MetricsError> {
    let (w_lo, w_hi) = window;
    let in_window: Vec<usize> =
        (0..hist.bins.len()).filter(|&i| hist.bins[i].lo >= w_lo && hist.bins[i].hi - 1 <= w_hi).collect();
    let densities = hist.densities(pop);
    let points: Vec<(f64, f64)> = in_window
        .iter()
        .filter(|&&i| hist.bins[i].count(pop) > 0)
        .map(|&i| {
            let c = hist.center(&hist.bins[i]);
            let x = match model {
                FitModel::PowerLaw => c.ln(),
                FitModel::Exponential => c,
            };
            (x, densities[i].ln())
        })
        .collect();
    if points.len() < 3 {
        return Err(MetricsError::InsufficientBins { found: points.len(), window });
    }
    let (slope, intercept, r_squared) = least_squares(&points);
    let exponent = -slope;

    // The model is truncated to the span of occupied bins inside the window.
    let first = in_window.iter().position(|&i| hist.bins[i].count(pop) > 0).expect("at least 3 occupied bins");
    let last = in_window.iter().rposition(|&i| hist.bins[i].count(pop) > 0).expect("at least 3 occupied bins");
    let span = &in_window[first..=last];
    let support: Vec<u32> =
        span.iter().flat_map(|&i| hist.bins[i].lo..hist.bins[i].hi).filter(|&l| pop.admits(l)).collect();
    let ks_distance = ks_against_model(hist, span, pop, &support, model, exponent);

    Ok(FitResult {
        model,
        exponent,
        amplitude: intercept.exp(),
        window,
        population: pop,
        n_bins: points.len(),
        r_squared,
        ks_distance,
    })
}

/// Ordinary least squares `y = slope * x + intercept`, with r² clamped to `[0, 1]`.
fn least_squares(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - (slope * p.0 + intercept)).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    (slope, intercept, r2.clamp(0.0, 1.0))
}

/// Largest CDF gap, evaluated at bin upper edges, between the empirical
/// distribution over `bins` and the fitted model truncated to `support`.
fn ks_against_model(
    hist: &LengthHistogram,
    bins: &[usize],
    pop: Population,
    support: &[u32],
    model: FitModel,
    exponent: f64,
) -> f64 {
    let emp_total: u64 = bins.iter().map(|&i| hist.bins[i].count(pop)).sum();
    if emp_total == 0 || support.is_empty() {
        return 1.0;
    }
    let log_w: Vec<f64> = support
        .iter()
        .map(|&l| match model {
            FitModel::PowerLaw => -exponent * f64::from(l).ln(),
            FitModel::Exponential => -exponent * f64::from(l),
        })
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_w.iter().map(|w| (w - max).exp()).collect();
    let norm: f64 = weights.iter().sum();

    let mut ks: f64 = 0.0;
    let mut emp_cum = 0u64;
    let mut model_cum = 0.0;
    let mut s = 0;
    for &i in bins {
        let bin = &hist.bins[i];
        emp_cum += bin.count(pop);
        while s < support.len() && support[s] < bin.hi {
            model_cum += weights[s];
            s += 1;
        }
        let gap = (emp_cum as f64 / emp_total as f64 - model_cum / norm).abs();
        ks = ks.max(gap);
    }
    ks
}
