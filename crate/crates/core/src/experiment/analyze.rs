use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_artifact, write_file, ExperimentError, RunManifest, FITS_FILE, REPORT_FILE};
use crate::metrics::{
    detect_transition, fit, read_metrics_csv, Binning, FitModel, FitResult, LengthHistogram, MetricsError, Population,
    TransitionReport,
};

/// Range of tail exponents regarded as consistent with a slowly decaying
/// critical tail. Informational only.
pub const GAMMA_CONSISTENT: (f64, f64) = (0.05, 0.5);

/// One entry of `fits.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub step: u64,
    /// `"critical"` or `"post"`.
    pub stage: String,
    pub binning: Binning,
    #[serde(flatten)]
    pub fit: FitResult,
}

/// Both candidate models fitted to one step's length distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionFits {
    pub stage: String,
    pub step: u64,
    pub binning: Binning,
    pub window: (u32, u32),
    pub population: Population,
    pub power_law: Option<FitResult>,
    pub exponential: Option<FitResult>,
    /// Reasons for any fit that could not be made.
    pub errors: Vec<String>,
}

impl DistributionFits {
    /// Winner under the preference rule (r² first, KS as tie-breaker).
    pub fn preferred(&self) -> Option<FitModel> {
        match (&self.power_law, &self.exponential) {
            (Some(p), Some(e)) => Some(if p.beats(e) { FitModel::PowerLaw } else { FitModel::Exponential }),
            (Some(_), None) => Some(FitModel::PowerLaw),
            (None, Some(_)) => Some(FitModel::Exponential),
            (None, None) => None,
        }
    }

    /// True when `model` has strictly higher r² and strictly lower KS distance
    /// than the other model.
    pub fn strictly_prefers(&self, model: FitModel) -> bool {
        let (Some(p), Some(e)) = (&self.power_law, &self.exponential) else {
            return false;
        };
        let (win, lose) = match model {
            FitModel::PowerLaw => (p, e),
            FitModel::Exponential => (e, p),
        };
        win.r_squared > lose.r_squared && win.ks_distance < lose.ks_distance
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    /// Absent when the run has too few steps to analyze.
    pub transition: Option<TransitionReport>,
    pub critical: Option<DistributionFits>,
    pub post: Option<DistributionFits>,
    pub notes: Vec<String>,
}

impl AnalysisReport {
    /// Tail exponent at the critical step.
    pub fn gamma(&self) -> Option<f64> {
        self.critical.as_ref()?.power_law.as_ref().map(|f| f.exponent)
    }

    /// Decay rate at the post-transition step.
    pub fn alpha(&self) -> Option<f64> {
        self.post.as_ref()?.exponential.as_ref().map(|f| f.exponent)
    }

    pub fn fit_records(&self) -> Vec<FitRecord> {
        let mut out = Vec::new();
        for d in [&self.critical, &self.post].into_iter().flatten() {
            for f in [&d.power_law, &d.exponential].into_iter().flatten() {
                out.push(FitRecord { step: d.step, stage: d.stage.clone(), binning: d.binning, fit: f.clone() });
            }
        }
        out
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let Some(t) = &self.transition else {
            s.push_str("no transition analysis: too few steps\n");
            for n in &self.notes {
                let _ = writeln!(s, "note: {n}");
            }
            return s;
        };
        let _ = writeln!(s, "t_var = {} (var_len = {:.4})", t.t_var, t.max_var);
        match &t.sigmoid {
            Some(sig) => {
                let _ = writeln!(
                    s,
                    "sigmoid: t_c = {:.3}, w = {:.3}, a_inf = {:.4}, rms residual = {:.4}",
                    sig.t_c, sig.w, sig.a_inf, sig.residual
                );
            }
            None => s.push_str("no transition: accuracy never exceeded twice its initial value; fits skipped\n"),
        }
        for (d, expected) in [(&self.critical, FitModel::PowerLaw), (&self.post, FitModel::Exponential)] {
            let Some(d) = d else { continue };
            let _ = writeln!(
                s,
                "{} step {}: window [{}, {}], population {:?}, binning {:?}",
                d.stage, d.step, d.window.0, d.window.1, d.population, d.binning
            );
            for f in [&d.power_law, &d.exponential].into_iter().flatten() {
                let _ = writeln!(
                    s,
                    "  {:<11} exponent = {:.4}, r2 = {:.4}, ks = {:.4}, bins = {}",
                    model_name(f.model),
                    f.exponent,
                    f.r_squared,
                    f.ks_distance,
                    f.n_bins
                );
            }
            for e in &d.errors {
                let _ = writeln!(s, "  fit failed: {e}");
            }
            let verdict = match d.preferred() {
                Some(m) if d.strictly_prefers(m) => format!("{} preferred on r2 and ks", model_name(m)),
                Some(m) => format!("{} preferred on r2 only", model_name(m)),
                None => "no verdict".into(),
            };
            let matches = if d.preferred() == Some(expected) { "as expected" } else { "unexpected" };
            let _ = writeln!(s, "  verdict: {verdict} ({matches})");
        }
        if let Some(g) = self.gamma() {
            let (lo, hi) = GAMMA_CONSISTENT;
            let flag = if (lo..=hi).contains(&g) { "within" } else { "outside" };
            let _ = writeln!(s, "gamma = {g:.4} ({flag} [{lo}, {hi}])");
        }
        if let Some(a) = self.alpha() {
            let _ = writeln!(s, "alpha = {a:.4}");
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

fn model_name(m: FitModel) -> &'static str {
    match m {
        FitModel::PowerLaw => "power_law",
        FitModel::Exponential => "exponential",
    }
}

/// Detects the transition in a finished run and characterizes the length
/// distribution at the variance peak and `post_offset` steps later. Writes
/// `fits.json` and `report.txt` into the run directory.
pub fn analyze_run(run_dir: &Path) -> Result<AnalysisReport, ExperimentError> {
    let manifest = RunManifest::load(run_dir)?;
    manifest.verify(run_dir)?;
    let text = read_artifact(&run_dir.join(&manifest.metrics))?;
    let records = read_metrics_csv(text.as_bytes())
        .map_err(|e| ExperimentError::MissingArtifacts(format!("{}: {e}", manifest.metrics)))?;
    let cfg = &manifest.config.fit;

    let mut report = AnalysisReport { transition: None, critical: None, post: None, notes: Vec::new() };
    let transition = match detect_transition(&records) {
        Ok(t) => t,
        Err(MetricsError::TooFewRecords { found, needed }) => {
            report.notes.push(format!("run has {found} steps; at least {needed} are needed"));
            return finish(run_dir, report);
        }
        Err(e) => return Err(e.into()),
    };
    let degenerate = transition.degenerate;
    report.transition = Some(transition.clone());
    if degenerate {
        return finish(run_dir, report);
    }

    let load_hist = |step: u64| -> Result<Option<LengthHistogram>, ExperimentError> {
        let Some(entry) = manifest.steps.iter().find(|e| e.step == step) else {
            return Ok(None);
        };
        let text = read_artifact(&run_dir.join(&entry.histogram))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| ExperimentError::MissingArtifacts(format!("{}: {e}", entry.histogram)))
    };

    let base_pop = if cfg.include_failures { Population::All } else { Population::Success };
    if let Some(hist) = load_hist(transition.t_var)? {
        let binning = cfg.tail_binning();
        let binned = hist.rebin(binning)?;
        report.critical = Some(fit_both("critical", &binned, cfg.power_law_window, base_pop));
    }

    let post_step = transition.t_var + cfg.post_offset;
    match load_hist(post_step)? {
        Some(hist) => match hist.mode(Population::Success) {
            Some(mode) => {
                // Bipartite-like parity structure makes the peak comb-shaped, so
                // the local fit uses lengths of the modal parity only.
                let pop = if mode % 2 == 1 { Population::Odd } else { Population::Even };
                let window = (mode.saturating_sub(cfg.peak_below).max(1), mode + cfg.peak_above);
                report.post = Some(fit_both("post", &hist, window, pop));
            }
            None => report.notes.push(format!("step {post_step} has no successful rollouts")),
        },
        None => report.notes.push(format!("step {post_step} is past the end of the run")),
    }
    finish(run_dir, report)
}

fn fit_both(stage: &str, hist: &LengthHistogram, window: (u32, u32), pop: Population) -> DistributionFits {
    let mut errors = Vec::new();
    let mut attempt = |model| match fit(hist, window, pop, model) {
        Ok(f) => Some(f),
        Err(e) => {
            errors.push(format!("{}: {e}", model_name(model)));
            None
        }
    };
    let power_law = attempt(FitModel::PowerLaw);
    let exponential = attempt(FitModel::Exponential);
    DistributionFits {
        stage: stage.to_string(),
        step: hist.step,
        binning: hist.binning,
        window,
        population: pop,
        power_law,
        exponential,
        errors,
    }
}

fn finish(run_dir: &Path, report: AnalysisReport) -> Result<AnalysisReport, ExperimentError> {
    let fits = serde_json::to_string_pretty(&report.fit_records()).expect("fits serialize");
    write_file(&run_dir.join(FITS_FILE), fits.as_bytes())?;
    write_file(&run_dir.join(REPORT_FILE), report.render().as_bytes())?;
    Ok(report)
}
