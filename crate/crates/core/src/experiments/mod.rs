//! Reproducible lemma checks, scaling studies and bound audits.
//!
//! Every run is a pure function of its [`ExperimentConfig`]: trials derive
//! their seeds from the master seed and grid coordinates, run in parallel,
//! and are collected in grid order.

pub mod config;
pub mod stats;
pub mod study;
pub mod verify;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::tagged_seed;

pub use config::{ExperimentConfig, ExperimentKind, LemmaSelector, ModelClass};
pub use stats::SlopeFit;
pub use study::{run_bound_audit, run_scale_study, StudyRow};
pub use verify::run_verify_lemma;

pub const VERSION: &str = concat!("minnorm ", env!("CARGO_PKG_VERSION"));

/// One CSV row of an experiment.
pub trait TrialRow: Serialize + Send {
    /// Grid coordinates of the row, outermost first.
    fn group_key(&self) -> Vec<(&'static str, usize)>;
    /// Quantity summarized by median and quartiles.
    fn metric(&self) -> Option<f64>;
    /// Whether the checked inequality or identity held.
    fn passed(&self) -> Option<bool>;
    /// A second check that only applies to some rows.
    fn secondary(&self) -> Option<bool> {
        None
    }
    fn error(&self) -> Option<&str>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    /// Value of the innermost grid coordinate.
    pub x: usize,
    pub rows: usize,
    pub failures: usize,
    pub pass_fraction: Option<f64>,
    pub secondary_rows: usize,
    pub secondary_pass_fraction: Option<f64>,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeSummary {
    /// Grid coordinates shared by the fitted points.
    pub label: String,
    pub fit: Option<SlopeFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: String,
    pub experiment: String,
    pub metric: String,
    pub secondary: Option<String>,
    pub rows: usize,
    pub failures: usize,
    pub pass_fraction: Option<f64>,
    pub groups: Vec<GroupSummary>,
    pub slopes: Vec<SlopeSummary>,
    pub notes: Vec<String>,
    pub config: ExperimentConfig,
}

impl Summary {
    pub fn group(&self, label: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.label == label)
    }
}

fn label(key: &[(&'static str, usize)]) -> String {
    key.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}

fn fraction(flags: impl Iterator<Item = bool>) -> (usize, Option<f64>) {
    let (mut total, mut pass) = (0usize, 0usize);
    for f in flags {
        total += 1;
        pass += usize::from(f);
    }
    (total, (total > 0).then(|| pass as f64 / total as f64))
}

/// Names describing what a summary reports.
pub struct SummarySpec<'a> {
    pub metric: &'a str,
    pub secondary: Option<&'a str>,
    /// Fit a log-log slope of the metric medians over the innermost grid coordinate.
    pub fit_slope: bool,
}

pub fn summarize<R: TrialRow>(config: &ExperimentConfig, rows: &[R], spec: &SummarySpec) -> Summary {
    let mut keyed: Vec<(Vec<(&'static str, usize)>, Vec<&R>)> = Vec::new();
    for row in rows {
        let key = row.group_key();
        match keyed.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(row),
            None => keyed.push((key, vec![row])),
        }
    }
    let mut groups = Vec::with_capacity(keyed.len());
    let mut metric_values = Vec::with_capacity(keyed.len());
    for (key, members) in &keyed {
        let ok: Vec<&&R> = members.iter().filter(|r| r.error().is_none()).collect();
        let values: Vec<f64> = ok.iter().filter_map(|r| r.metric()).filter(|v| v.is_finite()).collect();
        let (_, pass_fraction) = fraction(ok.iter().filter_map(|r| r.passed()));
        let (secondary_rows, secondary_pass_fraction) = fraction(ok.iter().filter_map(|r| r.secondary()));
        let quart = |q| (!values.is_empty()).then(|| stats::quantile(&stats::sorted(&values), q));
        groups.push(GroupSummary {
            label: label(key),
            x: key.last().map_or(0, |(_, v)| *v),
            rows: members.len(),
            failures: members.len() - ok.len(),
            pass_fraction,
            secondary_rows,
            secondary_pass_fraction,
            median: quart(0.5),
            q1: quart(0.25),
            q3: quart(0.75),
        });
        metric_values.push(values);
    }

    let mut slopes = Vec::new();
    let mut notes = Vec::new();
    if spec.fit_slope {
        let mut prefixes: Vec<Vec<(&'static str, usize)>> = Vec::new();
        for (key, _) in &keyed {
            let prefix = key[..key.len().saturating_sub(1)].to_vec();
            if !prefixes.contains(&prefix) {
                prefixes.push(prefix);
            }
        }
        for prefix in prefixes {
            let points: Vec<(f64, Vec<f64>)> = keyed
                .iter()
                .zip(&metric_values)
                .filter(|((k, _), _)| k[..k.len().saturating_sub(1)] == prefix[..])
                .map(|((k, _), v)| (k.last().map_or(0.0, |(_, x)| *x as f64), v.clone()))
                .collect();
            let seed = tagged_seed(config.master_seed, "bootstrap");
            let fit = stats::fit_log_log_slope(&points, seed);
            let label = label(&prefix);
            if fit.is_none() {
                notes.push(format!(
                    "slope undefined for [{label}]: needs at least {} grid points with positive medians",
                    stats::MIN_SLOPE_POINTS
                ));
            }
            slopes.push(SlopeSummary { label, fit });
        }
    }

    let failures = rows.iter().filter(|r| r.error().is_some()).count();
    let (_, pass_fraction) = fraction(rows.iter().filter(|r| r.error().is_none()).filter_map(|r| r.passed()));
    if failures > 0 {
        notes.push(format!("{failures} trial(s) failed; see the error column"));
    }
    Summary {
        version: VERSION.to_string(),
        experiment: config.output_stem(),
        metric: spec.metric.to_string(),
        secondary: spec.secondary.map(str::to_string),
        rows: rows.len(),
        failures,
        pass_fraction,
        groups,
        slopes,
        notes,
        config: config.clone(),
    }
}

/// Typed rows together with their summary.
#[derive(Debug, Clone)]
pub struct Study<R> {
    pub config: ExperimentConfig,
    pub rows: Vec<R>,
    pub summary: Summary,
}

impl<R: TrialRow> Study<R> {
    pub fn new(config: &ExperimentConfig, rows: Vec<R>, spec: &SummarySpec) -> Self {
        let summary = summarize(config, &rows, spec);
        Self {
            config: config.clone(),
            rows,
            summary,
        }
    }

    /// CSV with two leading comment lines: the version and the resolved config.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        writeln!(out, "# {VERSION}")?;
        writeln!(out, "# config {}", serde_json::to_string(&self.config)?)?;
        {
            let mut w = csv::Writer::from_writer(&mut out);
            for row in &self.rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        Ok(out)
    }

    pub fn into_output(self) -> Result<StudyOutput> {
        let csv = self.to_csv()?;
        Ok(StudyOutput {
            stem: self.config.output_stem(),
            csv,
            summary: self.summary,
        })
    }
}

/// Serialized results of a run, independent of the row type.
#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub stem: String,
    pub csv: Vec<u8>,
    pub summary: Summary,
}

impl StudyOutput {
    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary)?)
    }

    /// Writes `<stem>.csv` and `<stem>.summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}.csv", self.stem));
        let json_path = dir.join(format!("{}.summary.json", self.stem));
        std::fs::write(&csv_path, &self.csv)?;
        std::fs::write(&json_path, self.summary_json()? + "\n")?;
        Ok((csv_path, json_path))
    }
}

/// Runs a trial, turning a panic into an error.
pub fn isolated<T>(f: impl FnOnce() -> Result<T>) -> Result<T> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            Err(Error::TrialPanic(msg))
        }
    }
}

/// Maps `f` over `jobs` in parallel, returning results in job order.
pub fn run_trials<J: Sync, R: Send>(jobs: &[J], f: impl Fn(&J) -> R + Sync + Send) -> Vec<R> {
    jobs.par_iter().map(f).collect()
}

/// Dispatches on the experiment kind.
pub fn run(config: &ExperimentConfig) -> Result<StudyOutput> {
    config.validate()?;
    match config.kind {
        ExperimentKind::VerifyLemma => run_verify_lemma(config),
        ExperimentKind::ScaleStudy => run_scale_study(config)?.into_output(),
        ExperimentKind::BoundAudit => run_bound_audit(config)?.into_output(),
    }
}
