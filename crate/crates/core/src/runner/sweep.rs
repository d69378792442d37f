//! Sampling-rate sweeps: one StochGradAdam run per `s`, sharing the seed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::{ConfigError, ExperimentConfig};
use super::experiment::{run_experiment, RunError, RunOutcome};
use crate::optim::OptimizerKind;

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub s: f64,
    pub final_accuracy: f64,
    pub final_loss: f64,
    /// First evaluated epoch whose test accuracy reached the threshold.
    pub epochs_to_threshold: Option<usize>,
    pub delta_entropy: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub runs: Vec<(f64, RunOutcome)>,
    pub comparison: Vec<ComparisonRow>,
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("s,final_accuracy,final_loss,epochs_to_threshold,delta_entropy\n");
    for r in rows {
        let ett = r.epochs_to_threshold.map_or_else(String::new, |e| e.to_string());
        writeln!(out, "{},{},{},{},{}", r.s, r.final_accuracy, r.final_loss, ett, r.delta_entropy).unwrap();
    }
    out
}

pub fn epochs_to_threshold(run: &RunOutcome, threshold: f64) -> Option<usize> {
    run.rows.iter().find(|r| r.test_accuracy >= threshold).map(|r| r.epoch)
}

fn run_dir(base: &Path, s: f64) -> std::path::PathBuf {
    base.join(format!("s_{s}"))
}

/// Runs every `s` in `s_values` (parallel when `cfg.sweep.parallel`); each
/// run writes into `<output>/s_<s>` when an output directory is set.
pub fn run_sweep(cfg: &ExperimentConfig, s_values: &[f64]) -> Result<SweepOutcome, RunError> {
    let mut base = cfg.clone();
    base.sweep.s_values = s_values.to_vec();
    base.validate()?;
    if s_values.is_empty() {
        return Err(ConfigError::Invalid("no sweep s values given".into()).into());
    }
    let configs: Vec<ExperimentConfig> = s_values
        .iter()
        .map(|&s| {
            let mut c = base.clone();
            c.optimizer = OptimizerKind::StochGradAdam;
            c.hp.s = s;
            c.output_dir = base.output_dir.as_deref().map(|d| run_dir(d, s));
            c
        })
        .collect();
    let results: Vec<Result<RunOutcome, RunError>> = if cfg.sweep.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = configs.iter().map(|c| scope.spawn(move || run_experiment(c))).collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        })
    } else {
        configs.iter().map(run_experiment).collect()
    };
    let mut runs = Vec::new();
    for (&s, r) in s_values.iter().zip(results) {
        runs.push((s, r?));
    }
    let comparison: Vec<ComparisonRow> = runs
        .iter()
        .map(|(s, run)| ComparisonRow {
            s: *s,
            final_accuracy: run.summary.final_accuracy,
            final_loss: run.summary.final_loss,
            epochs_to_threshold: epochs_to_threshold(run, cfg.sweep.threshold),
            delta_entropy: run.summary.delta_entropy,
        })
        .collect();
    if let Some(dir) = &base.output_dir {
        let p = dir.join("comparison.csv");
        fs::write(&p, comparison_csv(&comparison)).map_err(|source| RunError::Io { path: p, source })?;
    }
    Ok(SweepOutcome { runs, comparison })
}
