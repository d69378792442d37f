//! Metrics CSV, timing CSV and JSON summary.
//!
//! Floats are written in Rust's shortest round-trip form so the CSV is a
//! byte-exact function of the trajectory. Wall-clock time lives in a separate
//! file for the same reason.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub mean_norm_entropy: f64,
    /// l2 norm of each layer's full-training-set gradient, input layer first.
    pub grad_norms: Vec<f64>,
}

pub fn metrics_header(n_layers: usize) -> String {
    let mut h = String::from("epoch,step,train_loss,test_accuracy,mean_norm_entropy");
    for l in 1..=n_layers {
        write!(h, ",grad_norm_{l}").unwrap();
    }
    h
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let mut line = format!(
            "{},{},{},{},{}",
            self.epoch, self.step, self.train_loss, self.test_accuracy, self.mean_norm_entropy
        );
        for g in &self.grad_norms {
            write!(line, ",{g}").unwrap();
        }
        line
    }

    pub fn from_csv(line: &str) -> Option<Self> {
        let mut it = line.trim().split(',');
        let epoch = it.next()?.parse().ok()?;
        let step = it.next()?.parse().ok()?;
        let train_loss = it.next()?.parse().ok()?;
        let test_accuracy = it.next()?.parse().ok()?;
        let mean_norm_entropy = it.next()?.parse().ok()?;
        let grad_norms = it.map(|g| g.parse().ok()).collect::<Option<Vec<f64>>>()?;
        Some(Self {
            epoch,
            step,
            train_loss,
            test_accuracy,
            mean_norm_entropy,
            grad_norms,
        })
    }
}

pub fn metrics_csv(rows: &[MetricsRow], n_layers: usize) -> String {
    let mut out = metrics_header(n_layers);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Rows of an existing metrics file; unreadable files yield no rows.
pub fn read_metrics_csv(path: &Path) -> Vec<MetricsRow> {
    fs::read_to_string(path)
        .map(|text| text.lines().skip(1).filter_map(MetricsRow::from_csv).collect())
        .unwrap_or_default()
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow], n_layers: usize) -> io::Result<()> {
    fs::write(path, metrics_csv(rows, n_layers))
}

pub fn write_timing_csv(path: &Path, timings: &[(usize, f64)]) -> io::Result<()> {
    let mut out = String::from("epoch,wall_seconds\n");
    for (epoch, secs) in timings {
        writeln!(out, "{epoch},{secs:.6}").unwrap();
    }
    fs::write(path, out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub optimizer: String,
    pub s: f64,
    pub seed: u64,
    pub epochs: usize,
    pub steps: u64,
    pub final_accuracy: f64,
    pub final_loss: f64,
    /// Mean normalized test entropy of the untrained model.
    pub untrained_entropy: f64,
    /// Same after the first epoch.
    pub initial_entropy: f64,
    pub final_entropy: f64,
    /// `initial_entropy - final_entropy`; positive when predictions sharpened.
    pub delta_entropy: f64,
    pub config_hash: String,
}

pub fn write_summary(path: &Path, summary: &Summary) -> io::Result<()> {
    let json = serde_json::to_string_pretty(summary).map_err(io::Error::other)?;
    fs::write(path, json + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_order() {
        assert_eq!(
            metrics_header(2),
            "epoch,step,train_loss,test_accuracy,mean_norm_entropy,grad_norm_1,grad_norm_2"
        );
    }

    #[test]
    fn csv_round_trip() {
        let row = MetricsRow {
            epoch: 3,
            step: 75,
            train_loss: 0.1 + 0.2,
            test_accuracy: 0.9625,
            mean_norm_entropy: 1.0 / 3.0,
            grad_norms: vec![1e-12, 2.5],
        };
        assert_eq!(MetricsRow::from_csv(&row.to_csv()), Some(row));
    }

    #[test]
    fn summary_json_has_fields() {
        let s = Summary {
            optimizer: "adam".into(),
            s: 1.0,
            seed: 1,
            epochs: 0,
            steps: 0,
            final_accuracy: 0.25,
            final_loss: 1.4,
            untrained_entropy: 0.99,
            initial_entropy: 0.99,
            final_entropy: 0.99,
            delta_entropy: 0.0,
            config_hash: "ab".into(),
        };
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["final_accuracy"], 0.25);
        assert_eq!(v["delta_entropy"], 0.0);
    }
}
