//! Report types and emission in the three output formats.
//!
//! JSON is the contract-bearing format: reports are plain structs with a
//! fixed field order, so parsing an emitted report and re-emitting it yields
//! identical bytes. CSV flattens matrices row-major with indexed headers.
//! The table format is for people and carries no stability promise.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use hierest::estimator::NodeSummary;
use hierest::sim::{ConvergenceRow, StudyReport};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternCount {
    pub pattern: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub mode: String,
    pub monotone: bool,
    pub parameters: Vec<String>,
    pub theta: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub pattern_counts: Vec<PatternCount>,
    pub dropped_rows: usize,
    pub nodes: Vec<NodeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmReport {
    pub knots: Vec<f64>,
    pub cdf: Vec<f64>,
    pub survival: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_survival: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_max_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BivariateReport {
    pub variant: String,
    pub labels: Vec<String>,
    pub estimate: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub sigma_used: Vec<Vec<f64>>,
    pub sizes_used: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub report: StudyReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<Vec<ConvergenceRow>>,
}

pub trait Report: Serialize {
    fn to_csv(&self) -> String;
    fn to_table(&self) -> String;

    fn render(&self, format: Format) -> Result<String, CliError> {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(self)
                    .map_err(|e| CliError::Other(format!("serialize report: {e}")))?;
                s.push('\n');
                Ok(s)
            }
            Format::Csv => Ok(self.to_csv()),
            Format::Table => Ok(self.to_table()),
        }
    }
}

pub fn emit<R: Report>(report: &R, format: Format, output: Option<&Path>) -> Result<(), CliError> {
    let rendered = report.render(format)?;
    match output {
        Some(path) => fs::write(path, rendered)
            .map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display()))),
        None => {
            let stdout = std::io::stdout();
            stdout
                .lock()
                .write_all(rendered.as_bytes())
                .map_err(|e| CliError::Output(format!("cannot write to stdout: {e}")))
        }
    }
}

fn csv_matrix_row(out: &mut String, values: &[f64]) {
    let cells: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
    let _ = writeln!(out, "{}", cells.join(","));
}

impl Report for EstimateReport {
    fn to_csv(&self) -> String {
        let s = self.theta.len();
        let mut header: Vec<String> = (1..=s).map(|i| format!("theta_{i}")).collect();
        for i in 1..=s {
            for j in 1..=s {
                header.push(format!("cov_{i}_{j}"));
            }
        }
        let mut values = self.theta.clone();
        for row in &self.cov {
            values.extend_from_slice(row);
        }
        let mut out = header.join(",");
        out.push('\n');
        csv_matrix_row(&mut out, &values);
        out
    }

    fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mode: {}   monotone: {}", self.mode, self.monotone);
        let _ = writeln!(out, "\nestimates:");
        for (label, v) in self.parameters.iter().zip(&self.theta) {
            let _ = writeln!(out, "  {label:<22} {v:>18.10e}");
        }
        let _ = writeln!(out, "\ncovariance:");
        for row in &self.cov {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>12.4e}")).collect();
            let _ = writeln!(out, "  {}", cells.join("  "));
        }
        let _ = writeln!(out, "\npattern counts:");
        for pc in &self.pattern_counts {
            let _ = writeln!(out, "  {:<8} {:>8}", pc.pattern, pc.rows);
        }
        let _ = writeln!(out, "  dropped rows: {}", self.dropped_rows);
        let _ = writeln!(out, "\nnodes:");
        for n in &self.nodes {
            let children: Vec<String> =
                n.children_used.iter().map(|p| p.to_string()).collect();
            let _ = writeln!(
                out,
                "  level {}  {}  j={:<6} {:<22} children: {}",
                n.level,
                n.pattern,
                n.j,
                format!("{:?}", n.status).to_lowercase(),
                if children.is_empty() {
                    "-".into()
                } else {
                    children.join(", ")
                }
            );
        }
        out
    }
}

impl Report for KmReport {
    fn to_csv(&self) -> String {
        let mut out = String::from("knot,cdf,survival");
        if self.oracle_survival.is_some() {
            out.push_str(",oracle_survival");
        }
        out.push('\n');
        for i in 0..self.knots.len() {
            let _ = write!(out, "{},{},{}", self.knots[i], self.cdf[i], self.survival[i]);
            if let Some(oracle) = &self.oracle_survival {
                let _ = write!(out, ",{}", oracle[i]);
            }
            out.push('\n');
        }
        out
    }

    fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>14} {:>14} {:>14}", "knot", "cdf", "survival");
        for i in 0..self.knots.len() {
            let _ = writeln!(
                out,
                "{:>14.6} {:>14.8} {:>14.8}",
                self.knots[i], self.cdf[i], self.survival[i]
            );
        }
        if let Some(dev) = self.oracle_max_deviation {
            let _ = writeln!(out, "\nproduct-limit cross-check: max |deviation| = {dev:.3e}");
        }
        out
    }
}

impl Report for BivariateReport {
    fn to_csv(&self) -> String {
        let mut header: Vec<String> = self.labels.clone();
        let s = self.estimate.len();
        for i in 1..=s {
            for j in 1..=s {
                header.push(format!("cov_{i}_{j}"));
            }
        }
        let mut values = self.estimate.clone();
        for row in &self.covariance {
            values.extend_from_slice(row);
        }
        let mut out = header.join(",");
        out.push('\n');
        csv_matrix_row(&mut out, &values);
        out
    }

    fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "variant: {}", self.variant);
        let _ = writeln!(
            out,
            "subsample sizes (complete, first-only, second-only): {:?}",
            self.sizes_used
        );
        let _ = writeln!(out, "\nestimates:");
        for (label, v) in self.labels.iter().zip(&self.estimate) {
            let _ = writeln!(out, "  {label:<18} {v:>18.10e}");
        }
        let _ = writeln!(out, "\ncovariance:");
        for row in &self.covariance {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>12.4e}")).collect();
            let _ = writeln!(out, "  {}", cells.join("  "));
        }
        out
    }
}

impl Report for SimulationOutput {
    fn to_csv(&self) -> String {
        let mut out = String::from(
            "estimator,label,n_success,n_failed,mean,bias,mc_se,empirical_var,theoretical_var\n",
        );
        for e in &self.report.estimators {
            for (i, label) in e.labels.iter().enumerate() {
                if e.n_success == 0 {
                    continue;
                }
                let theory = e.theoretical_var[i]
                    .map(|v| format!("{v}"))
                    .unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    e.kind.name(),
                    label,
                    e.n_success,
                    e.n_failed,
                    e.empirical_mean[i],
                    e.bias[i],
                    e.mc_se[i],
                    e.empirical_var[i],
                    theory
                );
            }
        }
        out
    }

    fn to_table(&self) -> String {
        let r = &self.report;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "study: N={} R={} seed={}",
            r.spec.sample_size, r.spec.replicates, r.spec.seed
        );
        let _ = writeln!(out, "\npattern counts (mean per replicate):");
        for (p, c) in &r.mean_pattern_counts {
            let _ = writeln!(out, "  {p:<8} {c:>10.2}");
        }
        let _ = writeln!(out, "  dropped  {:>10.2}", r.mean_dropped);
        for e in &r.estimators {
            let _ = writeln!(
                out,
                "\nestimator {} (success {}, failed {}):",
                e.kind.name(),
                e.n_success,
                e.n_failed
            );
            if e.n_success == 0 {
                continue;
            }
            let _ = writeln!(
                out,
                "  {:<18} {:>12} {:>12} {:>11} {:>13} {:>13}",
                "label", "mean", "bias", "mc-se", "emp-var", "formula-var"
            );
            for (i, label) in e.labels.iter().enumerate() {
                let theory = e.theoretical_var[i]
                    .map(|v| format!("{v:>13.6e}"))
                    .unwrap_or_else(|| format!("{:>13}", "-"));
                let _ = writeln!(
                    out,
                    "  {:<18} {:>12.6} {:>12.2e} {:>11.2e} {:>13.6e} {}",
                    label, e.empirical_mean[i], e.bias[i], e.mc_se[i], e.empirical_var[i], theory
                );
            }
            for c in &e.checks {
                let _ = writeln!(
                    out,
                    "  [{}] {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
        }
        if !r.study_checks.is_empty() {
            let _ = writeln!(out, "\nstudy checks:");
            for c in &r.study_checks {
                let _ = writeln!(
                    out,
                    "  [{}] {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
        }
        if let Some(rows) = &self.convergence {
            let _ = writeln!(out, "\nconvergence ladder (plug-in vs known):");
            let _ = writeln!(
                out,
                "  {:>6} {:>12} {:>16} {:>16}",
                "N", "replicates", "mean-gain-error", "variance-ratio"
            );
            for row in rows {
                let _ = writeln!(
                    out,
                    "  {:>6} {:>12} {:>16.6} {:>16.6}",
                    row.n, row.replicates, row.mean_gain_error, row.variance_ratio
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> EstimateReport {
        EstimateReport {
            mode: "plugin".into(),
            monotone: false,
            parameters: vec!["mean(x1)".into(), "mean(x2)".into()],
            theta: vec![2.7379032258064515, 2.1774193548387095],
            cov: vec![
                vec![0.2883064516129032, 0.10483870967741934],
                vec![0.10483870967741934, 0.12903225806451613],
            ],
            pattern_counts: vec![PatternCount {
                pattern: "11".into(),
                rows: 4,
            }],
            dropped_rows: 1,
            nodes: vec![],
        }
    }

    #[test]
    fn json_reports_round_trip_byte_identically() {
        let report = sample_report();
        let a = report.render(Format::Json).unwrap();
        let parsed: EstimateReport = serde_json::from_str(&a).unwrap();
        let b = parsed.render(Format::Json).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_flattens_the_covariance_row_major() {
        let report = sample_report();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "theta_1,theta_2,cov_1_1,cov_1_2,cov_2_1,cov_2_2"
        );
        let row: Vec<f64> = lines
            .next()
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(row[2], 0.2883064516129032);
        assert_eq!(row[3], row[4]);
    }

    #[test]
    fn table_contains_the_pattern_counts_section() {
        let table = sample_report().to_table();
        assert!(table.contains("pattern counts:"));
        assert!(table.contains("dropped rows: 1"));
    }
}
