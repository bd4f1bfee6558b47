//! Table CSVs and their metadata sidecars.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rcql_core::data::SourceKind;
use rcql_core::inference::BootstrapSummary;
use rcql_core::simlab::{ExperimentReport, Scenario};
use rcql_core::stard::StardAnalysis;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::records_csv::format_float;

/// Short estimator labels used in the result tables.
pub fn estimator_label(kind: SourceKind) -> &'static str {
    match kind {
        SourceKind::True => "t",
        SourceKind::SingleSurrogate => "n",
        SourceKind::AveragedSurrogate => "nb",
        SourceKind::Calibrated => "rc",
    }
}

fn stat(v: f64) -> String {
    format!("{v:.6}")
}

fn percent(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// A header plus rows, written as RFC-4180 CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn write<W: Write>(&self, output: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(output);
        let fail = |e: csv::Error| CliError::Usage(format!("writing CSV: {e}"));
        w.write_record(&self.header).map_err(fail)?;
        for row in &self.rows {
            w.write_record(row).map_err(fail)?;
        }
        w.flush().map_err(|e| CliError::Usage(format!("writing CSV: {e}")))
    }

    pub fn write_path(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        self.write(file)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        String::from_utf8(buf).map_err(|e| CliError::Usage(e.to_string()))
    }
}

/// Bias/SE/RMSE/CR rows, one per estimator and design cell. `keys` names the
/// leading columns; each cell supplies their values.
pub fn estimation_table(keys: &[&str], cells: &[(Vec<String>, &ExperimentReport)]) -> Table {
    let labels: Vec<String> = cells
        .first()
        .map(|(_, r)| r.config.psi_labels().into_iter().map(String::from).collect())
        .unwrap_or_default();
    let mut header: Vec<String> = keys.iter().map(|k| k.to_string()).collect();
    header.push("estimator".into());
    for l in &labels {
        header.extend(["bias", "se", "rmse", "cr_pct"].map(|m| format!("{l}_{m}")));
    }
    let mut rows = Vec::new();
    for (key_values, report) in cells {
        for &est in &report.metadata.estimators {
            let mut row = key_values.clone();
            row.push(estimator_label(est).into());
            for l in &labels {
                match report.estimation.iter().find(|r| r.estimator == est && &r.parameter == l) {
                    Some(r) => {
                        row.extend([stat(r.bias), stat(r.se), stat(r.rmse), r.cr.map(percent).unwrap_or_default()]);
                    }
                    None => row.extend(std::iter::repeat_n(String::new(), 4)),
                }
            }
            rows.push(row);
        }
    }
    Table { header, rows }
}

/// Stage-2, stage-1 and joint accuracy (percent) per scenario.
pub fn accuracy_table(keys: &[&str], cells: &[(Vec<String>, &ExperimentReport)]) -> Table {
    let mut header: Vec<String> = keys.iter().map(|k| k.to_string()).collect();
    for stage in ["stage2", "stage1", "joint"] {
        header.extend(Scenario::ACCURACY.iter().map(|s| format!("{stage}_{s}")));
    }
    let rows = cells
        .iter()
        .map(|(keys, report)| {
            let mut row = keys.clone();
            let pick: [fn(&rcql_core::simlab::AccuracyRow) -> f64; 3] = [|a| a.stage2, |a| a.stage1, |a| a.joint];
            for f in pick {
                for s in Scenario::ACCURACY {
                    row.push(report.accuracy.iter().find(|a| a.scenario == s).map(|a| percent(f(a))).unwrap_or_default());
                }
            }
            row
        })
        .collect();
    Table { header, rows }
}

/// Mean value and its SD across replications per scenario.
pub fn value_table(keys: &[&str], cells: &[(Vec<String>, &ExperimentReport)]) -> Table {
    let mut header: Vec<String> = keys.iter().map(|k| k.to_string()).collect();
    for s in Scenario::VALUE {
        header.push(format!("{s}_mean"));
        header.push(format!("{s}_sd"));
    }
    let rows = cells
        .iter()
        .map(|(keys, report)| {
            let mut row = keys.clone();
            for s in Scenario::VALUE {
                match report.value.iter().find(|v| v.scenario == s) {
                    Some(v) => row.extend([stat(v.mean), stat(v.sd)]),
                    None => row.extend([String::new(), String::new()]),
                }
            }
            row
        })
        .collect();
    Table { header, rows }
}

fn interval(lo: f64, hi: f64) -> String {
    format!("({}, {})", stat(lo), stat(hi))
}

/// Three-estimator comparison of the blip parameters.
pub fn stard_table(analysis: &StardAnalysis) -> Table {
    let header = ["variable", "est_clinician", "se", "ci", "est_patient", "se", "ci", "est_corrected", "se", "ci"]
        .map(String::from)
        .to_vec();
    let rows = analysis
        .labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let mut row = vec![label.clone()];
            for (_, s) in analysis.summaries() {
                row.extend([stat(s.point[i]), stat(s.se[i]), interval(s.ci_lower[i], s.ci_upper[i])]);
            }
            row
        })
        .collect();
    Table { header, rows }
}

/// `coefficient, estimate, se, ci_lower, ci_upper`, full precision.
pub fn bootstrap_table(summary: &BootstrapSummary) -> Table {
    let header = ["coefficient", "estimate", "se", "ci_lower", "ci_upper"].map(String::from).to_vec();
    let rows = (0..summary.names.len())
        .map(|i| {
            vec![
                summary.names[i].clone(),
                format_float(summary.point[i]),
                format_float(summary.se[i]),
                format_float(summary.ci_lower[i]),
                format_float(summary.ci_upper[i]),
            ]
        })
        .collect();
    Table { header, rows }
}

/// The sidecar written next to every output file.
#[derive(Debug, Serialize)]
pub struct Metadata<'a, C: Serialize, D: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub outputs: Vec<String>,
    /// The resolved configuration, including every seed.
    pub config: &'a C,
    pub details: D,
    pub wall_time_seconds: f64,
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.meta.json"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::json(path, e))?;
    w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}
