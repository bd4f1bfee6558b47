//! Command-line flags, JSON config files and their resolution.
//!
//! A config file is a JSON object whose keys are the long flag names in
//! snake case. Flags given on the command line win over the file, and the
//! file wins over built-in defaults.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rcql_core::data::SourceKind;
use rcql_core::inference::CiMethod;
use rcql_core::simlab::TreatmentFree;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "rcql", version, about = "Q-learning for dynamic treatment regimes with error-prone covariates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation study and write its result table.
    Simulate(SimulateArgs),
    /// Fit a regime to a patient CSV.
    Fit(FitArgs),
    /// Recommend treatments from a saved fit.
    Recommend(RecommendArgs),
    /// Compare clinician, patient and calibrated fits on depression-trial data.
    Stard(StardArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// One stage: bias, SE, RMSE and coverage by sample size and error SD.
    Table1,
    /// Two stages, linear treatment-free part.
    Table2,
    /// Two stages, nonlinear treatment-free parts.
    Table3,
    /// Prediction accuracy of the estimated regimes.
    Table4,
    /// Value of the estimated regimes.
    Table5,
    /// The three-estimator comparison on synthetic depression-trial data.
    Table6Fixture,
}

impl Preset {
    pub fn file_stem(self) -> &'static str {
        match self {
            Preset::Table1 => "table1",
            Preset::Table2 => "table2",
            Preset::Table3 => "table3",
            Preset::Table4 => "table4",
            Preset::Table5 => "table5",
            Preset::Table6Fixture => "table6",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CiArg {
    Normal,
    Percentile,
}

impl From<CiArg> for CiMethod {
    fn from(c: CiArg) -> Self {
        match c {
            CiArg::Normal => CiMethod::Normal,
            CiArg::Percentile => CiMethod::Percentile,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    /// JSON file with defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Master seed (required).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Sample sizes (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Error SDs (comma separated); two-stage presets use every pair.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Bootstrap resamples per replication; 0 skips intervals.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Test sample size for the prediction presets.
    #[arg(long)]
    pub test_n: Option<usize>,
    /// Treatment-free variants for the nonlinear preset.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    pub variant: Option<Vec<TreatmentFree>>,
    /// Also write the first replication's sample of each design cell.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub export_data: Option<bool>,
}

fn parse_variant(s: &str) -> std::result::Result<TreatmentFree, String> {
    s.parse().map_err(|e: rcql_core::Error| e.to_string())
}

fn parse_source(s: &str) -> std::result::Result<SourceKind, String> {
    s.parse().map_err(|e: rcql_core::Error| e.to_string())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Patient CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Covariate source: true, single, avg or calibrated.
    #[arg(long, value_parser = parse_source)]
    pub source: Option<SourceKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Bootstrap resamples; 0 skips the bootstrap.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long, value_enum)]
    pub ci: Option<CiArg>,
    /// Also write the calibration models.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dump_calibration: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommendArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Fit JSON written by `fit`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Covariate CSV in the patient layout; outcome and final treatment may be empty.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Override the covariate source stored in the model.
    #[arg(long, value_parser = parse_source)]
    pub source: Option<SourceKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StardArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Trial CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generate demonstration data instead of reading a file.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub synthetic_fixture: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long, value_enum)]
    pub ci: Option<CiArg>,
}

/// Overlay the non-empty flags onto the config file, if any.
pub fn resolve<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> Result<T> {
    let mut merged = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            match serde_json::from_str::<Value>(&text).map_err(|e| CliError::json(path, e))? {
                Value::Object(map) => map,
                _ => return Err(CliError::Usage(format!("{}: config must be a JSON object", path.display()))),
            }
        }
        None => Map::new(),
    };
    let Value::Object(given) = serde_json::to_value(flags).map_err(|e| CliError::Usage(e.to_string()))? else {
        unreachable!("argument structs serialize to objects")
    };
    merged.extend(given.into_iter().filter(|(_, v)| !v.is_null()));
    let origin = config.map_or_else(|| PathBuf::from("<flags>"), Path::to_path_buf);
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::json(&origin, e))
}

pub fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}
