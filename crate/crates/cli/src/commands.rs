//! The four subcommands. Each returns the paths it wrote.

use std::path::PathBuf;
use std::time::Instant;

use rcql_core::data::{PatientRecord, SourceKind};
use rcql_core::inference::{BootstrapOptions, CiMethod};
use rcql_core::qlearning::{fit_qlearning, QSpecs};
use rcql_core::simlab::{
    replication_seed, simulate as simulate_data, DgpConfig, ExperimentReport, ReportMetadata, TreatmentFree,
};
use rcql_core::stard::{analyze_stard_with, bootstrap_seed, default_specs, synthetic_fixture, FixtureConfig, StardRow};
use serde::Serialize;

use crate::config::{default_parallelism, resolve, CiArg, Command, FitArgs, Preset, RecommendArgs, SimulateArgs, StardArgs};
use crate::error::{CliError, Result};
use crate::model::FitDocument;
use crate::parallel::Workers;
use crate::records_csv::{read_records_path, write_records_path, ReadMode};
use crate::report::{self, sidecar_path, write_json, Metadata, Table};
use crate::stard_csv::{read_stard_path, write_stard_path};

const DEFAULT_OUT: &str = "results";
const DEFAULT_BOOTSTRAP: usize = 200;
const DEFAULT_REPS: usize = 500;
const DEFAULT_TEST_N: usize = 5000;
const DEFAULT_SIGMAS: [f64; 3] = [0.5, 0.7, 0.9];

pub fn run(command: Command) -> Result<Vec<PathBuf>> {
    match command {
        Command::Simulate(args) => simulate(&args),
        Command::Fit(args) => fit(&args),
        Command::Recommend(args) => recommend(&args),
        Command::Stard(args) => stard(&args),
    }
}

fn prepare_out(out: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

/// Writes the sidecar for every output, all sharing one metadata document.
fn write_sidecars<C: Serialize, D: Serialize>(
    command: &str,
    config: &C,
    details: D,
    outputs: &[PathBuf],
    started: Instant,
) -> Result<Vec<PathBuf>> {
    let meta = Metadata {
        command,
        version: env!("CARGO_PKG_VERSION"),
        outputs: outputs.iter().map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned()).collect(),
        config,
        details,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    let mut written = outputs.to_vec();
    for out in outputs {
        let side = sidecar_path(out);
        write_json(&side, &meta)?;
        written.push(side);
    }
    Ok(written)
}

/// Simulation settings after flags, config file and preset defaults.
#[derive(Debug, Clone, Serialize)]
pub struct SimulateSettings {
    pub preset: Preset,
    pub seed: u64,
    pub out: PathBuf,
    pub parallelism: usize,
    pub n: Vec<usize>,
    pub sigma: Vec<f64>,
    pub reps: usize,
    pub bootstrap: usize,
    pub test_n: usize,
    pub variants: Vec<TreatmentFree>,
    pub export_data: bool,
}

impl SimulateSettings {
    pub fn resolve(args: &SimulateArgs) -> Result<Self> {
        let a = resolve(args, args.config.as_deref())?;
        let preset = a.preset.ok_or_else(|| CliError::Usage("simulate needs --preset".into()))?;
        let seed = a.seed.ok_or_else(|| CliError::Usage("simulate needs --seed".into()))?;
        let default_n = if preset == Preset::Table1 { vec![500, 2000] } else { vec![2000] };
        let settings = SimulateSettings {
            preset,
            seed,
            out: a.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            parallelism: a.parallelism.unwrap_or_else(default_parallelism),
            n: a.n.unwrap_or(default_n),
            sigma: a.sigma.unwrap_or_else(|| DEFAULT_SIGMAS.to_vec()),
            reps: a.reps.unwrap_or(DEFAULT_REPS),
            bootstrap: a.bootstrap.unwrap_or(DEFAULT_BOOTSTRAP),
            test_n: a.test_n.unwrap_or(DEFAULT_TEST_N),
            variants: a
                .variant
                .unwrap_or_else(|| vec![TreatmentFree::Cubic, TreatmentFree::Exponential, TreatmentFree::Complex]),
            export_data: a.export_data.unwrap_or(false),
        };
        settings.validate()?;
        Ok(settings)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Usage(m.into()));
        if self.reps == 0 {
            return bad("--reps must be at least 1");
        }
        if self.parallelism == 0 {
            return bad("--parallelism must be at least 1");
        }
        if self.n.is_empty() || self.n.contains(&0) {
            return bad("--n needs positive sample sizes");
        }
        if self.sigma.is_empty() || self.sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("--sigma needs finite non-negative values");
        }
        if self.bootstrap == 1 {
            return bad("--bootstrap must be 0 or at least 2");
        }
        if self.test_n == 0 {
            return bad("--test-n must be at least 1");
        }
        if self.variants.is_empty() {
            return bad("--variant needs at least one value");
        }
        Ok(())
    }

    /// Design cells with their key columns.
    pub fn cells(&self) -> (Vec<&'static str>, Vec<(Vec<String>, DgpConfig)>) {
        let s = |v: f64| v.to_string();
        let mut cells = Vec::new();
        let keys = match self.preset {
            Preset::Table1 => {
                for &n in &self.n {
                    for &sigma in &self.sigma {
                        cells.push((vec![n.to_string(), s(sigma)], DgpConfig::one_stage(n, sigma, self.seed)));
                    }
                }
                vec!["n", "sigma"]
            }
            Preset::Table3 => {
                for &v in &self.variants {
                    for &n in &self.n {
                        for &sigma in &self.sigma {
                            let cfg = DgpConfig::two_stage(n, sigma, sigma, v, self.seed);
                            cells.push((vec![v.to_string(), n.to_string(), s(sigma), s(sigma)], cfg));
                        }
                    }
                }
                vec!["variant", "n", "sigma2", "sigma1"]
            }
            Preset::Table2 | Preset::Table4 | Preset::Table5 => {
                for &n in &self.n {
                    for &s2 in &self.sigma {
                        for &s1 in &self.sigma {
                            let cfg = DgpConfig::two_stage(n, s2, s1, TreatmentFree::Linear, self.seed);
                            cells.push((vec![n.to_string(), s(s2), s(s1)], cfg));
                        }
                    }
                }
                vec!["n", "sigma2", "sigma1"]
            }
            Preset::Table6Fixture => vec![],
        };
        (keys, cells)
    }
}

#[derive(Debug, Serialize)]
struct CellDetails {
    keys: Vec<String>,
    design: DgpConfig,
    run: ReportMetadata,
}

/// Run a simulation preset and return its table without writing anything.
pub fn simulation_table(settings: &SimulateSettings, workers: &Workers) -> Result<(Table, Vec<ExperimentReport>)> {
    let (keys, cells) = settings.cells();
    let mut reports = Vec::with_capacity(cells.len());
    for (key_values, cfg) in &cells {
        log::info!("{} cell {:?}", settings.preset.file_stem(), key_values);
        let report = match settings.preset {
            Preset::Table4 | Preset::Table5 => workers.prediction(cfg, settings.test_n, settings.reps)?,
            _ => workers.estimation(cfg, &SourceKind::ALL, settings.reps, settings.bootstrap)?,
        };
        if report.metadata.failures > 0 {
            log::warn!("{:?}: {} replications failed", key_values, report.metadata.failures);
        }
        reports.push(report);
    }
    let joined: Vec<(Vec<String>, &ExperimentReport)> =
        cells.iter().map(|(k, _)| k.clone()).zip(reports.iter()).collect();
    let table = match settings.preset {
        Preset::Table4 => report::accuracy_table(&keys, &joined),
        Preset::Table5 => report::value_table(&keys, &joined),
        _ => report::estimation_table(&keys, &joined),
    };
    Ok((table, reports))
}

fn simulate(args: &SimulateArgs) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let settings = SimulateSettings::resolve(args)?;
    let workers = Workers::new(settings.parallelism)?;
    let dir = prepare_out(&Some(settings.out.clone()))?;
    let path = dir.join(format!("{}.csv", settings.preset.file_stem()));
    if settings.preset == Preset::Table6Fixture {
        let bootstrap = settings.bootstrap.max(2);
        let cfg = FixtureConfig::default();
        let rows = synthetic_fixture(&cfg, settings.seed)?;
        let table = stard_analysis(&rows, bootstrap, bootstrap_seed(settings.seed), CiMethod::Normal, &workers)?;
        table.write_path(&path)?;
        let details = serde_json::json!({ "fixture": cfg, "truth_psi2_then_psi1": cfg.truth(), "bootstrap_seed": bootstrap_seed(settings.seed) });
        return write_sidecars("simulate", &settings, details, &[path], started);
    }
    let (table, reports) = simulation_table(&settings, &workers)?;
    table.write_path(&path)?;
    let (_, cells) = settings.cells();
    let mut outputs = vec![path];
    if settings.export_data {
        for (i, (_, cfg)) in cells.iter().enumerate() {
            let data_path = dir.join(format!("{}_cell{}_data.csv", settings.preset.file_stem(), i + 1));
            write_records_path(&data_path, &simulate_data(cfg, replication_seed(cfg.seed, 0))?)?;
            outputs.push(data_path);
        }
    }
    let details: Vec<CellDetails> = cells
        .into_iter()
        .zip(reports)
        .map(|((keys, design), r)| CellDetails { keys, design, run: r.metadata })
        .collect();
    write_sidecars("simulate", &settings, details, &outputs, started)
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSettings {
    pub data: PathBuf,
    pub source: SourceKind,
    pub seed: u64,
    pub out: PathBuf,
    pub parallelism: usize,
    pub bootstrap: usize,
    pub ci: CiArg,
    pub dump_calibration: bool,
}

/// Main-effects designs sized from the data, with per-stage
/// `(error-prone, error-free)` dimensions.
pub fn specs_for(records: &[PatientRecord]) -> Result<(QSpecs, Vec<(usize, usize)>)> {
    if records.is_empty() {
        return Err(CliError::Usage("the data file has no patients".into()));
    }
    let stages = if records.iter().any(|r| r.has_stage(2)) { 2 } else { 1 };
    let dims_at = |j: usize| -> Result<(usize, usize)> {
        let mut dims = None;
        for r in records {
            if let Ok(obs) = r.stage(j) {
                let d = (obs.error_prone_dim(), obs.error_free().len());
                match dims {
                    None => dims = Some(d),
                    Some(prev) if prev != d => {
                        return Err(CliError::Usage(format!("patient {}: stage {j} dimensions differ", r.id())));
                    }
                    _ => {}
                }
            }
        }
        Ok(dims.unwrap_or_default())
    };
    let dims: Vec<(usize, usize)> = (1..=stages).map(dims_at).collect::<Result<_>>()?;
    if dims.iter().any(|&d| d != dims[0]) {
        return Err(CliError::Usage("covariate dimensions must agree across stages".into()));
    }
    let (dx, dz) = dims[0];
    if dx == 0 {
        return Err(CliError::Usage("the data has no error-prone covariate".into()));
    }
    Ok((QSpecs::main_effects(stages, dx, dz), dims))
}

fn fit(args: &FitArgs) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let a = resolve(args, args.config.as_deref())?;
    let settings = FitSettings {
        data: a.data.ok_or_else(|| CliError::Usage("fit needs --data".into()))?,
        source: a.source.unwrap_or(SourceKind::Calibrated),
        seed: a.seed.unwrap_or(0),
        out: a.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        parallelism: a.parallelism.unwrap_or_else(default_parallelism),
        bootstrap: a.bootstrap.unwrap_or(DEFAULT_BOOTSTRAP),
        ci: a.ci.unwrap_or(CiArg::Normal),
        dump_calibration: a.dump_calibration.unwrap_or(false),
    };
    if settings.bootstrap == 1 {
        return Err(CliError::Usage("--bootstrap must be 0 or at least 2".into()));
    }
    let workers = Workers::new(settings.parallelism)?;
    let records = read_records_path(&settings.data, ReadMode::Training)?;
    let (specs, dims) = specs_for(&records)?;
    let result = fit_qlearning(&records, &specs, settings.source)?;
    let dir = prepare_out(&Some(settings.out.clone()))?;

    let mut outputs = Vec::new();
    let fit_path = dir.join("fit.json");
    write_json(&fit_path, &FitDocument::from_result(&result, &dims))?;
    outputs.push(fit_path);
    let mut failures = None;
    if settings.bootstrap >= 2 {
        let opts = BootstrapOptions { resamples: settings.bootstrap, seed: settings.seed, ci: settings.ci.into() };
        let summary = workers.bootstrap(&records, &specs, settings.source, opts)?;
        failures = Some(summary.failures);
        let path = dir.join("bootstrap.csv");
        report::bootstrap_table(&summary).write_path(&path)?;
        outputs.push(path);
    }
    if settings.dump_calibration {
        let cal = result
            .calibration
            .as_ref()
            .ok_or_else(|| CliError::Usage("--dump-calibration needs --source calibrated".into()))?;
        let path = dir.join("calibration.json");
        write_json(&path, cal)?;
        outputs.push(path);
    }
    let details = serde_json::json!({
        "patients": records.len(),
        "stage2_patients": records.iter().filter(|r| r.has_stage(2)).count(),
        "bootstrap_failures": failures,
    });
    write_sidecars("fit", &settings, details, &outputs, started)
}

#[derive(Debug, Clone, Serialize)]
pub struct RecommendSettings {
    pub model: PathBuf,
    pub data: PathBuf,
    pub source: SourceKind,
    pub out: PathBuf,
}

/// Recommended actions per patient, stage 1 first; `None` where the patient
/// has no such stage.
pub fn recommend_actions(model: &FitDocument, source: SourceKind, records: &[PatientRecord]) -> Result<Vec<Vec<Option<bool>>>> {
    let policy = model.policy()?;
    let source = match source {
        SourceKind::True => rcql_core::data::CovariateSource::True,
        SourceKind::SingleSurrogate => rcql_core::data::CovariateSource::SingleSurrogate,
        SourceKind::AveragedSurrogate => rcql_core::data::CovariateSource::AveragedSurrogate,
        SourceKind::Calibrated => rcql_core::data::CovariateSource::Calibrated(
            model
                .calibration
                .as_ref()
                .ok_or_else(|| CliError::Usage("the model has no calibration models; pick another --source".into()))?,
        ),
    };
    records
        .iter()
        .map(|r| {
            (1..=policy.stages())
                .map(|j| {
                    let Ok(obs) = r.stage(j) else { return Ok(None) };
                    let doc = model.stage(j).ok_or_else(|| CliError::Usage(format!("model lacks stage {j}")))?;
                    let (dx, dz) = (obs.error_prone_dim(), obs.error_free().len());
                    if (dx, dz) != (doc.error_prone_dim, doc.error_free_dim) {
                        return Err(CliError::Usage(format!(
                            "patient {}: stage {j} has {dx} error-prone and {dz} error-free covariates, the model expects {} and {}",
                            r.id(),
                            doc.error_prone_dim,
                            doc.error_free_dim
                        )));
                    }
                    Ok(Some(policy.recommend_for(r.stages(), j, source)?))
                })
                .collect()
        })
        .collect()
}

fn recommend(args: &RecommendArgs) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let a = resolve(args, args.config.as_deref())?;
    let model_path = a.model.ok_or_else(|| CliError::Usage("recommend needs --model".into()))?;
    let model = FitDocument::load(&model_path)?;
    let settings = RecommendSettings {
        model: model_path,
        data: a.data.ok_or_else(|| CliError::Usage("recommend needs --data".into()))?,
        source: a.source.unwrap_or(model.covariate_source),
        out: a.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
    };
    let records = read_records_path(&settings.data, ReadMode::Covariates)?;
    let actions = recommend_actions(&model, settings.source, &records)?;
    let mut header = vec!["id".to_string()];
    header.extend((1..=model.stage_count()).map(|j| format!("a{j}")));
    let rows = records
        .iter()
        .zip(&actions)
        .map(|(r, acts)| {
            let mut row = vec![r.id().to_string()];
            row.extend(acts.iter().map(|a| a.map(|b| if b { "1" } else { "0" }.to_string()).unwrap_or_default()));
            row
        })
        .collect();
    let dir = prepare_out(&Some(settings.out.clone()))?;
    let path = dir.join("recommendations.csv");
    Table { header, rows }.write_path(&path)?;
    let details = serde_json::json!({ "patients": records.len() });
    write_sidecars("recommend", &settings, details, &[path], started)
}

#[derive(Debug, Clone, Serialize)]
pub struct StardSettings {
    pub data: Option<PathBuf>,
    pub synthetic_fixture: bool,
    pub seed: u64,
    pub bootstrap_seed: u64,
    pub out: PathBuf,
    pub parallelism: usize,
    pub bootstrap: usize,
    pub ci: CiArg,
}

/// The three-estimator table for `rows`.
pub fn stard_analysis(rows: &[StardRow], bootstrap: usize, seed: u64, ci: CiMethod, workers: &Workers) -> Result<Table> {
    let opts = BootstrapOptions { resamples: bootstrap, seed, ci };
    let runner = |r: &[PatientRecord], s: &QSpecs, k: SourceKind, o: BootstrapOptions| workers.bootstrap(r, s, k, o);
    let analysis = analyze_stard_with(rows, &default_specs(), opts, &runner)?;
    Ok(report::stard_table(&analysis))
}

fn stard(args: &StardArgs) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let a = resolve(args, args.config.as_deref())?;
    let seed = a.seed.unwrap_or(0);
    let settings = StardSettings {
        data: a.data,
        synthetic_fixture: a.synthetic_fixture.unwrap_or(false),
        seed,
        bootstrap_seed: bootstrap_seed(seed),
        out: a.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        parallelism: a.parallelism.unwrap_or_else(default_parallelism),
        bootstrap: a.bootstrap.unwrap_or(DEFAULT_BOOTSTRAP),
        ci: a.ci.unwrap_or(CiArg::Normal),
    };
    if settings.bootstrap < 2 {
        return Err(CliError::Usage("--bootstrap must be at least 2".into()));
    }
    let workers = Workers::new(settings.parallelism)?;
    let dir = prepare_out(&Some(settings.out.clone()))?;
    let mut outputs = Vec::new();
    let rows = match (&settings.data, settings.synthetic_fixture) {
        (Some(path), false) => read_stard_path(path)?,
        (None, true) => {
            let rows = synthetic_fixture(&FixtureConfig::default(), seed)?;
            let path = dir.join("stard_fixture.csv");
            write_stard_path(&path, &rows)?;
            outputs.push(path);
            rows
        }
        _ => return Err(CliError::Usage("stard needs exactly one of --data and --synthetic-fixture".into())),
    };
    let table = stard_analysis(&rows, settings.bootstrap, settings.bootstrap_seed, settings.ci.into(), &workers)?;
    let path = dir.join("table6.csv");
    table.write_path(&path)?;
    outputs.push(path);
    let details = serde_json::json!({
        "patients": rows.len(),
        "stage2_patients": rows.iter().filter(|r| r.stage2.is_some()).count(),
        "fixture": settings.synthetic_fixture.then(FixtureConfig::default),
    });
    write_sidecars("stard", &settings, details, &outputs, started)
}
