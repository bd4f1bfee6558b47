//! Simulation designs and Monte-Carlo summaries.
//!
//! Replication `r` of a design with master seed `s` draws everything from
//! [`replication_seed`]`(s, r)`: training data from stream 0, test data from
//! stream 1, and the bootstrap seed from stream 2. A replication can
//! therefore be rerun on its own, and the sequential runners here give the
//! same report as any parallel driver that aggregates in index order.

mod dgp;
mod prediction;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use dgp::{
    normal_partial_expectation, optimal_value_linear, simulate, simulate_one_stage, simulate_two_stage, DgpConfig,
    TreatmentFree,
};
pub use prediction::{
    evaluate_prediction_accuracy, evaluate_value, prediction_replication, scenario_actions, AccuracyRow,
    PredictionReplication, Scenario, ScenarioFits, ValueRow,
};

use crate::data::SourceKind;
use crate::inference::{bootstrap_with, sample_sd, BootstrapOptions};
use crate::qlearning::fit_qlearning;
use crate::rng::stream_rng;
use crate::{Error, Result};

/// Failure messages kept in report metadata.
const MAX_FAILURE_MESSAGES: usize = 10;

/// The seed for replication `index` under `master`.
pub fn replication_seed(master: u64, index: usize) -> u64 {
    stream_rng(master, index as u64).next_u64()
}

/// One estimator's blip estimates in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorEstimate {
    pub estimator: SourceKind,
    /// In `true_psi` order.
    pub psi: Vec<f64>,
    pub boot_se: Option<Vec<f64>>,
    pub ci_lower: Option<Vec<f64>>,
    pub ci_upper: Option<Vec<f64>>,
}

/// Fit every estimator on replication `index`, bootstrapping when
/// `bootstrap >= 2`. All estimators share the data and the bootstrap seed.
pub fn estimation_replication(
    cfg: &DgpConfig,
    estimators: &[SourceKind],
    bootstrap: usize,
    index: usize,
) -> Result<Vec<EstimatorEstimate>> {
    let seed = replication_seed(cfg.seed, index);
    let data = simulate(cfg, seed)?;
    let boot_seed = stream_rng(seed, 2).next_u64();
    let specs = cfg.working_specs();
    estimators
        .iter()
        .map(|&estimator| {
            if bootstrap >= 2 {
                let summary = bootstrap_with(&data, &specs, estimator, BootstrapOptions::new(bootstrap, boot_seed))?;
                let idx = blip_positions(&summary.names);
                let s = summary.select(&idx);
                Ok(EstimatorEstimate {
                    estimator,
                    psi: s.point,
                    boot_se: Some(s.se),
                    ci_lower: Some(s.ci_lower),
                    ci_upper: Some(s.ci_upper),
                })
            } else {
                let fit = fit_qlearning(&data, &specs, estimator)?;
                Ok(EstimatorEstimate { estimator, psi: fit.blip_parameters(), boot_se: None, ci_lower: None, ci_upper: None })
            }
        })
        .collect()
}

fn blip_positions(names: &[String]) -> Vec<usize> {
    names.iter().enumerate().filter(|(_, n)| n.starts_with("psi")).map(|(i, _)| i).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationRow {
    pub estimator: SourceKind,
    pub parameter: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    /// Empirical SD of the estimates across replications.
    pub se: f64,
    pub rmse: f64,
    /// Bootstrap-interval coverage, when intervals were computed.
    pub cr: Option<f64>,
    pub mean_boot_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub master_seed: u64,
    pub replications: usize,
    pub used: usize,
    pub failures: usize,
    pub failure_messages: Vec<String>,
    pub bootstrap: usize,
    pub estimators: Vec<SourceKind>,
    pub test_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: DgpConfig,
    pub estimation: Vec<EstimationRow>,
    pub accuracy: Vec<AccuracyRow>,
    pub value: Vec<ValueRow>,
    pub metadata: ReportMetadata,
}

fn failure_bookkeeping<T>(outcomes: &[Result<T>], meta: &mut ReportMetadata) {
    meta.replications = outcomes.len();
    for (i, o) in outcomes.iter().enumerate() {
        if let Err(e) = o {
            meta.failures += 1;
            if meta.failure_messages.len() < MAX_FAILURE_MESSAGES {
                meta.failure_messages.push(format!("replication {i}: {e}"));
            }
        }
    }
    meta.used = meta.replications - meta.failures;
}

/// Aggregate replication outcomes (in index order) into a report. Failed
/// replications are excluded and counted.
pub fn summarize_estimation(
    cfg: &DgpConfig,
    estimators: &[SourceKind],
    bootstrap: usize,
    outcomes: &[Result<Vec<EstimatorEstimate>>],
) -> Result<ExperimentReport> {
    let mut metadata = ReportMetadata {
        master_seed: cfg.seed,
        bootstrap,
        estimators: estimators.to_vec(),
        ..ReportMetadata::default()
    };
    failure_bookkeeping(outcomes, &mut metadata);
    let ok: Vec<&Vec<EstimatorEstimate>> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    if ok.is_empty() {
        return Err(Error::DegenerateSample(format!(
            "all {} replications failed; first: {}",
            outcomes.len(),
            metadata.failure_messages.first().cloned().unwrap_or_default()
        )));
    }
    let labels = cfg.psi_labels();
    let mut rows = Vec::new();
    for (e_idx, &estimator) in estimators.iter().enumerate() {
        for (p_idx, label) in labels.iter().enumerate() {
            let truth = cfg.true_psi[p_idx];
            let values: Vec<f64> = ok.iter().map(|r| r[e_idx].psi[p_idx]).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let bias = mean - truth;
            let se = sample_sd(&values);
            let with_ci: Vec<&EstimatorEstimate> = ok.iter().map(|r| &r[e_idx]).filter(|e| e.ci_lower.is_some()).collect();
            let (cr, mean_boot_se) = if with_ci.is_empty() {
                (None, None)
            } else {
                let m = with_ci.len() as f64;
                let hits = with_ci
                    .iter()
                    .filter(|e| {
                        let lo = e.ci_lower.as_ref().map_or(f64::NAN, |v| v[p_idx]);
                        let hi = e.ci_upper.as_ref().map_or(f64::NAN, |v| v[p_idx]);
                        lo <= truth && truth <= hi
                    })
                    .count() as f64;
                let bse = with_ci.iter().filter_map(|e| e.boot_se.as_ref().map(|v| v[p_idx])).sum::<f64>() / m;
                (Some(hits / m), Some(bse))
            };
            rows.push(EstimationRow {
                estimator,
                parameter: label.to_string(),
                truth,
                mean,
                bias,
                se,
                rmse: libm::sqrt(bias * bias + se * se),
                cr,
                mean_boot_se,
            });
        }
    }
    Ok(ExperimentReport { config: cfg.clone(), estimation: rows, accuracy: Vec::new(), value: Vec::new(), metadata })
}

/// Bias, SE, RMSE and coverage of each estimator's blip estimates over
/// `reps` replications.
pub fn run_estimation_experiment(
    cfg: &DgpConfig,
    estimators: &[SourceKind],
    reps: usize,
    bootstrap: usize,
) -> Result<ExperimentReport> {
    check_run(cfg, reps)?;
    if estimators.is_empty() {
        return Err(Error::InvalidConfig("no estimators requested".into()));
    }
    let outcomes: Vec<_> = (0..reps).map(|i| estimation_replication(cfg, estimators, bootstrap, i)).collect();
    summarize_estimation(cfg, estimators, bootstrap, &outcomes)
}

pub(crate) fn check_run(cfg: &DgpConfig, reps: usize) -> Result<()> {
    cfg.validate()?;
    if reps == 0 {
        return Err(Error::InvalidConfig("replications must be at least 1".into()));
    }
    Ok(())
}

/// Mean accuracy and mean/SD value per scenario across replications.
pub fn summarize_prediction(cfg: &DgpConfig, n_test: usize, outcomes: &[Result<PredictionReplication>]) -> Result<ExperimentReport> {
    let mut metadata = ReportMetadata { master_seed: cfg.seed, test_n: Some(n_test), ..ReportMetadata::default() };
    failure_bookkeeping(outcomes, &mut metadata);
    let ok: Vec<&PredictionReplication> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    if ok.is_empty() {
        return Err(Error::DegenerateSample(format!("all {} replications failed", outcomes.len())));
    }
    let m = ok.len() as f64;
    let accuracy = Scenario::ACCURACY
        .iter()
        .enumerate()
        .map(|(i, &scenario)| AccuracyRow {
            scenario,
            stage2: ok.iter().map(|r| r.accuracy[i].stage2).sum::<f64>() / m,
            stage1: ok.iter().map(|r| r.accuracy[i].stage1).sum::<f64>() / m,
            joint: ok.iter().map(|r| r.accuracy[i].joint).sum::<f64>() / m,
        })
        .collect();
    let value = Scenario::VALUE
        .iter()
        .enumerate()
        .map(|(i, &scenario)| {
            let v: Vec<f64> = ok.iter().map(|r| r.value[i].1).collect();
            ValueRow { scenario, mean: v.iter().sum::<f64>() / m, sd: sample_sd(&v) }
        })
        .collect();
    Ok(ExperimentReport { config: cfg.clone(), estimation: Vec::new(), accuracy, value, metadata })
}

/// Prediction accuracy and value of the estimated regimes on independent
/// test samples.
pub fn run_prediction_experiment(cfg: &DgpConfig, n_test: usize, reps: usize) -> Result<ExperimentReport> {
    check_run(cfg, reps)?;
    let outcomes: Vec<_> = (0..reps).map(|i| prediction_replication(cfg, n_test, i)).collect();
    summarize_prediction(cfg, n_test, &outcomes)
}
