use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dgp::{draw_records, DgpConfig};
use super::replication_seed;
use crate::data::{CovariateSource, PatientRecord, SourceKind};
use crate::qlearning::{fit_qlearning, QlearnResult};
use crate::rng::stream_rng;
use crate::{Error, Result};

/// A (training estimator, test-data covariate source) pairing, or the true
/// optimal regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Opt,
    Nt,
    Nbt,
    Ct,
    Nn,
    Nbnb,
    Cc,
}

impl Scenario {
    pub const ACCURACY: [Scenario; 6] =
        [Scenario::Nt, Scenario::Nbt, Scenario::Ct, Scenario::Nn, Scenario::Nbnb, Scenario::Cc];
    pub const VALUE: [Scenario; 7] =
        [Scenario::Opt, Scenario::Nt, Scenario::Nbt, Scenario::Ct, Scenario::Nn, Scenario::Nbnb, Scenario::Cc];

    /// The covariate source the policy was trained with.
    pub fn estimator(self) -> Option<SourceKind> {
        match self {
            Scenario::Opt => None,
            Scenario::Nt | Scenario::Nn => Some(SourceKind::SingleSurrogate),
            Scenario::Nbt | Scenario::Nbnb => Some(SourceKind::AveragedSurrogate),
            Scenario::Ct | Scenario::Cc => Some(SourceKind::Calibrated),
        }
    }

    /// The covariate source read from the test data.
    pub fn test_source(self) -> SourceKind {
        match self {
            Scenario::Opt | Scenario::Nt | Scenario::Nbt | Scenario::Ct => SourceKind::True,
            Scenario::Nn => SourceKind::SingleSurrogate,
            Scenario::Nbnb => SourceKind::AveragedSurrogate,
            Scenario::Cc => SourceKind::Calibrated,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Opt => "opt",
            Scenario::Nt => "nt",
            Scenario::Nbt => "nbt",
            Scenario::Ct => "ct",
            Scenario::Nn => "nn",
            Scenario::Nbnb => "nbnb",
            Scenario::Cc => "cc",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::VALUE
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(alloc::format!("unknown scenario `{s}`")))
    }
}

/// The three training-data fits a prediction replication compares.
#[derive(Debug, Clone)]
pub struct ScenarioFits {
    pub single: QlearnResult,
    pub averaged: QlearnResult,
    pub calibrated: QlearnResult,
}

impl ScenarioFits {
    pub fn fit(cfg: &DgpConfig, train: &[PatientRecord]) -> Result<Self> {
        let specs = cfg.working_specs();
        Ok(ScenarioFits {
            single: fit_qlearning(train, &specs, SourceKind::SingleSurrogate)?,
            averaged: fit_qlearning(train, &specs, SourceKind::AveragedSurrogate)?,
            calibrated: fit_qlearning(train, &specs, SourceKind::Calibrated)?,
        })
    }

    pub fn get(&self, estimator: SourceKind) -> Result<&QlearnResult> {
        match estimator {
            SourceKind::SingleSurrogate => Ok(&self.single),
            SourceKind::AveragedSurrogate => Ok(&self.averaged),
            SourceKind::Calibrated => Ok(&self.calibrated),
            SourceKind::True => Err(Error::InvalidConfig("no prediction scenario trains on the truth".into())),
        }
    }
}

/// Actions a scenario assigns to one test patient, stage 1 first. Calibrated
/// test covariates use the calibration models estimated on the training data.
pub fn scenario_actions(cfg: &DgpConfig, fits: &ScenarioFits, scenario: Scenario, patient: &PatientRecord) -> Result<Vec<bool>> {
    let stages = patient.stages();
    let Some(estimator) = scenario.estimator() else {
        return (1..=cfg.stages)
            .map(|j| Ok(cfg.optimal_action(j, stages[j - 1].true_covariate().ok_or(Error::MissingSource("true"))?[0])))
            .collect();
    };
    let fit = fits.get(estimator)?;
    let source = match scenario.test_source() {
        SourceKind::True => CovariateSource::True,
        SourceKind::SingleSurrogate => CovariateSource::SingleSurrogate,
        SourceKind::AveragedSurrogate => CovariateSource::AveragedSurrogate,
        SourceKind::Calibrated => fit.source()?,
    };
    (1..=cfg.stages).map(|j| fit.policy.recommend_for(stages, j, source)).collect()
}

/// Per-stage and joint fraction of correctly identified optimal actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub scenario: Scenario,
    pub stage2: f64,
    pub stage1: f64,
    /// Correct at every stage.
    pub joint: f64,
}

pub fn evaluate_prediction_accuracy(
    cfg: &DgpConfig,
    fits: &ScenarioFits,
    test: &[PatientRecord],
    scenarios: &[Scenario],
) -> Result<Vec<AccuracyRow>> {
    if cfg.stages != 2 {
        return Err(Error::InvalidConfig("prediction accuracy needs a two-stage design".into()));
    }
    let truth = test
        .iter()
        .map(|p| scenario_actions(cfg, fits, Scenario::Opt, p))
        .collect::<Result<Vec<_>>>()?;
    let n = test.len() as f64;
    scenarios
        .iter()
        .map(|&scenario| {
            let mut hits = [0usize; 3];
            for (p, opt) in test.iter().zip(&truth) {
                let a = scenario_actions(cfg, fits, scenario, p)?;
                let ok1 = a[0] == opt[0];
                let ok2 = a[1] == opt[1];
                hits[0] += ok1 as usize;
                hits[1] += ok2 as usize;
                hits[2] += (ok1 && ok2) as usize;
            }
            Ok(AccuracyRow {
                scenario,
                stage1: hits[0] as f64 / n,
                stage2: hits[1] as f64 / n,
                joint: hits[2] as f64 / n,
            })
        })
        .collect()
}

/// Mean of the noise-free outcome over `test` when each patient follows
/// `scenario`.
pub fn evaluate_value(cfg: &DgpConfig, fits: &ScenarioFits, test: &[PatientRecord], scenario: Scenario) -> Result<f64> {
    let mut total = 0.0;
    for p in test {
        let a = scenario_actions(cfg, fits, scenario, p)?;
        total += cfg.mean_outcome(p.stages(), &a)?;
    }
    Ok(total / test.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReplication {
    pub accuracy: Vec<AccuracyRow>,
    /// In [`Scenario::VALUE`] order.
    pub value: Vec<(Scenario, f64)>,
}

/// One train/test replication: training data from stream 0 of the
/// replication seed, test data from stream 1.
pub fn prediction_replication(cfg: &DgpConfig, n_test: usize, index: usize) -> Result<PredictionReplication> {
    if n_test == 0 {
        return Err(Error::InvalidConfig("test sample must be non-empty".into()));
    }
    let seed = replication_seed(cfg.seed, index);
    let train = draw_records(cfg, cfg.n, &mut stream_rng(seed, 0))?;
    let test = draw_records(cfg, n_test, &mut stream_rng(seed, 1))?;
    let fits = ScenarioFits::fit(cfg, &train)?;
    let accuracy = evaluate_prediction_accuracy(cfg, &fits, &test, &Scenario::ACCURACY)?;
    let value = Scenario::VALUE
        .iter()
        .map(|&s| Ok((s, evaluate_value(cfg, &fits, &test, s)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionReplication { accuracy, value })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRow {
    pub scenario: Scenario,
    pub mean: f64,
    /// Across replications, divisor `n − 1`.
    pub sd: f64,
}
