//! Trajectories, replicate surrogates, histories and design rows.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::StageCalibrations;
use crate::{Error, Result};

/// One stage of one patient.
///
/// `surrogates` has one row per error-prone coordinate and one column per
/// replicate; a missing replicate is `None` in every row. The replicate count
/// `k` is derived from the presence pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct StageObservation {
    error_free: Vec<f64>,
    surrogates: Vec<Vec<Option<f64>>>,
    true_covariate: Option<Vec<f64>>,
    treatment: bool,
}

impl StageObservation {
    pub fn new(
        error_free: Vec<f64>,
        surrogates: Vec<Vec<Option<f64>>>,
        true_covariate: Option<Vec<f64>>,
        treatment: bool,
    ) -> Result<Self> {
        if error_free.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidRecord("non-finite error-free covariate".into()));
        }
        if let Some(first) = surrogates.first() {
            let cols = first.len();
            for row in &surrogates {
                if row.len() != cols {
                    return Err(Error::InvalidRecord("ragged replicate matrix".into()));
                }
                for (cell, lead) in row.iter().zip(first) {
                    if cell.is_some() != lead.is_some() {
                        return Err(Error::InvalidRecord(
                            "replicate present for some coordinates but not others".into(),
                        ));
                    }
                    if cell.is_some_and(|w| !w.is_finite()) {
                        return Err(Error::InvalidRecord("non-finite surrogate".into()));
                    }
                }
            }
            if first.iter().all(Option::is_none) {
                return Err(Error::InvalidRecord("error-prone covariate without any replicate".into()));
            }
        }
        if let Some(x) = &true_covariate {
            if x.len() != surrogates.len() {
                return Err(Error::DimensionMismatch { expected: surrogates.len(), found: x.len() });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidRecord("non-finite true covariate".into()));
            }
        }
        Ok(StageObservation { error_free, surrogates, true_covariate, treatment })
    }

    pub fn error_free(&self) -> &[f64] {
        &self.error_free
    }

    pub fn surrogates(&self) -> &[Vec<Option<f64>>] {
        &self.surrogates
    }

    pub fn true_covariate(&self) -> Option<&[f64]> {
        self.true_covariate.as_deref()
    }

    pub fn treatment(&self) -> bool {
        self.treatment
    }

    pub fn error_prone_dim(&self) -> usize {
        self.surrogates.len()
    }

    /// Number of declared replicate columns, present or not.
    pub fn replicate_columns(&self) -> usize {
        self.surrogates.first().map_or(0, Vec::len)
    }

    /// `k_ij`: replicates actually observed.
    pub fn replicate_count(&self) -> usize {
        self.surrogates.first().map_or(0, |r| r.iter().filter(|w| w.is_some()).count())
    }

    /// Present replicates of coordinate `c`.
    pub fn present_replicates(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.surrogates[c].iter().flatten().copied()
    }

    /// `W̄_ij`, the mean of the present replicates per coordinate.
    pub fn replicate_mean(&self) -> Vec<f64> {
        let k = self.replicate_count() as f64;
        (0..self.error_prone_dim())
            .map(|c| self.present_replicates(c).sum::<f64>() / k)
            .collect()
    }

    /// The first declared replicate column.
    pub fn first_replicate(&self) -> Result<Vec<f64>> {
        self.surrogates
            .iter()
            .map(|row| row.first().copied().flatten().ok_or(Error::MissingSource("single")))
            .collect()
    }
}

/// One patient trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    id: u64,
    stages: Vec<StageObservation>,
    outcome: f64,
    stage1_outcome: Option<f64>,
    remission_flag: Option<bool>,
}

impl PatientRecord {
    pub fn new(
        id: u64,
        stages: Vec<StageObservation>,
        outcome: f64,
        stage1_outcome: Option<f64>,
        remission_flag: Option<bool>,
    ) -> Result<Self> {
        if stages.is_empty() || stages.len() > 2 {
            return Err(Error::InvalidRecord(format!("patient {id}: expected 1 or 2 stages, found {}", stages.len())));
        }
        if !outcome.is_finite() {
            return Err(Error::InvalidRecord(format!("patient {id}: non-finite outcome")));
        }
        if stage1_outcome.is_some_and(|y| !y.is_finite()) {
            return Err(Error::InvalidRecord(format!("patient {id}: non-finite stage-1 outcome")));
        }
        Ok(PatientRecord { id, stages, outcome, stage1_outcome, remission_flag })
    }

    /// Simulation-only shorthand for [`PatientRecord::new`] without real-data fields.
    pub fn simple(id: u64, stages: Vec<StageObservation>, outcome: f64) -> Result<Self> {
        PatientRecord::new(id, stages, outcome, None, None)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn stages(&self) -> &[StageObservation] {
        &self.stages
    }

    pub fn outcome(&self) -> f64 {
        self.outcome
    }

    pub fn stage1_outcome(&self) -> Option<f64> {
        self.stage1_outcome
    }

    pub fn remission_flag(&self) -> Option<bool> {
        self.remission_flag
    }

    pub fn has_stage(&self, stage: usize) -> bool {
        (1..=self.stages.len()).contains(&stage)
    }

    pub fn stage(&self, stage: usize) -> Result<&StageObservation> {
        stage_of(&self.stages, stage)
    }

    pub fn history(&self, stage: usize, source: CovariateSource<'_>) -> Result<History> {
        assemble_history(&self.stages, stage, source)
    }
}

fn stage_of(stages: &[StageObservation], stage: usize) -> Result<&StageObservation> {
    stage
        .checked_sub(1)
        .and_then(|i| stages.get(i))
        .ok_or(Error::StageAbsent(stage))
}

/// Which values fill the error-prone slots of a history, without the
/// calibration payload. This is the tag carried by results and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceKind {
    #[serde(rename = "true")]
    True,
    #[serde(rename = "single")]
    SingleSurrogate,
    #[serde(rename = "avg")]
    AveragedSurrogate,
    #[serde(rename = "calibrated")]
    Calibrated,
}

impl SourceKind {
    pub const ALL: [SourceKind; 4] =
        [SourceKind::True, SourceKind::SingleSurrogate, SourceKind::AveragedSurrogate, SourceKind::Calibrated];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::True => "true",
            SourceKind::SingleSurrogate => "single",
            SourceKind::AveragedSurrogate => "avg",
            SourceKind::Calibrated => "calibrated",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true" => Ok(SourceKind::True),
            "single" => Ok(SourceKind::SingleSurrogate),
            "avg" | "averaged" => Ok(SourceKind::AveragedSurrogate),
            "calibrated" | "rc" => Ok(SourceKind::Calibrated),
            other => Err(Error::InvalidConfig(format!("unknown covariate source `{other}`"))),
        }
    }
}

/// Where the error-prone slots of a history come from.
#[derive(Debug, Clone, Copy)]
pub enum CovariateSource<'a> {
    /// The stored truth (simulation only).
    True,
    /// The first replicate column.
    SingleSurrogate,
    /// The mean of the present replicates.
    AveragedSurrogate,
    /// Regression-calibration estimates from fitted per-stage models.
    Calibrated(&'a StageCalibrations),
}

impl CovariateSource<'_> {
    pub fn kind(&self) -> SourceKind {
        match self {
            CovariateSource::True => SourceKind::True,
            CovariateSource::SingleSurrogate => SourceKind::SingleSurrogate,
            CovariateSource::AveragedSurrogate => SourceKind::AveragedSurrogate,
            CovariateSource::Calibrated(_) => SourceKind::Calibrated,
        }
    }

    fn error_prone(&self, obs: &StageObservation, stage: usize) -> Result<Vec<f64>> {
        match self {
            CovariateSource::True => obs.true_covariate().map(<[f64]>::to_vec).ok_or(Error::MissingSource("true")),
            CovariateSource::SingleSurrogate => obs.first_replicate(),
            CovariateSource::AveragedSurrogate => Ok(obs.replicate_mean()),
            CovariateSource::Calibrated(cal) => cal.for_stage(stage)?.calibrate(obs),
        }
    }
}

/// Covariates from an earlier stage carried into a later history.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorHistory {
    pub error_prone: Vec<f64>,
    pub error_free: Vec<f64>,
    pub treatment: f64,
}

/// `H_j`: the information available when choosing treatment at stage `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub error_prone: Vec<f64>,
    pub error_free: Vec<f64>,
    pub prior: Option<PriorHistory>,
}

impl History {
    /// A stage-1 history.
    pub fn new(error_prone: Vec<f64>, error_free: Vec<f64>) -> Self {
        History { error_prone, error_free, prior: None }
    }

    /// Flattened as `(X₁, Z₁, A₁, X₂, Z₂)` at stage 2 and `(X₁, Z₁)` at stage 1.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::new();
        if let Some(p) = &self.prior {
            v.extend_from_slice(&p.error_prone);
            v.extend_from_slice(&p.error_free);
            v.push(p.treatment);
        }
        v.extend_from_slice(&self.error_prone);
        v.extend_from_slice(&self.error_free);
        v
    }
}

/// Build `H_j` for `stage` with error-prone slots filled from `source`.
pub fn assemble_history(stages: &[StageObservation], stage: usize, source: CovariateSource<'_>) -> Result<History> {
    if !(1..=2).contains(&stage) {
        return Err(Error::StageAbsent(stage));
    }
    let obs = stage_of(stages, stage)?;
    let prior = if stage == 2 {
        let first = &stages[0];
        Some(PriorHistory {
            error_prone: source.error_prone(first, 1)?,
            error_free: first.error_free.clone(),
            treatment: if first.treatment { 1.0 } else { 0.0 },
        })
    } else {
        None
    };
    Ok(History { error_prone: source.error_prone(obs, stage)?, error_free: obs.error_free.clone(), prior })
}

/// A single history coordinate (or the constant).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermSource {
    Intercept,
    ErrorFree(usize),
    ErrorProne(usize),
    PriorErrorFree(usize),
    PriorErrorProne(usize),
    PriorTreatment,
}

impl TermSource {
    fn value(&self, h: &History) -> Result<f64> {
        let pick = |v: &[f64], i: usize| {
            v.get(i).copied().ok_or(Error::DimensionMismatch { expected: v.len(), found: i + 1 })
        };
        let prior = || h.prior.as_ref().ok_or(Error::StageAbsent(1));
        match *self {
            TermSource::Intercept => Ok(1.0),
            TermSource::ErrorFree(i) => pick(&h.error_free, i),
            TermSource::ErrorProne(i) => pick(&h.error_prone, i),
            TermSource::PriorErrorFree(i) => pick(&prior()?.error_free, i),
            TermSource::PriorErrorProne(i) => pick(&prior()?.error_prone, i),
            TermSource::PriorTreatment => Ok(prior()?.treatment),
        }
    }

    fn name(&self, stage: usize) -> String {
        let prev = stage.saturating_sub(1);
        match *self {
            TermSource::Intercept => "1".to_string(),
            TermSource::ErrorFree(i) => format!("Z{stage}_{}", i + 1),
            TermSource::ErrorProne(i) => format!("X{stage}_{}", i + 1),
            TermSource::PriorErrorFree(i) => format!("Z{prev}_{}", i + 1),
            TermSource::PriorErrorProne(i) => format!("X{prev}_{}", i + 1),
            TermSource::PriorTreatment => format!("A{prev}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermTransform {
    #[default]
    Identity,
    /// Product with a second coordinate, e.g. `A₁·X₁` in a stage-2 model.
    Interaction(TermSource),
}

/// One column of a stage design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateTerm {
    pub source: TermSource,
    #[serde(default)]
    pub transform: TermTransform,
}

impl CovariateTerm {
    pub const fn new(source: TermSource) -> Self {
        CovariateTerm { source, transform: TermTransform::Identity }
    }

    pub const fn intercept() -> Self {
        Self::new(TermSource::Intercept)
    }

    pub const fn error_prone(i: usize) -> Self {
        Self::new(TermSource::ErrorProne(i))
    }

    pub const fn error_free(i: usize) -> Self {
        Self::new(TermSource::ErrorFree(i))
    }

    pub const fn times(self, other: TermSource) -> Self {
        CovariateTerm { source: self.source, transform: TermTransform::Interaction(other) }
    }

    pub fn value(&self, h: &History) -> Result<f64> {
        let v = self.source.value(h)?;
        match self.transform {
            TermTransform::Identity => Ok(v),
            TermTransform::Interaction(other) => Ok(v * other.value(h)?),
        }
    }

    pub fn name(&self, stage: usize) -> String {
        match self.transform {
            TermTransform::Identity => self.source.name(stage),
            TermTransform::Interaction(other) => format!("{}*{}", self.source.name(stage), other.name(stage)),
        }
    }
}

/// The split of a stage's Q-function into `H_j0` (treatment-free) and
/// `H_j1` (blip) terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub treatment_free_terms: Vec<CovariateTerm>,
    pub blip_terms: Vec<CovariateTerm>,
}

impl DesignSpec {
    pub fn new(treatment_free_terms: Vec<CovariateTerm>, blip_terms: Vec<CovariateTerm>) -> Result<Self> {
        let spec = DesignSpec { treatment_free_terms, blip_terms };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.treatment_free_terms.is_empty() || self.blip_terms.is_empty() {
            return Err(Error::InvalidConfig("design term lists must be non-empty".into()));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.treatment_free_terms.len() + self.blip_terms.len()
    }

    /// `H_j0` evaluated on `h`.
    pub fn treatment_free_row(&self, h: &History) -> Result<Vec<f64>> {
        self.treatment_free_terms.iter().map(|t| t.value(h)).collect()
    }

    /// `H_j1` evaluated on `h`.
    pub fn blip_row(&self, h: &History) -> Result<Vec<f64>> {
        self.blip_terms.iter().map(|t| t.value(h)).collect()
    }

    /// Main effects of the stage's own covariates, plus (at stage 2) the
    /// stage-1 covariates, `A₁` and `A₁·X₁`; blip on the error-prone
    /// covariates.
    pub fn main_effects(stage: usize, error_prone_dim: usize, error_free_dim: usize) -> Self {
        let mut tf = alloc::vec![CovariateTerm::intercept()];
        if stage == 2 {
            tf.extend((0..error_prone_dim).map(|i| CovariateTerm::new(TermSource::PriorErrorProne(i))));
            tf.extend((0..error_free_dim).map(|i| CovariateTerm::new(TermSource::PriorErrorFree(i))));
            tf.push(CovariateTerm::new(TermSource::PriorTreatment));
            tf.extend(
                (0..error_prone_dim)
                    .map(|i| CovariateTerm::new(TermSource::PriorTreatment).times(TermSource::PriorErrorProne(i))),
            );
        }
        tf.extend((0..error_free_dim).map(CovariateTerm::error_free));
        tf.extend((0..error_prone_dim).map(CovariateTerm::error_prone));
        let mut blip = alloc::vec![CovariateTerm::intercept()];
        blip.extend((0..error_prone_dim).map(CovariateTerm::error_prone));
        DesignSpec { treatment_free_terms: tf, blip_terms: blip }
    }
}

/// `(H_j0, A_j·H_j1)` for one patient.
pub fn build_design_row(history: &History, treatment: bool, spec: &DesignSpec) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(spec.n_params());
    extend_design_row(&mut row, history, treatment, spec)?;
    Ok(row)
}

pub(crate) fn extend_design_row(out: &mut Vec<f64>, h: &History, treatment: bool, spec: &DesignSpec) -> Result<()> {
    for t in &spec.treatment_free_terms {
        out.push(t.value(h)?);
    }
    for t in &spec.blip_terms {
        // terms are still evaluated at A = 0 so bad indices surface either way
        let v = t.value(h)?;
        out.push(if treatment { v } else { 0.0 });
    }
    Ok(())
}
