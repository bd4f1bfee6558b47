//! Two-stage analysis of depression-trial data in which severity is scored
//! twice, once by the clinician and once by the patient.
//!
//! The two scores are treated as replicates of the true severity `Q_j`, with
//! the switch preference `P_j` and the severity slope `S_j` as error-free
//! covariates. Three fits are compared: clinician score alone, patient score
//! alone, and regression calibration on both.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{CovariateTerm, DesignSpec, PatientRecord, SourceKind, StageObservation};
use crate::inference::{bootstrap_with, BootstrapOptions, BootstrapSummary};
use crate::qlearning::QSpecs;
use crate::rng::stream_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StardStage {
    pub qids_c: f64,
    pub qids_s: f64,
    pub slope: f64,
    pub preference: bool,
    pub treatment: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StardRow {
    pub id: u64,
    pub stage1: StardStage,
    pub stage2: Option<StardStage>,
    pub y1: f64,
    pub y2: Option<f64>,
    /// Remission after stage 1.
    pub r1: bool,
}

impl StardRow {
    pub fn validate(&self) -> Result<()> {
        if self.r1 && (self.stage2.is_some() || self.y2.is_some()) {
            return Err(Error::InvalidRecord(format!("patient {}: remitter with stage-2 data", self.id)));
        }
        if !self.r1 && self.stage2.is_none() {
            return Err(Error::InvalidRecord(format!("patient {}: non-remitter without stage-2 covariates", self.id)));
        }
        let finite = |v: f64| v.is_finite();
        let stage_ok = |s: &StardStage| finite(s.qids_c) && finite(s.qids_s) && finite(s.slope);
        if !finite(self.y1)
            || self.y2.is_some_and(|y| !finite(y))
            || !stage_ok(&self.stage1)
            || self.stage2.as_ref().is_some_and(|s| !stage_ok(s))
        {
            return Err(Error::InvalidRecord(format!("patient {}: non-finite value", self.id)));
        }
        Ok(())
    }
}

/// `R₁·Y₁ + (1 − R₁)·(Y₁ + Y₂)/2`.
pub fn composite_outcome(row: &StardRow) -> Result<f64> {
    if row.r1 {
        Ok(row.y1)
    } else {
        let y2 = row.y2.ok_or(Error::MissingY2 { id: row.id })?;
        Ok(0.5 * (row.y1 + y2))
    }
}

/// Which score fills replicate column 0 (the one a single-surrogate fit reads).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeadScore {
    Clinician,
    Patient,
}

fn stage_obs(s: &StardStage, lead: LeadScore) -> Result<StageObservation> {
    let reps = match lead {
        LeadScore::Clinician => vec![Some(s.qids_c), Some(s.qids_s)],
        LeadScore::Patient => vec![Some(s.qids_s), Some(s.qids_c)],
    };
    let p = if s.preference { 1.0 } else { 0.0 };
    StageObservation::new(vec![p, s.slope], vec![reps], None, s.treatment)
}

/// Trajectories with `Z = (P, S)` and the two scores as replicates of `Q`.
pub fn to_records(rows: &[StardRow], lead: LeadScore) -> Result<Vec<PatientRecord>> {
    rows.iter()
        .map(|row| {
            row.validate()?;
            let y = composite_outcome(row)?;
            let mut stages = vec![stage_obs(&row.stage1, lead)?];
            if let Some(s2) = &row.stage2 {
                stages.push(stage_obs(s2, lead)?);
            }
            PatientRecord::new(row.id, stages, y, Some(row.y1), Some(row.r1))
        })
        .collect()
}

/// Treatment-free and blip terms `(1, P, S, Q)` at both stages.
pub fn default_specs() -> QSpecs {
    let terms = vec![
        CovariateTerm::intercept(),
        CovariateTerm::error_free(0),
        CovariateTerm::error_free(1),
        CovariateTerm::error_prone(0),
    ];
    let spec = DesignSpec { treatment_free_terms: terms.clone(), blip_terms: terms };
    QSpecs::two_stage(spec.clone(), spec)
}

/// Display labels of the blip rows, stage 2 first.
pub fn blip_labels(specs: &QSpecs) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for stage in [2, 1] {
        for term in &specs.for_stage(stage)?.blip_terms {
            let name = term.name(stage);
            let label = match name.as_str() {
                "1" => format!("A{stage}"),
                other => format!("A{stage}{}", friendly(other, stage)),
            };
            out.push(label);
        }
    }
    Ok(out)
}

fn friendly(name: &str, stage: usize) -> String {
    match name.split('_').collect::<Vec<_>>().as_slice() {
        [v, "1"] if v.starts_with('Z') => format!("P{stage}"),
        [v, "2"] if v.starts_with('Z') => format!("S{stage}"),
        [v, "1"] if v.starts_with('X') => format!("Q{stage}"),
        _ => name.to_string(),
    }
}

/// The three bootstrap fits, each restricted to the blip parameters in
/// label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StardAnalysis {
    pub labels: Vec<String>,
    pub clinician: BootstrapSummary,
    pub patient: BootstrapSummary,
    pub corrected: BootstrapSummary,
}

impl StardAnalysis {
    pub fn summaries(&self) -> [(&'static str, &BootstrapSummary); 3] {
        [("clinician", &self.clinician), ("patient", &self.patient), ("corrected", &self.corrected)]
    }
}

/// Runs the bootstrap for one estimator; lets callers substitute a parallel
/// driver.
pub type BootstrapRunner<'r> =
    &'r dyn Fn(&[PatientRecord], &QSpecs, SourceKind, BootstrapOptions) -> Result<BootstrapSummary>;

/// The bootstrap seed paired with data drawn from `seed`: the first draw of
/// stream 1, leaving stream 0 to the data.
pub fn bootstrap_seed(seed: u64) -> u64 {
    stream_rng(seed, 1).next_u64()
}

pub fn analyze_stard(rows: &[StardRow], b: usize, seed: u64) -> Result<StardAnalysis> {
    analyze_stard_with(rows, &default_specs(), BootstrapOptions::new(b, seed), &bootstrap_with)
}

/// All three estimators use the same bootstrap seed, so they see the same
/// resampled patients.
pub fn analyze_stard_with(
    rows: &[StardRow],
    specs: &QSpecs,
    opts: BootstrapOptions,
    runner: BootstrapRunner<'_>,
) -> Result<StardAnalysis> {
    if specs.stage2.is_none() {
        return Err(Error::InvalidConfig("the analysis needs a stage-2 design".into()));
    }
    let clinician_first = to_records(rows, LeadScore::Clinician)?;
    let patient_first = to_records(rows, LeadScore::Patient)?;
    let blips = |s: BootstrapSummary| {
        let idx: Vec<usize> = s.names.iter().enumerate().filter(|(_, n)| n.starts_with("psi")).map(|(i, _)| i).collect();
        s.select(&idx)
    };
    let clinician = blips(runner(&clinician_first, specs, SourceKind::SingleSurrogate, opts)?);
    let patient = blips(runner(&patient_first, specs, SourceKind::SingleSurrogate, opts)?);
    let corrected = blips(runner(&clinician_first, specs, SourceKind::Calibrated, opts)?);
    Ok(StardAnalysis { labels: blip_labels(specs)?, clinician, patient, corrected })
}

/// Parameters of the synthetic data generator.
///
/// Coefficient vectors are ordered `(1, P, S, Q)`. The stage-1 outcome is
/// scaled so that the composite outcome follows the stage-1 blip `psi1`
/// after the stage-2 pseudo-outcome step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub n: usize,
    pub stage2_n: usize,
    /// SD of each score around the true severity.
    pub error_sd: f64,
    pub noise_sd: f64,
    pub preference_rate: f64,
    pub slope_sd: f64,
    pub beta1: [f64; 4],
    pub psi1: [f64; 4],
    pub beta2: [f64; 4],
    pub psi2: [f64; 4],
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            n: 1438,
            stage2_n: 377,
            error_sd: 0.8,
            noise_sd: 1.0,
            preference_rate: 0.4,
            slope_sd: 0.5,
            beta1: [-5.0, 0.2, 0.3, -1.0],
            psi1: [-0.15, 0.15, 0.1, -0.8],
            beta2: [-5.0, 0.1, 0.2, -1.0],
            psi2: [-0.35, 0.4, -0.5, 1.2],
        }
    }
}

impl FixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage2_n >= self.n || self.stage2_n == 0 {
            return Err(Error::InvalidConfig("stage-2 size must lie strictly between 0 and n".into()));
        }
        if !(self.error_sd >= 0.0 && self.noise_sd >= 0.0 && self.slope_sd >= 0.0) {
            return Err(Error::InvalidConfig("standard deviations must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.preference_rate) {
            return Err(Error::InvalidConfig("preference rate must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// True blip coefficients in label order `(ψ₂, ψ₁)`.
    pub fn truth(&self) -> Vec<f64> {
        self.psi2.iter().chain(&self.psi1).copied().collect()
    }
}

/// Synthetic rows with the default stage layout: `stage2_n` randomly chosen
/// non-remitters proceed to stage 2.
///
/// Remitters contribute `Y = Y₁`, entrants contribute `Y` generated from the
/// stage-2 model and `Y₂ = 2Y − Y₁`. The stage-1 model for `Y₁` is inflated
/// by `1/(1 − π)`, `π` the entrant fraction, which makes the composite
/// pseudo-outcome linear in the stage-1 blip `psi1`.
pub fn synthetic_fixture(cfg: &FixtureConfig, seed: u64) -> Result<Vec<StardRow>> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, 0);
    let pi = cfg.stage2_n as f64 / cfg.n as f64;
    let psi1_scaled: Vec<f64> = cfg.psi1.iter().map(|p| p / (1.0 - pi)).collect();
    let mut entrant = vec![false; cfg.n];
    for i in sample(&mut rng, cfg.n, cfg.stage2_n).iter() {
        entrant[i] = true;
    }
    let draw_stage = |rng: &mut rand_chacha::ChaCha8Rng| {
        let normal = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        let q = normal(rng);
        let stage = StardStage {
            qids_c: q + cfg.error_sd * normal(rng),
            qids_s: q + cfg.error_sd * normal(rng),
            slope: cfg.slope_sd * normal(rng),
            preference: rng.random_bool(cfg.preference_rate),
            treatment: rng.random_bool(0.5),
        };
        let h = [1.0, if stage.preference { 1.0 } else { 0.0 }, stage.slope, q];
        (stage, h)
    };
    let lin = |c: &[f64], h: &[f64; 4]| c.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
    let mut rows = Vec::with_capacity(cfg.n);
    for (i, &enters) in entrant.iter().enumerate() {
        let (s1, h1) = draw_stage(&mut rng);
        let a1 = if s1.treatment { 1.0 } else { 0.0 };
        let e1: f64 = StandardNormal.sample(&mut rng);
        let y1 = lin(&cfg.beta1, &h1) + a1 * lin(&psi1_scaled, &h1) + cfg.noise_sd * e1;
        let row = if enters {
            let (s2, h2) = draw_stage(&mut rng);
            let a2 = if s2.treatment { 1.0 } else { 0.0 };
            let e2: f64 = StandardNormal.sample(&mut rng);
            let y = lin(&cfg.beta2, &h2) + a2 * lin(&cfg.psi2, &h2) + cfg.noise_sd * e2;
            StardRow { id: i as u64, stage1: s1, stage2: Some(s2), y1, y2: Some(2.0 * y - y1), r1: false }
        } else {
            StardRow { id: i as u64, stage1: s1, stage2: None, y1, y2: None, r1: true }
        };
        rows.push(row);
    }
    Ok(rows)
}
