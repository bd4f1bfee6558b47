//! Backward-induction Q-learning with linear stage models.
//!
//! The stage-`j` Q-function is `βⱼᵀHⱼ₀ + (ψⱼᵀHⱼ₁)Aⱼ`. Stage 2 is fit on the
//! patients who reached it; its fitted maximum over `A₂` becomes the stage-1
//! response. Patients without a second stage keep their observed outcome.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::calibration::StageCalibrations;
use crate::data::{
    extend_design_row, CovariateSource, DesignSpec, History, PatientRecord, SourceKind, StageObservation,
};
use crate::linmodel::{fit_ols, OlsFit};
use crate::{Error, Result};

/// Design specifications for each stage. `stage2` is `None` for a
/// single-decision analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QSpecs {
    pub stage1: DesignSpec,
    pub stage2: Option<DesignSpec>,
}

impl QSpecs {
    pub fn one_stage(stage1: DesignSpec) -> Self {
        QSpecs { stage1, stage2: None }
    }

    pub fn two_stage(stage1: DesignSpec, stage2: DesignSpec) -> Self {
        QSpecs { stage1, stage2: Some(stage2) }
    }

    /// Main-effect designs; see [`DesignSpec::main_effects`].
    pub fn main_effects(stages: usize, error_prone_dim: usize, error_free_dim: usize) -> Self {
        let stage1 = DesignSpec::main_effects(1, error_prone_dim, error_free_dim);
        let stage2 = (stages >= 2).then(|| DesignSpec::main_effects(2, error_prone_dim, error_free_dim));
        QSpecs { stage1, stage2 }
    }

    pub fn stages(&self) -> usize {
        if self.stage2.is_some() { 2 } else { 1 }
    }

    pub fn for_stage(&self, stage: usize) -> Result<&DesignSpec> {
        match stage {
            1 => Ok(&self.stage1),
            2 => self.stage2.as_ref().ok_or(Error::StageAbsent(2)),
            other => Err(Error::StageAbsent(other)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        if let Some(s) = &self.stage2 {
            s.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFit {
    pub stage: usize,
    pub beta: Vec<f64>,
    pub psi: Vec<f64>,
    pub spec: DesignSpec,
    pub ols: OlsFit,
}

impl StageFit {
    fn from_ols(stage: usize, spec: &DesignSpec, ols: OlsFit) -> Self {
        let split = spec.treatment_free_terms.len();
        StageFit {
            stage,
            beta: ols.coefficients[..split].to_vec(),
            psi: ols.coefficients[split..].to_vec(),
            spec: spec.clone(),
            ols,
        }
    }

    pub fn treatment_free_names(&self) -> Vec<String> {
        self.spec.treatment_free_terms.iter().map(|t| t.name(self.stage)).collect()
    }

    pub fn blip_names(&self) -> Vec<String> {
        self.spec.blip_terms.iter().map(|t| t.name(self.stage)).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// `1{ψᵀh > 0}`; an exact zero is not treated.
pub fn optimal_action(psi: &[f64], tailoring: &[f64]) -> Result<bool> {
    Ok(dot(psi, tailoring)? > 0.0)
}

/// `β̂₂ᵀh₂₀ + max(ψ̂₂ᵀh₂₁, 0)`.
pub fn pseudo_outcome(stage2: &StageFit, h20: &[f64], h21: &[f64]) -> Result<f64> {
    let base = dot(&stage2.beta, h20)?;
    let blip = dot(&stage2.psi, h21)?;
    Ok(if blip > 0.0 { base + blip } else { base })
}

/// Estimated decision rules, one blip vector per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub stage_psis: Vec<Vec<f64>>,
    pub specs: Vec<DesignSpec>,
}

impl Policy {
    pub fn new(stage_psis: Vec<Vec<f64>>, specs: Vec<DesignSpec>) -> Result<Self> {
        if stage_psis.len() != specs.len() || stage_psis.is_empty() {
            return Err(Error::DimensionMismatch { expected: specs.len(), found: stage_psis.len() });
        }
        for (psi, spec) in stage_psis.iter().zip(&specs) {
            if psi.len() != spec.blip_terms.len() {
                return Err(Error::DimensionMismatch { expected: spec.blip_terms.len(), found: psi.len() });
            }
        }
        Ok(Policy { stage_psis, specs })
    }

    pub fn stages(&self) -> usize {
        self.stage_psis.len()
    }

    pub fn psi(&self, stage: usize) -> Result<&[f64]> {
        stage
            .checked_sub(1)
            .and_then(|i| self.stage_psis.get(i))
            .map(Vec::as_slice)
            .ok_or(Error::StageAbsent(stage))
    }

    pub fn spec(&self, stage: usize) -> Result<&DesignSpec> {
        stage.checked_sub(1).and_then(|i| self.specs.get(i)).ok_or(Error::StageAbsent(stage))
    }

    /// The recommended action given an evaluated blip row `H_j1`.
    pub fn recommend(&self, stage: usize, tailoring: &[f64]) -> Result<bool> {
        optimal_action(self.psi(stage)?, tailoring)
    }

    pub fn recommend_history(&self, stage: usize, history: &History) -> Result<bool> {
        let row = self.spec(stage)?.blip_row(history)?;
        self.recommend(stage, &row)
    }

    /// The recommendation for one patient at `stage`, reading covariates from
    /// `source`.
    pub fn recommend_for(&self, stages: &[StageObservation], stage: usize, source: CovariateSource<'_>) -> Result<bool> {
        let h = crate::data::assemble_history(stages, stage, source)?;
        self.recommend_history(stage, &h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QlearnResult {
    pub stage2: Option<StageFit>,
    pub stage1: StageFit,
    pub policy: Policy,
    /// `Ỹ₁` for every patient, in input order.
    pub pseudo_outcomes: Vec<f64>,
    pub covariate_source: SourceKind,
    /// The models used when `covariate_source` is calibrated.
    pub calibration: Option<StageCalibrations>,
}

impl QlearnResult {
    fn stage_fits(&self) -> impl Iterator<Item = &StageFit> {
        self.stage2.iter().chain(core::iter::once(&self.stage1))
    }

    /// `(β̂₂, ψ̂₂, β̂₁, ψ̂₁)` flattened; the stage-2 blocks are absent for a
    /// one-stage fit.
    pub fn parameters(&self) -> Vec<f64> {
        self.stage_fits().flat_map(|f| f.beta.iter().chain(&f.psi).copied()).collect()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for f in self.stage_fits() {
            names.extend(f.treatment_free_names().into_iter().map(|n| format!("beta{}[{n}]", f.stage)));
            names.extend(f.blip_names().into_iter().map(|n| format!("psi{}[{n}]", f.stage)));
        }
        names
    }

    /// Positions of `(ψ̂₂, ψ̂₁)` within [`QlearnResult::parameters`].
    pub fn blip_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut offset = 0;
        for f in self.stage_fits() {
            offset += f.beta.len();
            out.extend(offset..offset + f.psi.len());
            offset += f.psi.len();
        }
        out
    }

    pub fn blip_parameters(&self) -> Vec<f64> {
        self.stage_fits().flat_map(|f| f.psi.iter().copied()).collect()
    }

    /// The source used for the fit, borrowing the fitted calibration models.
    pub fn source(&self) -> Result<CovariateSource<'_>> {
        source_for(self.covariate_source, self.calibration.as_ref())
    }
}

fn source_for(kind: SourceKind, cal: Option<&StageCalibrations>) -> Result<CovariateSource<'_>> {
    Ok(match kind {
        SourceKind::True => CovariateSource::True,
        SourceKind::SingleSurrogate => CovariateSource::SingleSurrogate,
        SourceKind::AveragedSurrogate => CovariateSource::AveragedSurrogate,
        SourceKind::Calibrated => CovariateSource::Calibrated(cal.ok_or(Error::MissingSource("calibrated"))?),
    })
}

pub fn fit_qlearning(records: &[PatientRecord], specs: &QSpecs, source: SourceKind) -> Result<QlearnResult> {
    let refs: Vec<&PatientRecord> = records.iter().collect();
    fit_qlearning_refs(&refs, specs, source)
}

/// As [`fit_qlearning`], over borrowed records (a bootstrap resample may
/// repeat the same record).
pub fn fit_qlearning_refs(records: &[&PatientRecord], specs: &QSpecs, source: SourceKind) -> Result<QlearnResult> {
    specs.validate()?;
    let calibration = match source {
        SourceKind::Calibrated => Some(StageCalibrations::fit(records, specs.stage2.is_some())?),
        _ => None,
    };
    let cov = source_for(source, calibration.as_ref())?;

    let mut pseudo_outcomes: Vec<f64> = records.iter().map(|r| r.outcome()).collect();
    let stage2 = match &specs.stage2 {
        Some(spec2) => {
            let entrants: Vec<usize> = (0..records.len()).filter(|&i| records[i].has_stage(2)).collect();
            let histories = entrants
                .iter()
                .map(|&i| records[i].history(2, cov))
                .collect::<Result<Vec<_>>>()?;
            let treatments: Vec<bool> = entrants.iter().map(|&i| records[i].stages()[1].treatment()).collect();
            let outcomes: Vec<f64> = entrants.iter().map(|&i| records[i].outcome()).collect();
            let fit = fit_stage(2, spec2, &histories, &treatments, &outcomes)?;
            for (&i, h) in entrants.iter().zip(&histories) {
                pseudo_outcomes[i] = pseudo_outcome(&fit, &spec2.treatment_free_row(h)?, &spec2.blip_row(h)?)?;
            }
            Some(fit)
        }
        None => None,
    };

    let histories = records.iter().map(|r| r.history(1, cov)).collect::<Result<Vec<_>>>()?;
    let treatments: Vec<bool> = records.iter().map(|r| r.stages()[0].treatment()).collect();
    let stage1 = fit_stage(1, &specs.stage1, &histories, &treatments, &pseudo_outcomes)?;

    let mut psis = Vec::new();
    let mut pol_specs = Vec::new();
    psis.push(stage1.psi.clone());
    pol_specs.push(stage1.spec.clone());
    if let Some(f) = &stage2 {
        psis.push(f.psi.clone());
        pol_specs.push(f.spec.clone());
    }
    let policy = Policy::new(psis, pol_specs)?;
    Ok(QlearnResult { stage2, stage1, policy, pseudo_outcomes, covariate_source: source, calibration })
}

/// Row-major design for one stage.
pub fn stage_design(spec: &DesignSpec, histories: &[History], treatments: &[bool]) -> Result<Vec<f64>> {
    let mut design = Vec::with_capacity(histories.len() * spec.n_params());
    for (h, &a) in histories.iter().zip(treatments) {
        extend_design_row(&mut design, h, a, spec)?;
    }
    Ok(design)
}

fn fit_stage(
    stage: usize,
    spec: &DesignSpec,
    histories: &[History],
    treatments: &[bool],
    response: &[f64],
) -> Result<StageFit> {
    let p = spec.n_params();
    let n = histories.len();
    if n < p + 2 {
        return Err(Error::InsufficientStageSample { stage, present: n, required: p + 2 });
    }
    let design = stage_design(spec, histories, treatments)?;
    let ols = fit_ols(&design, n, p, response)?;
    Ok(StageFit::from_ols(stage, spec, ols))
}
