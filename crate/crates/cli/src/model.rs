//! The saved form of a fitted regime.

use std::path::Path;

use rcql_core::calibration::StageCalibrations;
use rcql_core::data::{DesignSpec, SourceKind};
use rcql_core::qlearning::{Policy, QlearnResult, StageFit};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDocument {
    pub stage: usize,
    pub n_obs: usize,
    pub residual_variance: f64,
    pub error_prone_dim: usize,
    pub error_free_dim: usize,
    /// Treatment-free coefficients keyed by term name.
    pub treatment_free: Map<String, Value>,
    /// Blip coefficients keyed by term name.
    pub blip: Map<String, Value>,
    pub spec: DesignSpec,
}

/// A fitted regime: per-stage coefficients (later stage first), the
/// covariate source, and the calibration models when the source needs them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub covariate_source: SourceKind,
    pub stages: Vec<StageDocument>,
    pub calibration: Option<StageCalibrations>,
}

fn keyed(names: Vec<String>, values: &[f64]) -> Map<String, Value> {
    names.into_iter().zip(values).map(|(k, &v)| (k, Value::from(v))).collect()
}

impl StageDocument {
    fn new(fit: &StageFit, error_prone_dim: usize, error_free_dim: usize) -> Self {
        StageDocument {
            stage: fit.stage,
            n_obs: fit.ols.n_obs,
            residual_variance: fit.ols.residual_variance,
            error_prone_dim,
            error_free_dim,
            treatment_free: keyed(fit.treatment_free_names(), &fit.beta),
            blip: keyed(fit.blip_names(), &fit.psi),
            spec: fit.spec.clone(),
        }
    }

    /// Blip coefficients in the spec's term order.
    pub fn psi(&self) -> Result<Vec<f64>> {
        self.spec
            .blip_terms
            .iter()
            .map(|t| {
                let name = t.name(self.stage);
                self.blip
                    .get(&name)
                    .and_then(Value::as_f64)
                    .ok_or_else(|| CliError::Usage(format!("stage {}: blip coefficient `{name}` missing", self.stage)))
            })
            .collect()
    }
}

impl FitDocument {
    /// `dims` gives `(error-prone, error-free)` covariate counts per stage,
    /// stage 1 first.
    pub fn from_result(result: &QlearnResult, dims: &[(usize, usize)]) -> Self {
        let dim = |stage: usize| dims.get(stage - 1).copied().unwrap_or_default();
        let mut stages = Vec::new();
        if let Some(f) = &result.stage2 {
            let (dx, dz) = dim(2);
            stages.push(StageDocument::new(f, dx, dz));
        }
        let (dx, dz) = dim(1);
        stages.push(StageDocument::new(&result.stage1, dx, dz));
        FitDocument { covariate_source: result.covariate_source, stages, calibration: result.calibration.clone() }
    }

    pub fn stage(&self, stage: usize) -> Option<&StageDocument> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn policy(&self) -> Result<Policy> {
        let mut psis = Vec::new();
        let mut specs = Vec::new();
        for stage in 1..=self.stage_count() {
            let doc = self.stage(stage).ok_or_else(|| CliError::Usage(format!("model lacks stage {stage}")))?;
            psis.push(doc.psi()?);
            specs.push(doc.spec.clone());
        }
        Ok(Policy::new(psis, specs)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
    }
}
