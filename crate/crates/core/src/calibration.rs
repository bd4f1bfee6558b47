//! Regression calibration from replicated surrogates.
//!
//! For patient `i` at stage `j` the unobserved `X_ij` is replaced by its
//! estimated best linear predictor given the replicate mean `W̄_ij` and the
//! error-free covariates `Z_ij`:
//!
//! ```text
//! X̂ = μ̂_w + [Σ̂_xx Σ̂_xz] · [[Σ̂_xx + Σ̂_ee/k, Σ̂_xz], [Σ̂_xzᵀ, Σ̂_zz]]⁻¹ · (W̄ − μ̂_w, Z − μ̂_z)
//! ```
//!
//! with moments estimated from the same sample. `Σ̂_xx` is used as computed
//! even when the subtraction of the error covariance leaves it indefinite;
//! the model records that in [`CalibrationModel::sigma_xx_indefinite`].

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{PatientRecord, StageObservation};
use crate::linalg::Matrix;
use crate::{Error, Result};

/// Pivot tolerance for the per-patient block matrix.
pub const SINGULAR_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub mu_w: Vec<f64>,
    pub mu_z: Vec<f64>,
    pub sigma_xx: Matrix,
    pub sigma_xz: Matrix,
    pub sigma_zz: Matrix,
    pub sigma_ee: Matrix,
    pub nu: f64,
    pub n: usize,
    #[serde(default)]
    pub sigma_xx_indefinite: bool,
}

impl CalibrationModel {
    pub fn error_prone_dim(&self) -> usize {
        self.mu_w.len()
    }

    pub fn error_free_dim(&self) -> usize {
        self.mu_z.len()
    }

    /// `[Σ̂_xx Σ̂_xz] M_k⁻¹` for a patient with `k` replicates.
    pub fn gain(&self, k: usize) -> Result<Matrix> {
        if k == 0 {
            return Err(Error::InvalidRecord("calibration needs at least one replicate".into()));
        }
        let dx = self.error_prone_dim();
        let mut top_left = self.sigma_ee.clone();
        top_left.scale(1.0 / k as f64);
        for i in 0..dx {
            for j in 0..dx {
                top_left[(i, j)] += self.sigma_xx[(i, j)];
            }
        }
        let xz_t = self.sigma_xz.transpose();
        let m = Matrix::block(&top_left, &self.sigma_xz, &xz_t, &self.sigma_zz)?;
        // M is symmetric, so Gᵀ = M⁻¹ Cᵀ with C = [Σ̂_xx Σ̂_xz]
        let c_t = Matrix::block(
            &self.sigma_xx.transpose(),
            &Matrix::zeros(dx, 0),
            &xz_t,
            &Matrix::zeros(self.error_free_dim(), 0),
        )?;
        m.solve(&c_t, SINGULAR_TOLERANCE)
            .map(|g_t| g_t.transpose())
            .ok_or(Error::SingularBlockMatrix { k })
    }

    fn apply_gain(&self, gain: &Matrix, obs: &StageObservation) -> Result<Vec<f64>> {
        let w_bar = obs.replicate_mean();
        let deviation: Vec<f64> = w_bar
            .iter()
            .zip(&self.mu_w)
            .map(|(w, m)| w - m)
            .chain(obs.error_free().iter().zip(&self.mu_z).map(|(z, m)| z - m))
            .collect();
        let shift = gain.mul_vec(&deviation)?;
        Ok(self.mu_w.iter().zip(shift).map(|(m, s)| m + s).collect())
    }

    fn check_dims(&self, obs: &StageObservation) -> Result<()> {
        if obs.error_prone_dim() != self.error_prone_dim() {
            return Err(Error::DimensionMismatch { expected: self.error_prone_dim(), found: obs.error_prone_dim() });
        }
        if obs.error_free().len() != self.error_free_dim() {
            return Err(Error::DimensionMismatch { expected: self.error_free_dim(), found: obs.error_free().len() });
        }
        Ok(())
    }
}

/// Moment estimates from one stage's replicate data, pooled over treatment
/// arms.
pub fn estimate_moments(stages: &[&StageObservation]) -> Result<CalibrationModel> {
    let n = stages.len();
    if n < 2 {
        return Err(Error::DegenerateSample(format!("calibration needs at least 2 patients, found {n}")));
    }
    let dx = stages[0].error_prone_dim();
    let dz = stages[0].error_free().len();
    if dx == 0 {
        return Err(Error::DegenerateSample("stage has no error-prone covariates".into()));
    }
    for s in stages {
        if s.error_prone_dim() != dx {
            return Err(Error::DimensionMismatch { expected: dx, found: s.error_prone_dim() });
        }
        if s.error_free().len() != dz {
            return Err(Error::DimensionMismatch { expected: dz, found: s.error_free().len() });
        }
    }

    let ks: Vec<f64> = stages.iter().map(|s| s.replicate_count() as f64).collect();
    let means: Vec<Vec<f64>> = stages.iter().map(|s| s.replicate_mean()).collect();
    let sum_k: f64 = ks.iter().sum();
    let sum_k2: f64 = ks.iter().map(|k| k * k).sum();

    let mut mu_w = alloc::vec![0.0; dx];
    for (k, m) in ks.iter().zip(&means) {
        mu_w.iter_mut().zip(m).for_each(|(acc, w)| *acc += k * w);
    }
    mu_w.iter_mut().for_each(|v| *v /= sum_k);
    let mut mu_z = alloc::vec![0.0; dz];
    for s in stages {
        mu_z.iter_mut().zip(s.error_free()).for_each(|(acc, z)| *acc += z);
    }
    mu_z.iter_mut().for_each(|v| *v /= n as f64);

    let within_df: f64 = ks.iter().map(|k| k - 1.0).sum();
    if within_df < 1.0 {
        return Err(Error::InsufficientReplication);
    }
    let mut sigma_ee = Matrix::zeros(dx, dx);
    let mut dev = alloc::vec![0.0; dx];
    for s in stages {
        // deviations are taken from the first present replicate before
        // centring, so identical replicates contribute exactly zero
        let present: Vec<usize> = (0..s.replicate_columns()).filter(|&l| s.surrogates()[0][l].is_some()).collect();
        let anchor: Vec<f64> = (0..dx).map(|c| s.surrogates()[c][present[0]].unwrap_or_default()).collect();
        let shift: Vec<f64> = (0..dx)
            .map(|c| present.iter().map(|&l| s.surrogates()[c][l].unwrap_or_default() - anchor[c]).sum::<f64>() / present.len() as f64)
            .collect();
        for &l in &present {
            for c in 0..dx {
                dev[c] = (s.surrogates()[c][l].unwrap_or_default() - anchor[c]) - shift[c];
            }
            sigma_ee.add_outer(1.0, &dev, &dev);
        }
    }
    sigma_ee.scale(1.0 / within_df);

    let nu = sum_k - sum_k2 / sum_k;
    let mut sigma_xx = Matrix::zeros(dx, dx);
    let mut sigma_xz = Matrix::zeros(dx, dz);
    let mut sigma_zz = Matrix::zeros(dz, dz);
    let mut dz_dev = alloc::vec![0.0; dz];
    for ((s, m), k) in stages.iter().zip(&means).zip(&ks) {
        for c in 0..dx {
            dev[c] = m[c] - mu_w[c];
        }
        for (d, (z, mz)) in dz_dev.iter_mut().zip(s.error_free().iter().zip(&mu_z)) {
            *d = z - mz;
        }
        sigma_xx.add_outer(*k, &dev, &dev);
        sigma_xz.add_outer(*k, &dev, &dz_dev);
        sigma_zz.add_outer(1.0, &dz_dev, &dz_dev);
    }
    for i in 0..dx {
        for j in 0..dx {
            sigma_xx[(i, j)] = (sigma_xx[(i, j)] - (n - 1) as f64 * sigma_ee[(i, j)]) / nu;
        }
    }
    sigma_xz.scale(1.0 / nu);
    sigma_zz.scale(1.0 / (n - 1) as f64);

    let sigma_xx_indefinite = sigma_xx.symmetric_eigenvalues().iter().any(|&ev| ev < 0.0);
    if sigma_xx_indefinite {
        log::warn!("estimated covariance of the error-prone covariates is not positive semidefinite");
    }
    Ok(CalibrationModel { mu_w, mu_z, sigma_xx, sigma_xz, sigma_zz, sigma_ee, nu, n, sigma_xx_indefinite })
}

/// `X̂_ij` for one stage observation under a fitted model.
pub fn calibrate(model: &CalibrationModel, obs: &StageObservation) -> Result<Vec<f64>> {
    model.check_dims(obs)?;
    let gain = model.gain(obs.replicate_count())?;
    model.apply_gain(&gain, obs)
}

/// A fitted model with its gain matrices cached per replicate count.
/// Equality and serialization ignore the cache.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "CalibrationModel", into = "CalibrationModel")]
pub struct Calibrator {
    model: CalibrationModel,
    gains: Vec<(usize, Matrix)>,
}

impl Calibrator {
    /// Precomputes gains for every replicate count in `ks`; a singular block
    /// matrix at any of them is an error.
    pub fn new(model: CalibrationModel, ks: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut gains: Vec<(usize, Matrix)> = Vec::new();
        for k in ks {
            if !gains.iter().any(|(seen, _)| *seen == k) {
                gains.push((k, model.gain(k)?));
            }
        }
        Ok(Calibrator { model, gains })
    }

    pub fn model(&self) -> &CalibrationModel {
        &self.model
    }

    pub fn calibrate(&self, obs: &StageObservation) -> Result<Vec<f64>> {
        self.model.check_dims(obs)?;
        let k = obs.replicate_count();
        match self.gains.iter().find(|(seen, _)| *seen == k) {
            Some((_, g)) => self.model.apply_gain(g, obs),
            None => self.model.apply_gain(&self.model.gain(k)?, obs),
        }
    }
}

impl PartialEq for Calibrator {
    fn eq(&self, other: &Self) -> bool {
        self.model == other.model
    }
}

impl From<CalibrationModel> for Calibrator {
    fn from(model: CalibrationModel) -> Self {
        Calibrator { model, gains: Vec::new() }
    }
}

impl From<Calibrator> for CalibrationModel {
    fn from(c: Calibrator) -> Self {
        c.model
    }
}

/// Per-stage calibration. The stage-1 model is fit on every patient and
/// also calibrates the stage-1 part of stage-2 histories; the stage-2 model
/// is fit on the patients who reached stage 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCalibrations {
    pub stage1: Calibrator,
    pub stage2: Option<Calibrator>,
}

impl StageCalibrations {
    pub fn fit(records: &[&PatientRecord], two_stage: bool) -> Result<Self> {
        let stage1 = fit_calibrator(records, 1)?;
        let stage2 = if two_stage { Some(fit_calibrator(records, 2)?) } else { None };
        Ok(StageCalibrations { stage1, stage2 })
    }

    pub fn for_stage(&self, stage: usize) -> Result<&Calibrator> {
        match stage {
            1 => Ok(&self.stage1),
            2 => self.stage2.as_ref().ok_or(Error::StageAbsent(2)),
            other => Err(Error::StageAbsent(other)),
        }
    }
}

fn fit_calibrator(records: &[&PatientRecord], stage: usize) -> Result<Calibrator> {
    let obs: Vec<&StageObservation> = records.iter().filter_map(|r| r.stage(stage).ok()).collect();
    let model = estimate_moments(&obs)?;
    Calibrator::new(model, obs.iter().map(|o| o.replicate_count()))
}

/// Fit the stage's model on the patients present at `stage` and calibrate
/// each of them with their own replicate count. Absent patients get `None`.
pub fn calibrate_stage(records: &[PatientRecord], stage: usize) -> Result<(CalibrationModel, Vec<Option<Vec<f64>>>)> {
    let refs: Vec<&PatientRecord> = records.iter().collect();
    let cal = fit_calibrator(&refs, stage)?;
    let estimates = records
        .iter()
        .map(|r| r.stage(stage).ok().map(|o| cal.calibrate(o)).transpose())
        .collect::<Result<Vec<_>>>()?;
    Ok((cal.model, estimates))
}
