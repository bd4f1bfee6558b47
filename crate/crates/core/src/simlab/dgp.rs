use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{PatientRecord, StageObservation};
use crate::qlearning::QSpecs;
use crate::rng::stream_rng;
use crate::{Error, Result};

/// How the error-prone covariate enters the treatment-free part of the
/// outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentFree {
    #[default]
    Linear,
    /// `x + x³`
    Cubic,
    /// `x + eˣ`
    Exponential,
    /// `x + sin(x²) + cos(x²)`
    Complex,
}

impl TreatmentFree {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            TreatmentFree::Linear => x,
            TreatmentFree::Cubic => x + x * x * x,
            TreatmentFree::Exponential => x + libm::exp(x),
            TreatmentFree::Complex => x + libm::sin(x * x) + libm::cos(x * x),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TreatmentFree::Linear => "linear",
            TreatmentFree::Cubic => "cubic",
            TreatmentFree::Exponential => "exponential",
            TreatmentFree::Complex => "complex",
        }
    }
}

impl fmt::Display for TreatmentFree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TreatmentFree {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(TreatmentFree::Linear),
            "cubic" => Ok(TreatmentFree::Cubic),
            "exponential" | "exp" => Ok(TreatmentFree::Exponential),
            "complex" => Ok(TreatmentFree::Complex),
            other => Err(Error::InvalidConfig(format!("unknown treatment-free variant `{other}`"))),
        }
    }
}

/// A simulation design.
///
/// Per-stage vectors list the later stage first, the order of the result
/// tables: `sigma = (σ₂, σ₁)`, `true_psi = (ψ₂₀, ψ₂₁, ψ₁₀, ψ₁₁)` and
/// `true_beta = (β₂₀, β₂z, β₂x, β₁₀, β₁z, β₁x)`, where `β_jz` multiplies `Z_j`
/// and `β_jx` multiplies `f(X_j)`. A one-stage design has only the stage-1
/// entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub stages: usize,
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub treatment_free: TreatmentFree,
    pub replicates: usize,
    pub missing_rate_third_replicate: f64,
    pub true_beta: Vec<f64>,
    pub true_psi: Vec<f64>,
    /// Master seed; replication `r` uses stream `r` of it.
    pub seed: u64,
    /// Mean of `X_j`, `Z_j` (both unit variance).
    #[serde(default = "default_x_mean")]
    pub x_mean: f64,
    #[serde(default = "default_z_mean")]
    pub z_mean: f64,
}

fn default_x_mean() -> f64 {
    1.0
}

fn default_z_mean() -> f64 {
    1.0
}

impl DgpConfig {
    /// `X, Z ~ N(1, 1)`, two replicates, `Y = 0.5 + 0.5Z + X + (0.5 + X)A + ε`.
    pub fn one_stage(n: usize, sigma: f64, seed: u64) -> Self {
        DgpConfig {
            n,
            stages: 1,
            sigma: vec![sigma],
            treatment_free: TreatmentFree::Linear,
            replicates: 2,
            missing_rate_third_replicate: 0.0,
            true_beta: vec![0.5, 0.5, 1.0],
            true_psi: vec![0.5, 1.0],
            seed,
            x_mean: 1.0,
            z_mean: 1.0,
        }
    }

    /// `X_j ~ N(1, 1)`, `Z_j ~ N(0.5, 1)`, three replicates with the third
    /// missing 80% of the time, and
    /// `Y = Σ_j f(X_j) + Z_j + (0.5 − X_j)A_j + ε`.
    pub fn two_stage(n: usize, sigma2: f64, sigma1: f64, treatment_free: TreatmentFree, seed: u64) -> Self {
        DgpConfig {
            n,
            stages: 2,
            sigma: vec![sigma2, sigma1],
            treatment_free,
            replicates: 3,
            missing_rate_third_replicate: 0.8,
            true_beta: vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0],
            true_psi: vec![0.5, -1.0, 0.5, -1.0],
            seed,
            x_mean: 1.0,
            z_mean: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.n < 1 {
            return bad("n must be at least 1");
        }
        if !(1..=2).contains(&self.stages) {
            return bad("stages must be 1 or 2");
        }
        if self.sigma.len() != self.stages || self.sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("sigma needs one finite non-negative value per stage");
        }
        if self.replicates < 1 {
            return bad("at least one replicate is required");
        }
        if !(0.0..=1.0).contains(&self.missing_rate_third_replicate) {
            return bad("missing_rate_third_replicate must lie in [0, 1]");
        }
        if self.true_beta.len() != 3 * self.stages || self.true_psi.len() != 2 * self.stages {
            return bad("true_beta needs 3 and true_psi 2 values per stage");
        }
        if !(self.x_mean.is_finite() && self.z_mean.is_finite()) {
            return bad("covariate means must be finite");
        }
        Ok(())
    }

    fn stage_offset(&self, stage: usize) -> usize {
        self.stages - stage
    }

    /// Error SD at `stage` (1-based).
    pub fn sigma_at(&self, stage: usize) -> f64 {
        self.sigma[self.stage_offset(stage)]
    }

    /// `(ψ_j0, ψ_j1)`.
    pub fn psi_at(&self, stage: usize) -> (f64, f64) {
        let o = 2 * self.stage_offset(stage);
        (self.true_psi[o], self.true_psi[o + 1])
    }

    /// `(β_j0, β_jz, β_jx)`.
    pub fn beta_at(&self, stage: usize) -> (f64, f64, f64) {
        let o = 3 * self.stage_offset(stage);
        (self.true_beta[o], self.true_beta[o + 1], self.true_beta[o + 2])
    }

    /// Labels of the blip parameters in `true_psi` order.
    pub fn psi_labels(&self) -> Vec<&'static str> {
        if self.stages == 2 { vec!["psi20", "psi21", "psi10", "psi11"] } else { vec!["psi10", "psi11"] }
    }

    /// Main-effect working models with one error-prone and one error-free
    /// covariate per stage.
    pub fn working_specs(&self) -> QSpecs {
        QSpecs::main_effects(self.stages, 1, 1)
    }

    /// `1{ψ_j0 + ψ_j1·x > 0}`.
    pub fn optimal_action(&self, stage: usize, x: f64) -> bool {
        let (p0, p1) = self.psi_at(stage);
        p0 + p1 * x > 0.0
    }

    /// `E[Y | X, Z, A]` for one patient at the given actions.
    pub fn mean_outcome(&self, stages: &[StageObservation], actions: &[bool]) -> Result<f64> {
        if stages.len() != self.stages || actions.len() != self.stages {
            return Err(Error::DimensionMismatch { expected: self.stages, found: actions.len() });
        }
        let mut y = 0.0;
        for (j, (obs, &a)) in stages.iter().zip(actions).enumerate() {
            let x = obs.true_covariate().ok_or(Error::MissingSource("true"))?[0];
            let z = obs.error_free()[0];
            y += self.stage_mean(j + 1, x, z, a);
        }
        Ok(y)
    }

    fn stage_mean(&self, stage: usize, x: f64, z: f64, a: bool) -> f64 {
        let (b0, bz, bx) = self.beta_at(stage);
        let (p0, p1) = self.psi_at(stage);
        b0 + bz * z + bx * self.treatment_free.apply(x) + if a { p0 + p1 * x } else { 0.0 }
    }
}

/// Draw `n` patients from the design using `rng`.
pub(crate) fn draw_records(cfg: &DgpConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<PatientRecord>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(n);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    for i in 0..n {
        let mut stages = Vec::with_capacity(cfg.stages);
        let mut y = 0.0;
        for stage in 1..=cfg.stages {
            let x = cfg.x_mean + normal(rng);
            let z = cfg.z_mean + normal(rng);
            let sigma = cfg.sigma_at(stage);
            let mut reps: Vec<Option<f64>> = (0..cfg.replicates).map(|_| Some(x + sigma * normal(rng))).collect();
            if cfg.replicates >= 3 {
                let keep = rng.random::<f64>() >= cfg.missing_rate_third_replicate;
                if !keep {
                    reps[2] = None;
                }
            }
            let a = rng.random_bool(0.5);
            y += cfg.stage_mean(stage, x, z, a);
            stages.push(StageObservation::new(vec![z], vec![reps], Some(vec![x]), a)?);
        }
        y += normal(rng);
        out.push(PatientRecord::simple(i as u64, stages, y)?);
    }
    Ok(out)
}

/// The training sample for seed `seed` (stream 0 of it).
pub fn simulate(cfg: &DgpConfig, seed: u64) -> Result<Vec<PatientRecord>> {
    draw_records(cfg, cfg.n, &mut stream_rng(seed, 0))
}

pub fn simulate_one_stage(cfg: &DgpConfig, seed: u64) -> Result<Vec<PatientRecord>> {
    if cfg.stages != 1 {
        return Err(Error::InvalidConfig("simulate_one_stage needs stages = 1".into()));
    }
    simulate(cfg, seed)
}

pub fn simulate_two_stage(cfg: &DgpConfig, seed: u64) -> Result<Vec<PatientRecord>> {
    if cfg.stages != 2 {
        return Err(Error::InvalidConfig("simulate_two_stage needs stages = 2".into()));
    }
    simulate(cfg, seed)
}

/// `E[max(c − X, 0)]` for `X ~ N(μ, s²)`.
pub fn normal_partial_expectation(c: f64, mu: f64, s: f64) -> f64 {
    let t = (c - mu) / s;
    let phi = libm::exp(-0.5 * t * t) / libm::sqrt(2.0 * core::f64::consts::PI);
    let cdf = 0.5 * libm::erfc(-t / core::f64::consts::SQRT_2);
    (c - mu) * cdf + s * phi
}

/// Closed-form value of the true optimal regime under a linear two-stage
/// design with `X_j ~ N(x_mean, 1)`.
pub fn optimal_value_linear(cfg: &DgpConfig) -> f64 {
    (1..=cfg.stages)
        .map(|stage| {
            let (b0, bz, bx) = cfg.beta_at(stage);
            let (p0, p1) = cfg.psi_at(stage);
            // E[max(p0 + p1 X, 0)] = |p1| E[max(c ∓ X, 0)]
            let blip = if p1 == 0.0 {
                p0.max(0.0)
            } else if p1 < 0.0 {
                -p1 * normal_partial_expectation(p0 / -p1, cfg.x_mean, 1.0)
            } else {
                p1 * normal_partial_expectation(-p0 / p1, -cfg.x_mean, 1.0)
            };
            b0 + bz * cfg.z_mean + bx * cfg.x_mean + blip
        })
        .sum()
}
