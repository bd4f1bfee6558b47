//! Nonparametric bootstrap over whole patient trajectories.
//!
//! Every resample reruns the complete pipeline, calibration included. Resample
//! `i` draws from stream `i` of the bootstrap seed, so resamples can be
//! evaluated in any order or in parallel and still give the same summary.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{PatientRecord, SourceKind};
use crate::qlearning::{fit_qlearning, fit_qlearning_refs, QSpecs, QlearnResult};
use crate::rng::stream_rng;
use crate::{Error, Result};

pub const NORMAL_QUANTILE_975: f64 = 1.96;

/// Largest tolerated fraction of failed resamples.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// `point ± 1.96·se`.
    #[default]
    Normal,
    /// Empirical 2.5% and 97.5% quantiles of the resample estimates.
    Percentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub seed: u64,
    #[serde(default)]
    pub ci: CiMethod,
}

impl BootstrapOptions {
    pub fn new(resamples: usize, seed: u64) -> Self {
        BootstrapOptions { resamples, seed, ci: CiMethod::Normal }
    }

    /// Failures beyond this count abort the bootstrap.
    pub fn failure_budget(&self) -> usize {
        libm::floor(MAX_FAILURE_RATE * self.resamples as f64) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub names: Vec<String>,
    pub point: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub b: usize,
    /// Resamples that failed to fit and were redrawn.
    pub failures: usize,
    pub ci: CiMethod,
}

impl BootstrapSummary {
    /// The summary restricted to the given coordinates.
    pub fn select(&self, idx: &[usize]) -> BootstrapSummary {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        BootstrapSummary {
            names: idx.iter().map(|&i| self.names[i].clone()).collect(),
            point: pick(&self.point),
            se: pick(&self.se),
            ci_lower: pick(&self.ci_lower),
            ci_upper: pick(&self.ci_upper),
            b: self.b,
            failures: self.failures,
            ci: self.ci,
        }
    }

    pub fn covers(&self, i: usize, value: f64) -> bool {
        self.ci_lower[i] <= value && value <= self.ci_upper[i]
    }
}

/// The outcome of one resample slot after any redraws.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampleOutcome {
    pub estimate: Option<Vec<f64>>,
    pub failures: usize,
    pub last_error: Option<Error>,
}

/// A bootstrap over fixed data: the full-data fit plus everything needed to
/// evaluate resample slots independently.
pub struct BootstrapPlan<'a> {
    records: &'a [PatientRecord],
    specs: &'a QSpecs,
    source: SourceKind,
    opts: BootstrapOptions,
    point: QlearnResult,
}

impl<'a> BootstrapPlan<'a> {
    pub fn new(records: &'a [PatientRecord], specs: &'a QSpecs, source: SourceKind, opts: BootstrapOptions) -> Result<Self> {
        if opts.resamples < 2 {
            return Err(Error::InvalidConfig(format!("bootstrap needs at least 2 resamples, got {}", opts.resamples)));
        }
        let point = fit_qlearning(records, specs, source)?;
        Ok(BootstrapPlan { records, specs, source, opts, point })
    }

    pub fn point(&self) -> &QlearnResult {
        &self.point
    }

    pub fn into_point(self) -> QlearnResult {
        self.point
    }

    pub fn options(&self) -> &BootstrapOptions {
        &self.opts
    }

    /// Evaluate slot `index`. A failed fit is redrawn from the same stream
    /// until it succeeds or the failure budget is exhausted.
    pub fn resample(&self, index: usize) -> ResampleOutcome {
        let n = self.records.len();
        let mut rng = stream_rng(self.opts.seed, index as u64);
        let mut failures = 0;
        let mut last_error = None;
        let mut picked: Vec<&PatientRecord> = Vec::with_capacity(n);
        while failures <= self.opts.failure_budget() {
            picked.clear();
            picked.extend((0..n).map(|_| &self.records[rng.random_range(0..n)]));
            match fit_qlearning_refs(&picked, self.specs, self.source) {
                Ok(fit) => return ResampleOutcome { estimate: Some(fit.parameters()), failures, last_error },
                Err(e) => {
                    log::debug!("bootstrap resample {index} failed: {e}");
                    failures += 1;
                    last_error = Some(e);
                }
            }
        }
        ResampleOutcome { estimate: None, failures, last_error }
    }

    /// Aggregate slot outcomes given in slot order.
    pub fn finish(self, outcomes: Vec<ResampleOutcome>) -> Result<BootstrapSummary> {
        let b = self.opts.resamples;
        if outcomes.len() != b {
            return Err(Error::DimensionMismatch { expected: b, found: outcomes.len() });
        }
        let failures: usize = outcomes.iter().map(|o| o.failures).sum();
        if failures > self.opts.failure_budget() || outcomes.iter().any(|o| o.estimate.is_none()) {
            return Err(Error::ResampleFitFailure { failed: failures, requested: b });
        }
        if failures > 0 {
            log::info!("{failures} bootstrap resamples redrawn after fit failures");
        }
        let draws: Vec<Vec<f64>> = outcomes.into_iter().filter_map(|o| o.estimate).collect();
        let point = self.point.parameters();
        let names = self.point.parameter_names();
        Ok(summarize(names, point, &draws, failures, self.opts.ci))
    }
}

/// Build a summary from resample estimates (one vector per resample).
pub fn summarize(names: Vec<String>, point: Vec<f64>, draws: &[Vec<f64>], failures: usize, ci: CiMethod) -> BootstrapSummary {
    let b = draws.len();
    let p = point.len();
    let mut se = Vec::with_capacity(p);
    let mut ci_lower = Vec::with_capacity(p);
    let mut ci_upper = Vec::with_capacity(p);
    let mut column = Vec::with_capacity(b);
    for j in 0..p {
        column.clear();
        column.extend(draws.iter().map(|d| d[j]));
        let s = sample_sd(&column);
        se.push(s);
        match ci {
            CiMethod::Normal => {
                ci_lower.push(point[j] - NORMAL_QUANTILE_975 * s);
                ci_upper.push(point[j] + NORMAL_QUANTILE_975 * s);
            }
            CiMethod::Percentile => {
                column.sort_by(f64::total_cmp);
                ci_lower.push(quantile_sorted(&column, 0.025));
                ci_upper.push(quantile_sorted(&column, 0.975));
            }
        }
    }
    BootstrapSummary { names, point, se, ci_lower, ci_upper, b, failures, ci }
}

/// Standard deviation with divisor `n − 1`; zero for fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    libm::sqrt(ss / (n - 1) as f64)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q * (n - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Sequential bootstrap with normal-approximation intervals.
pub fn bootstrap(records: &[PatientRecord], specs: &QSpecs, source: SourceKind, b: usize, seed: u64) -> Result<BootstrapSummary> {
    bootstrap_with(records, specs, source, BootstrapOptions::new(b, seed))
}

pub fn bootstrap_with(
    records: &[PatientRecord],
    specs: &QSpecs,
    source: SourceKind,
    opts: BootstrapOptions,
) -> Result<BootstrapSummary> {
    let plan = BootstrapPlan::new(records, specs, source, opts)?;
    let outcomes = (0..opts.resamples).map(|i| plan.resample(i)).collect();
    plan.finish(outcomes)
}

/// Per-coordinate fraction of summaries whose interval contains the truth.
pub fn coverage(truth: &[f64], summaries: &[BootstrapSummary]) -> Result<Vec<f64>> {
    if summaries.is_empty() {
        return Err(Error::DimensionMismatch { expected: 1, found: 0 });
    }
    let mut hits = alloc::vec![0usize; truth.len()];
    for s in summaries {
        if s.ci_lower.len() != truth.len() || s.ci_upper.len() != truth.len() {
            return Err(Error::DimensionMismatch { expected: truth.len(), found: s.ci_lower.len() });
        }
        for (j, &t) in truth.iter().enumerate() {
            if s.covers(j, t) {
                hits[j] += 1;
            }
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / summaries.len() as f64).collect())
}
