//! Replication and resample loops on a worker pool.
//!
//! Every job derives its randomness from its own index, and results are
//! collected in index order, so output does not depend on the pool size.

use rayon::prelude::*;
use rcql_core::data::{PatientRecord, SourceKind};
use rcql_core::inference::{BootstrapOptions, BootstrapPlan, BootstrapSummary};
use rcql_core::qlearning::QSpecs;
use rcql_core::simlab::{
    estimation_replication, prediction_replication, summarize_estimation, summarize_prediction, DgpConfig,
    ExperimentReport,
};

use crate::error::{CliError, Result};

pub struct Workers {
    pool: rayon::ThreadPool,
}

impl Workers {
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Err(CliError::Usage("parallelism must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
        Ok(Workers { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// `job(0..count)` in parallel, results in index order.
    pub fn map<T: Send>(&self, count: usize, job: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        self.pool.install(|| (0..count).into_par_iter().map(job).collect())
    }

    pub fn estimation(
        &self,
        cfg: &DgpConfig,
        estimators: &[SourceKind],
        reps: usize,
        bootstrap: usize,
    ) -> Result<ExperimentReport> {
        check(cfg, reps)?;
        if estimators.is_empty() {
            return Err(CliError::Usage("no estimators requested".into()));
        }
        let outcomes = self.map(reps, |i| estimation_replication(cfg, estimators, bootstrap, i));
        Ok(summarize_estimation(cfg, estimators, bootstrap, &outcomes)?)
    }

    pub fn prediction(&self, cfg: &DgpConfig, n_test: usize, reps: usize) -> Result<ExperimentReport> {
        check(cfg, reps)?;
        let outcomes = self.map(reps, |i| prediction_replication(cfg, n_test, i));
        Ok(summarize_prediction(cfg, n_test, &outcomes)?)
    }

    pub fn bootstrap(
        &self,
        records: &[PatientRecord],
        specs: &QSpecs,
        source: SourceKind,
        opts: BootstrapOptions,
    ) -> rcql_core::Result<BootstrapSummary> {
        let plan = BootstrapPlan::new(records, specs, source, opts)?;
        let outcomes = self.map(opts.resamples, |i| plan.resample(i));
        plan.finish(outcomes)
    }
}

fn check(cfg: &DgpConfig, reps: usize) -> Result<()> {
    if reps == 0 {
        return Err(CliError::Usage("replications must be at least 1".into()));
    }
    cfg.validate()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rcql_core::inference::bootstrap_with;
    use rcql_core::simlab::{run_estimation_experiment, simulate};

    #[test]
    fn pool_size_does_not_change_results() {
        let cfg = DgpConfig::one_stage(150, 0.7, 9);
        let est = [SourceKind::SingleSurrogate, SourceKind::Calibrated];
        let one = Workers::new(1).unwrap().estimation(&cfg, &est, 6, 10).unwrap();
        let four = Workers::new(4).unwrap().estimation(&cfg, &est, 6, 10).unwrap();
        assert_eq!(one, four);
        assert_eq!(one, run_estimation_experiment(&cfg, &est, 6, 10).unwrap());
    }

    #[test]
    fn parallel_bootstrap_matches_sequential() {
        let cfg = DgpConfig::one_stage(120, 0.5, 4);
        let data = simulate(&cfg, 1).unwrap();
        let specs = cfg.working_specs();
        let opts = BootstrapOptions::new(25, 77);
        let par = Workers::new(3).unwrap().bootstrap(&data, &specs, SourceKind::Calibrated, opts).unwrap();
        let seq = bootstrap_with(&data, &specs, SourceKind::Calibrated, opts).unwrap();
        assert_eq!(par, seq);
    }

    #[test]
    fn zero_replications_is_a_usage_error() {
        let cfg = DgpConfig::one_stage(100, 0.5, 1);
        let err = Workers::new(1).unwrap().estimation(&cfg, &[SourceKind::True], 0, 0).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
