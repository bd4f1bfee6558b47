use alloc::string::String;

/// Every failure the estimation pipeline can report.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("covariate source `{0}` is not available for this record")]
    MissingSource(&'static str),
    #[error("stage {0} is absent")]
    StageAbsent(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("design matrix is rank deficient (column {column})")]
    RankDeficient { column: usize },
    #[error("every patient has a single replicate; measurement error variance is not identifiable")]
    InsufficientReplication,
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("calibration block matrix is singular for k = {k}")]
    SingularBlockMatrix { k: usize },
    #[error("stage {stage} has {present} patients but needs at least {required}")]
    InsufficientStageSample { stage: usize, present: usize, required: usize },
    #[error("{failed} of {requested} bootstrap resamples failed to fit")]
    ResampleFitFailure { failed: usize, requested: usize },
    #[error("patient {id}: non-remitter without a stage-2 outcome")]
    MissingY2 { id: u64 },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// A stable snake-case name for the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingSource(_) => "missing_source",
            Error::StageAbsent(_) => "stage_absent",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::InsufficientReplication => "insufficient_replication",
            Error::DegenerateSample(_) => "degenerate_sample",
            Error::SingularBlockMatrix { .. } => "singular_block_matrix",
            Error::InsufficientStageSample { .. } => "insufficient_stage_sample",
            Error::ResampleFitFailure { .. } => "resample_fit_failure",
            Error::MissingY2 { .. } => "missing_y2",
            Error::InvalidRecord(_) => "invalid_record",
            Error::InvalidConfig(_) => "invalid_config",
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::InsufficientReplication
                | Error::DegenerateSample(_)
                | Error::SingularBlockMatrix { .. }
                | Error::InsufficientStageSample { .. }
                | Error::ResampleFitFailure { .. }
        )
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
