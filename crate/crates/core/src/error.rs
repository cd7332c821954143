use std::fmt;

use thiserror::Error;

/// Where a single-arm (all treated or all control) condition was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmScope {
    /// The whole training sample handed to a learner.
    Sample,
    /// The training complement of cross-fitting fold `k` (0-based).
    Fold(usize),
    /// Group `g` (1-based label).
    Group(usize),
}

impl fmt::Display for ArmScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArmScope::Sample => write!(f, "training sample"),
            ArmScope::Fold(k) => write!(f, "training complement of fold {k}"),
            ArmScope::Group(g) => write!(f, "group {g}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("treatment is not binary at row {row} (value {value})")]
    NonBinaryTreatment { row: usize, value: f64 },
    #[error("group {0} has no members")]
    EmptyGroup(usize),
    #[error("group label {label} at row {row} is outside 1..={groups}")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        groups: usize,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("known propensity at row {row} is outside (0, 1)")]
    PropensityOutOfRange { row: usize },
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("singular design matrix (rank deficient with no regularization)")]
    SingularDesign,
    #[error("only one treatment arm present in {0}")]
    OneArmOnly(ArmScope),
    #[error("gram matrix of transformed regressors is singular")]
    SingularGram,
    #[error("matrix is not symmetric positive definite")]
    NotSpd,
    #[error("group {0} has a degenerate treatment-residual denominator")]
    DegenerateGroup(usize),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contrast row {0} has zero variance")]
    ZeroVarianceContrast(usize),
    #[error("group {group} has {size} members, fewer than the minimum {min}")]
    GroupTooSmall { group: usize, size: usize, min: usize },
    #[error("clustering degenerate: {0}")]
    ClusteringDegenerate(String),
    #[error("no observations in treatment arm {0}")]
    EmptyArm(u8),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input data error: {0}")]
    Input(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the statistical quality gates on a fitted grouping.
    pub fn is_gate_failure(&self) -> bool {
        matches!(
            self,
            Error::GroupTooSmall { .. } | Error::OneArmOnly(ArmScope::Group(_))
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
