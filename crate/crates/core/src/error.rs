use thiserror::Error;

/// Errors raised across estimation, banding and data ingestion.
///
/// Every message starts with the variant name so that command-line users can
/// grep for the failure class.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("EmptyInput: {0}")]
    EmptyInput(String),
    #[error("UnbalancedPanel: {0}")]
    UnbalancedPanel(String),
    #[error("NonNumericField: {0}")]
    NonNumericField(String),
    #[error("InvalidShape: {0}")]
    InvalidShape(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),

    #[error("NotADensity: kernel integrates to {0}")]
    NotADensity(f64),
    #[error("Asymmetric: first kernel moment is {0}")]
    Asymmetric(f64),
    #[error("NonPositiveBandwidth: {0}")]
    NonPositiveBandwidth(f64),

    #[error("EmptyWindow: no observation within the kernel window at z = {z}")]
    EmptyWindow { z: f64 },
    #[error("SingularLocalFit: {0}")]
    SingularLocalFit(String),
    #[error("SingularProjection: {0} is singular")]
    SingularProjection(String),
    #[error("NonPositiveVariance: conditional variance {value} at z = {z}")]
    NonPositiveVariance { z: f64, value: f64 },

    #[error("DomainError: {0}")]
    DomainError(String),
    #[error("BandwidthTooLarge: effective bandwidth {0} must lie in (0, 1)")]
    BandwidthTooLarge(f64),
    #[error("KernelCaseUnsupported: {0}")]
    KernelCaseUnsupported(String),

    #[error("DegenerateVariance: {0}")]
    DegenerateVariance(String),
    #[error("LengthMismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("EmptySample")]
    EmptySample,

    #[error("LeverageOne: 1 - l_kk vanishes at observation {0}")]
    LeverageOne(usize),
    #[error("AllCandidatesFailed: {0}")]
    AllCandidatesFailed(String),
    #[error("DegenerateCovariate: smoothing covariate has zero spread")]
    DegenerateCovariate,

    #[error("TooManyFailures: {failed} of {total} replicates failed")]
    TooManyFailures { failed: usize, total: usize },
    #[error("Io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
