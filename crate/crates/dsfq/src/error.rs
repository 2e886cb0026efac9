use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid circuit specification: {0}")]
    InvalidSpec(String),
    #[error("missing field `{field}` required by the {variant} variant")]
    MissingField {
        field: &'static str,
        variant: &'static str,
    },
    #[error("operator {0} is not defined for this circuit variant")]
    UnsupportedOperator(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not Hermitian (max |M - M^dag| = {0:e})")]
    NotHermitian(f64),
    #[error("eigensolver failed: {0}")]
    Eigensolver(String),
    #[error("gauge alignment failed: overlap {overlap:.3} for state {index} (level crossing or step too large)")]
    GaugeFailure { index: usize, overlap: f64 },
    #[error("degenerate qubit: omega_q = {0:e} GHz")]
    DegenerateQubit(f64),
    #[error("norm drift {0:e} exceeds tolerance")]
    NormDrift(f64),
    #[error("unitarity drift {0:e} exceeds tolerance")]
    UnitarityDrift(f64),
    #[error("leakage {0:.3e} exceeds the 5% gate threshold")]
    ExcessiveLeakage(f64),
    #[error("near-resonant denominator {0:e} GHz (exact resonance)")]
    Resonance(f64),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("fit rejected: residual {residual:.3e} exceeds {limit:.3e}")]
    FitResidual { residual: f64, limit: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
