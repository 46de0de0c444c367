use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spin quantum number: {0}")]
    InvalidSpin(String),

    #[error("magnetic quantum number 2m = {two_m} not allowed for 2S = {two_s}")]
    MagneticNumberOutOfRange { two_s: u32, two_m: i32 },

    #[error("operator is not Hermitian (residual {0:.3e})")]
    NonHermitian(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("pulse slicing too coarse: phase per slice {phase:.3e} rad exceeds {limit} rad")]
    SliceResolution { phase: f64, limit: f64 },

    #[error("rf pulse has no tones")]
    EmptyTones,

    #[error("acquisition window {window:.6e} s is not an integer multiple of t_c = {cycle:.6e} s")]
    WindowNotCycleMultiple { window: f64, cycle: f64 },

    #[error("acquisition window {window:.6e} s shorter than one cycle {cycle:.6e} s")]
    WindowTooShort { window: f64, cycle: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("basis mismatch: {0} vs {1}")]
    BasisMismatch(String, String),

    #[error("state has zero deviation from the maximally mixed state")]
    ZeroDeviation,

    #[error("reference peak {index} vanishes; normalization undefined")]
    VanishingReference { index: usize },

    #[error("input must be diagonal (off-diagonal residual {0:.3e})")]
    NonDiagonal(f64),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("delta calibration failed: best fidelity {0:.6} below 0.9")]
    CalibrationFailed(f64),

    #[error("prep optimization failed: relative population spread {0:.3e} exceeds 1e-2")]
    OptimizationFailed(f64),

    #[error("phase cycle has no members")]
    EmptyPhaseCycle,

    #[error("internal consistency failure: {0}")]
    Internal(String),

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
