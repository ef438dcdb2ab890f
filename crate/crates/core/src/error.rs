use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("variable index out of range: x{index} used with state dimension {dim}")]
    VarOutOfRange { index: usize, dim: usize },

    #[error("missing replacement for variable x{index} ({available} replacements given)")]
    MissingReplacement { index: usize, available: usize },

    #[error("expression parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient samples for rank condition: T = {samples} < N = {terms}")]
    InsufficientSamples { samples: usize, terms: usize },

    #[error("persistency of excitation violated: σ_min = {sigma_min:e} (σ_max = {sigma_max:e})")]
    PersistencyOfExcitation { sigma_min: f64, sigma_max: f64 },

    #[error("right inverse residual {residual:e} exceeds tolerance")]
    RightInverseResidual { residual: f64 },

    #[error("region mask empty; increase quota sampling ({region} region)")]
    EmptyRegionMask { region: &'static str },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
