use thiserror::Error;

/// Every failure the library reports. The variant name doubles as the
/// stable error identifier printed by the command-line tool.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("negative mass {value} at bin {index}")]
    NegativeMass { index: usize, value: f64 },
    #[error("non-finite entry at bin {index}")]
    NaNEntry { index: usize },
    #[error("histogram flagged normalized but sums to {sum}")]
    NormalizationMismatch { sum: f64 },
    #[error("histogram has zero total mass")]
    ZeroTotalMass,
    #[error("histogram has {mass} entries but support has {support} labels")]
    LengthMismatch { mass: usize, support: usize },
    #[error("duplicate support label {0:?}")]
    DuplicateLabel(String),
    #[error("support points are missing")]
    MissingPoints,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("kernel row {row} underflows to zero")]
    UnderflowAllZeroRow { row: usize },
    #[error("adjacency is not symmetric at ({row}, {col})")]
    AsymmetricAdjacency { row: usize, col: usize },
    #[error("no posteriors given")]
    EmptyPosteriors,
    #[error("attribute table column {col} has no nonzero entry")]
    EmptyColumn { col: usize },
    #[error("models do not share one support")]
    SupportMismatch,
    #[error("score {value} at position {index} is not positive")]
    NonPositiveScore { index: usize, value: f64 },
    #[error("invalid ensemble weights: {0}")]
    InvalidWeights(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("scaling denominator underflowed for model {model}")]
    DivisionUnderflow { model: usize },
    #[error("barycenter exponent overflowed; epsilon is too small relative to the KL weight")]
    ExponentOverflow,
    #[error("model {model} is not normalized")]
    NotNormalizedInput { model: usize },
    #[error("coupling column {col} has zero mass")]
    ZeroColumn { col: usize },
    #[error("histogram is not normalized")]
    NotNormalized,
    #[error("result carries no couplings")]
    MissingCouplings,
    #[error("dataset is empty")]
    EmptyDataset,
}

impl Error {
    /// Stable identifier of the error case.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NegativeMass { .. } => "NegativeMass",
            Error::NaNEntry { .. } => "NaNEntry",
            Error::NormalizationMismatch { .. } => "NormalizationMismatch",
            Error::ZeroTotalMass => "ZeroTotalMass",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::DuplicateLabel(_) => "DuplicateLabel",
            Error::MissingPoints => "MissingPoints",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::UnderflowAllZeroRow { .. } => "UnderflowAllZeroRow",
            Error::AsymmetricAdjacency { .. } => "AsymmetricAdjacency",
            Error::EmptyPosteriors => "EmptyPosteriors",
            Error::EmptyColumn { .. } => "EmptyColumn",
            Error::SupportMismatch => "SupportMismatch",
            Error::NonPositiveScore { .. } => "NonPositiveScore",
            Error::InvalidWeights(_) => "InvalidWeights",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::DivisionUnderflow { .. } => "DivisionUnderflow",
            Error::ExponentOverflow => "ExponentOverflow",
            Error::NotNormalizedInput { .. } => "NotNormalizedInput",
            Error::ZeroColumn { .. } => "ZeroColumn",
            Error::NotNormalized => "NotNormalized",
            Error::MissingCouplings => "MissingCouplings",
            Error::EmptyDataset => "EmptyDataset",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
