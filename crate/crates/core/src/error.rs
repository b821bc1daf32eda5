use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected} components, got {actual}")]
    InputShape { expected: usize, actual: usize },

    #[error("class index {index} out of range for {classes} classes")]
    ClassIndex { index: usize, classes: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("unsupported architecture: {0}")]
    UnsupportedArchitecture(String),

    #[error("training diverged at iteration {iteration}: loss is not finite")]
    TrainingDiverged { iteration: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate planted weights: all components are zero")]
    DegenerateWeights,

    #[error("missing baseline vector for method `{method}`")]
    MissingBaseline { method: String },

    #[error("method `{method}` needs at least {required} samples, got {actual}")]
    InsufficientSamples {
        method: String,
        required: usize,
        actual: usize,
    },

    #[error("singular weighted design matrix; set ridge > 0")]
    SingularSystem,

    #[error("exact coalition enumeration limited to {limit} features, got {actual}")]
    CombinatorialLimit { limit: usize, actual: usize },

    #[error("attribution length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("transform for `{expected}` applied to explanation from `{actual}`")]
    TransformMismatch { expected: String, actual: String },

    #[error("incompatible explanatory goals: {0}")]
    IncompatibleGoals(String),

    #[error("{criterion}: insufficient sample ({actual} qualifying, {required} required)")]
    InsufficientSample {
        criterion: String,
        required: usize,
        actual: usize,
    },

    #[error("conditional probability undefined: no qualifying events")]
    UndefinedConditional,

    #[error("{criterion}: needs at least {required} models, got {actual}")]
    InsufficientModels {
        criterion: String,
        required: usize,
        actual: usize,
    },

    #[error("empty probe set")]
    EmptyProbe,

    #[error("dataset has no ground-truth attribution")]
    MissingGroundTruth,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
