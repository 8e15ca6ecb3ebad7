use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ensemble size exceeds dimension ({count} > {dim})")]
    EnsembleTooLarge { count: usize, dim: usize },

    #[error("empty input")]
    Empty,

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("norm bound violated: |x| = {norm} > C = {bound}")]
    NormBound { norm: f64, bound: f64 },

    #[error("zero vector: angle undefined")]
    ZeroVector,

    #[error("feature overflow")]
    FeatureOverflow,

    #[error("degenerate branch weights at tree node {node}")]
    DegenerateBranch { node: usize },

    #[error("zero normalizer")]
    ZeroNormalizer,

    #[error("objective returned a non-finite value for perturbation {index}")]
    NonFiniteObjective { index: usize },

    #[error("step called on a finished episode")]
    EpisodeDone,

    #[error("degenerate sample")]
    DegenerateSample,

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("worker failure at iteration {iteration}, worker {worker}: {source}")]
    Worker {
        iteration: usize,
        worker: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by user-supplied configuration rather than a runtime failure.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
