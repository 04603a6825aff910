use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {dim} mismatch (expected {expected}, got {got})")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },

    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this graph")]
    BackwardTwice,

    #[error("genotype: {0}")]
    Genotype(String),

    #[error("non-finite loss {loss} at step {step}; gammas = {gammas:?}")]
    NonFiniteLoss {
        step: usize,
        loss: f64,
        gammas: Vec<f64>,
    },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("search: {0}")]
    Search(String),

    #[error("{phase}: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by numerics rather than input or IO.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFiniteLoss { .. } | Error::Diverged(_) => true,
            Error::Phase { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Phase { source, .. } => source.is_config(),
            _ => false,
        }
    }

    pub fn in_phase(self, phase: &'static str) -> Error {
        Error::Phase {
            phase,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
