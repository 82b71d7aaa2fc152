use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("linear program did not converge: {reason}")]
    Lp {
        reason: String,
        /// Best feasible point found before giving up, if any.
        best: Option<Vec<f64>>,
    },

    #[error("sparsity {s} is not admissible; the coherence bound allows at most {s_max}")]
    Inadmissible { s: usize, s_max: usize },

    #[error("training diverged at step {step} (layer {layer}, stage {stage})")]
    Diverged {
        step: usize,
        layer: usize,
        stage: usize,
    },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
