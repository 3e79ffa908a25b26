use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular design matrix: {0}")]
    Singular(String),

    #[error("insufficient degrees of freedom: {rows} rows for {cols} coefficients")]
    DegreesOfFreedom { rows: usize, cols: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("infeasible orthogonality: {classes} classes do not fit in dimension {dimension}")]
    InfeasibleOrthogonality { classes: usize, dimension: usize },

    #[error("unbalanced membership mask: {0}")]
    Balance(String),

    #[error("number of models must be even and at least 4, got {0}")]
    Parity(usize),

    #[error("insufficient shadow statistics for example {example}: {detail}")]
    Statistics { example: usize, detail: String },

    #[error("invalid configuration: {0}")]
    Configuration(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("estimation error: sampler exhausted after {same_class} same-class and {other_class} other-class draws")]
    Estimation {
        same_class: usize,
        other_class: usize,
    },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("ingestion error at line {line}: {detail}")]
    Ingest { line: usize, detail: String },

    #[error("unknown bundled dataset `{name}`; available: {available}")]
    UnknownDataset { name: String, available: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
