use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("flow {flow_id}: {message}")]
    InvalidFlow { flow_id: String, message: String },

    #[error("trace {trace_id}: {message}")]
    InvalidTrace { trace_id: String, message: String },

    #[error("empty packet group")]
    EmptyInput,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("feature schema mismatch: model has version {model}, extractor has {extractor}")]
    SchemaMismatch { model: u32, extractor: u32 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing label: {0}")]
    MissingLabel(String),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
