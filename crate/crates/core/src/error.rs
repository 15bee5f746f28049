use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: {detail}")]
    LayerShape { layer: usize, detail: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("architecture mismatch: model {index} is `{found}`, expected `{expected}`")]
    ArchitectureMismatch {
        index: usize,
        expected: String,
        found: String,
    },

    #[error("malformed layer table: {0}")]
    MalformedTable(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("bad magic in {what}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        what: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("truncated {0}")]
    Truncated(String),

    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("insufficient samples: need at least {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("invalid value for `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite value produced at layer {0}")]
    NonFinite(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
