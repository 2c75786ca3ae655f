use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("lex error at {line}:{column}: {message}")]
    Lex {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("token id {id} at position {position} is outside the vocabulary (size {vocab_size})")]
    Vocabulary {
        id: u32,
        position: usize,
        vocab_size: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("nothing to mask: every position is a special token")]
    NothingToMask,

    #[error("cannot sample negative sentence pairs: {0}")]
    NoNegatives(String),

    #[error("training diverged: non-finite value in {tensor}")]
    Divergence { tensor: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("vocabulary target size {target} too small (need more than {required})")]
    VocabTooSmall { target: usize, required: usize },

    #[error("invalid layer {layer} for a model with {num_layers} layers")]
    InvalidLayer { layer: usize, num_layers: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
