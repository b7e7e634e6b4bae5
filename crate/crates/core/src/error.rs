use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("code space too small: k^n = {k}^{n} cannot hold {words} words")]
    CodeSpaceTooSmall { k: usize, n: usize, words: usize },

    #[error("rejection sampling stalled at word {word} after {retries} retries")]
    RejectionStalled { word: usize, retries: usize },

    #[error("word {word:?} spells to {len} units, longer than code length {n}")]
    CodeTooLong { word: String, len: usize, n: usize },

    #[error("word {word:?} cannot be spelled with the sub-unit alphabet")]
    Unspellable { word: String },

    #[error("codes not uniquely decodable: {first:?} and {second:?} share a code")]
    NotUniquelyDecodable { first: String, second: String },

    #[error("malformed codebook: {0}")]
    MalformedCodebook(String),

    #[error("malformed vocabulary: {0}")]
    MalformedVocabulary(String),

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite logits")]
    NonFiniteLogits,

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("training diverged: epoch {epoch} train loss {loss:.4} exceeds {limit:.4}")]
    Diverged { epoch: usize, loss: f64, limit: f64 },

    #[error("word index {index} out of range for vocabulary of {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("empty stream")]
    EmptyStream,

    #[error("invalid epsilon")]
    InvalidEpsilon,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unknown config key {0:?}")]
    UnknownConfigKey(String),

    #[error("non-finite value in tensor {0}")]
    NonFiniteTensor(String),

    #[error("unsupported quantization width {0} (expected 8 or 16)")]
    UnsupportedBits(u32),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
