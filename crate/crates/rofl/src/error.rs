use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("sequence of length {len} exceeds context window {ctx}")]
    ContextOverflow { len: usize, ctx: usize },

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    InvalidToken { id: u16, vocab: usize },

    #[error("target sequence is empty")]
    EmptyTarget,

    #[error("span {start}..{end} does not lie within the optimizable prompt (len {len})")]
    BadSpan { start: usize, end: usize, len: usize },

    #[error("corpus of {len} bytes is shorter than required {min}")]
    CorpusTooShort { len: usize, min: usize },

    #[error("finetuning dataset is empty")]
    EmptyDataset,

    #[error("LoRA rank {rank} exceeds model width {d_model}")]
    BadRank { rank: usize, d_model: usize },

    #[error("unsupported quantization width: {bits} bits")]
    BadBits { bits: u32 },

    #[error("checkpoint is already quantized ({bits}-bit); expected 32-bit input")]
    AlreadyQuantized { bits: u32 },

    #[error("text of {len} bytes is too short for perplexity (need >= 2)")]
    TextTooShort { len: usize },

    #[error("negative temperature: {0}")]
    NegativeTemperature(f32),

    #[error("bottom-k parameter {k} out of range 1..={vocab}")]
    BadBottomK { k: usize, vocab: usize },

    #[error("invalid model configuration: {0}")]
    BadConfig(String),

    #[error("task models disagree on vocabulary or lineage")]
    TaskMismatch,

    #[error("empty optimizable suffix")]
    EmptySuffix,

    #[error("fingerprint generation failed: no trial success within the epoch budget")]
    GenerationFailed,

    #[error("salt must be exactly 32 bytes, got {0}")]
    BadSaltLength(usize),

    #[error("ledger integrity violation: {0}")]
    LedgerIntegrity(String),

    #[error("no valid claim survived open() and verification")]
    NoWinner,

    #[error("unknown system prompt variant: {0}")]
    UnknownVariant(String),

    #[error("oracle transport failure: {0}")]
    OracleTransport(String),

    #[error("malformed {what} file: {detail}")]
    Parse { what: &'static str, detail: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
