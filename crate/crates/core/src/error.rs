use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sequence")]
    EmptySequence,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("entropy source failure: {0}")]
    EntropyFailure(String),

    #[error("aware mode requires green list")]
    MissingGreenList,

    #[error("aware mode requires watermark key")]
    MissingWatermarkKey,

    #[error("undefined survival: baseline z-score is not positive")]
    UndefinedSurvival,

    #[error("insufficient reference corpus: {0}")]
    InsufficientReference(String),

    #[error("empty rank samples")]
    EmptyRankSamples,

    #[error("record has no green flags")]
    MissingGreenFlags,

    #[error("zero standard deviation for {0}")]
    ZeroStd(&'static str),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("sequence too short: {0}")]
    SequenceTooShort(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
