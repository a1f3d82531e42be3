use alloc::string::String;

/// Errors produced by the compute core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("signal of {len} samples is shorter than one {frame_len}-sample frame")]
    TooShort { len: usize, frame_len: usize },
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRate(u32, u32),
    #[error("{0} signal is silent")]
    Silent(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("reference signals are collinear")]
    Collinear,
    #[error("all segments are silent")]
    AllSilent,
    #[error("parameter block `{name}`: {detail}")]
    Block { name: String, detail: String },
    #[error("architecture has no attention: {0}")]
    NoAttention(&'static str),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}
