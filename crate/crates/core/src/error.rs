//! Crate-wide error type.

/// Errors produced by spec loading, cost evaluation, and trace ingestion.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(std::io::Error),

    /// Malformed input document. `offset` is the byte offset of the failure.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A spec invariant was violated; the message names the invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("arithmetic overflow while computing {0}")]
    Overflow(&'static str),

    /// A trace operation produced no attention calls.
    #[error("empty attention trace: {0}")]
    EmptyTrace(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// An argument was outside its documented domain.
    #[error("domain error: {0}")]
    Domain(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Byte offset of a 1-based (line, column) position in `input`.
///
/// serde_json reports errors as line/column; the parse-error contract for
/// trace and spec documents is a byte offset.
pub(crate) fn byte_offset(input: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut remaining = line - 1;
    let mut offset = 0;
    for (idx, byte) in input.bytes().enumerate() {
        if remaining == 0 {
            break;
        }
        if byte == b'\n' {
            remaining -= 1;
            offset = idx + 1;
        }
    }
    (offset + column.saturating_sub(1)).min(input.len())
}

pub(crate) fn json_parse_error(input: &str, err: &serde_json::Error) -> Error {
    Error::Parse {
        offset: byte_offset(input, err.line(), err.column()),
        message: err.to_string(),
    }
}
