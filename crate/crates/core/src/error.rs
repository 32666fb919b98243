use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{layer}: shape mismatch (expected {expected}, got {got:?})")]
    Shape {
        layer: &'static str,
        expected: String,
        got: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("label {0} is outside {{0, 1}}")]
    InvalidLabel(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parameter sets are not compatible: {0}")]
    Incompatible(String),

    #[error("class {class} of client {client} has {count} samples, below the minimum of {min}")]
    DegenerateClass {
        client: usize,
        class: &'static str,
        count: usize,
        min: usize,
    },

    #[error("test-split image reached generator training: {0}")]
    Leakage(String),

    #[error("{0} is empty")]
    Empty(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Decoding failures of the binary shard and checkpoint containers.
///
/// Each corruption class maps to its own variant so callers (and the CLI exit
/// codes) can tell a damaged file from an incompatible one.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u16, found: u16 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("truncated input: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("architecture fingerprint mismatch")]
    Fingerprint,

    #[error("malformed payload: {0}")]
    Malformed(String),
}
