use thiserror::Error;

/// Rejected layout or simulation parameters.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("{name} must be at least 1 (got {value})")]
    Zero { name: &'static str, value: u64 },
    #[error(
        "divisibility constraint violated: {constraint} (F={files}, K={chunk_size}, M={virtual_chunks}, N={nodes})"
    )]
    Divisibility {
        constraint: &'static str,
        files: u64,
        chunk_size: u64,
        virtual_chunks: u64,
        nodes: u64,
    },
    #[error("expected {expected} file sizes, got {got}")]
    SizeCount { expected: usize, got: usize },
    #[error("file {file_id} has size 0; every file must have a positive size")]
    EmptyFile { file_id: u64 },
    #[error("file id {file_id} out of range (F={files})")]
    FileOutOfRange { file_id: u64, files: u64 },
    #[error("{0}")]
    Invalid(String),
}

/// A protocol assertion failed. Any of these indicates a bug or a corrupted
/// state, never a recoverable condition.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolViolation {
    #[error("no physical chunk in the set of vc {vc} has an unconsumed file at offset {offset}")]
    NoCandidate { vc: u64, offset: u64 },
    #[error("refill chunk {pc} belongs to vc {actual}, expected vc {expected}")]
    WrongVirtualChunk { pc: u64, expected: u64, actual: u64 },
    #[error("file {file_id} is homed at node {home}, but node {node} was asked to serve it locally")]
    NotHome { file_id: u64, home: u64, node: u64 },
    #[error("prefetched payload for file {file_id} targets occupied slot (vc {vc}, offset {offset}) at node {node}")]
    SlotOccupied {
        node: u64,
        vc: u64,
        offset: u64,
        file_id: u64,
    },
    #[error(
        "on-demand request for file {file_id} from node {requester} was already prefetched in the surviving window"
    )]
    OnDemandAlreadyPrefetched { file_id: u64, requester: u64 },
    #[error("response map bit 0 is not set")]
    MissingOnDemand,
    #[error("response carries {payloads} payloads but the map has {bits} set bits")]
    MapMismatch { payloads: usize, bits: usize },
    #[error("returned file {returned} does not share (vc, offset, home) with requested file {requested}")]
    Redirection { requested: u64, returned: u64 },
    #[error("slot (vc {vc}, offset {offset}) still valid after serving a remote read")]
    SlotStillValid { vc: u64, offset: u64 },
    #[error("prefetch map bit {index} has no matching request in the window")]
    WindowOverrun { index: usize },
    #[error("chunk {pc} read {reads} times in one epoch, exceeding chunk size {chunk_size}")]
    ChunkOverload { pc: u64, reads: u64, chunk_size: u64 },
    #[error("node {node} holds {used} bytes of prefetched data, over its {budget}-byte budget")]
    BudgetExceeded { node: u64, used: u64, budget: u64 },
    #[error("epoch delivered files with {duplicates} duplicates and {omissions} omissions")]
    NotExactlyOnce { duplicates: usize, omissions: usize },
    #[error("epoch waste accounting broken: read {read}, filled {filled}, wasted {wasted}")]
    WasteIdentity { read: u64, filled: u64, wasted: u64 },
}

/// Errors from the chunk container format and chunk stores.
#[derive(Debug, Error)]
pub enum StorageError {
    #[error("bad container magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    BadVersion(u32),
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("container for chunk {pc} holds file {found} at slot {slot}, expected {expected}")]
    Membership {
        pc: u64,
        slot: usize,
        expected: u64,
        found: u64,
    },
    #[error("payload for file {file_id} is {got} bytes, layout says {expected}")]
    SizeMismatch { file_id: u64, expected: u64, got: u64 },
    #[error("no payload for file {0}")]
    MissingPayload(u64),
    #[error("chunk {0} out of range")]
    ChunkOutOfRange(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors decoding the wire messages.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("message truncated: need {need} bytes at offset {at}, have {have}")]
    Truncated { at: usize, need: usize, have: usize },
    #[error("bad message magic {0:#010x}")]
    BadMagic(u32),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("{0} trailing bytes after message")]
    Trailing(usize),
    #[error("message text is not utf-8")]
    Utf8,
}

/// Errors parsing the line-oriented text formats.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("protocol violation: {0}")]
    Protocol(#[from] ProtocolViolation),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    /// Failure inside a simulated epoch, tagged with the seed that reproduces it.
    #[error("epoch {epoch} (epoch seed {epoch_seed}): {source}")]
    Epoch {
        epoch: usize,
        epoch_seed: u64,
        source: Box<Error>,
    },
}

impl Error {
    /// True for errors that signal a broken invariant rather than bad input.
    pub fn is_invariant_violation(&self) -> bool {
        match self {
            Error::Protocol(_) => true,
            Error::Epoch { source, .. } => source.is_invariant_violation(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
