//! File-redirection data loading for training-data I/O.
//!
//! Files are packed into physical chunks and always read from storage a
//! whole chunk at a time. Each chunk is bound to an in-memory virtual chunk
//! shared by a fixed set of physical chunks; a request is answered by
//! whichever file currently sits in the requested file's slot, and every
//! file is loaded into memory at most once per epoch. Across nodes, owners
//! piggyback resident, conflict-free payloads for a requester's upcoming
//! reads onto each on-demand response.
//!
//! The crate contains the protocol, a packed chunk container format, a
//! deterministic multi-node simulator with a storage/network cost model,
//! and tools for measuring how redirection affects shuffle randomness.

pub mod error;
pub mod layout;
pub mod protocol;
pub mod randomness;
pub mod seed;
pub mod sim;
pub mod storage;
pub mod trace;

pub use error::{ConfigError, Error, ProtocolViolation, Result};
pub use layout::{ChunkMap, FileId, FileMeta, Layout, LayoutConfig, NodeId, PcId, VcId};
pub use trace::{DeliveryRecord, DeliveryTrace, EpochTrace, RequestStreams, TraceEntry};
