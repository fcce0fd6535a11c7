//! The file-redirection read protocol.
//!
//! [`local`] covers a node serving its own files, [`remote`] the owner and
//! requester halves of cross-node reads, [`wire`] the message framing and
//! [`cluster`] ties one node per actor together behind a single read call.

pub mod cluster;
pub mod local;
pub mod remote;
pub mod wire;

pub use cluster::{Cluster, ClusterOptions, Delivery, DeliveryLog, EpochOutcome, Node, NodeCounters};
pub use local::{ConsumedLedger, LocalProtocol, ReadCharge, RefillPolicy, RefillStats, VirtualChunkState};
pub use remote::{
    fill_in_data, read_and_prefetch_remote, read_remote_file, PrefetchWindowState, RemoteCache, RemoteResponse, SlotKey,
};
