//! All nodes of one simulated deployment and the top-level read entry
//! point that dispatches between local and remote paths.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, ProtocolViolation};
use crate::layout::{FileId, Layout, NodeId};
use crate::protocol::local::{LocalProtocol, ReadCharge, RefillPolicy, RefillStats};
use crate::protocol::remote::{
    fill_in_data, read_and_prefetch_remote, read_remote_file, PrefetchWindowState, RemoteCache, RemoteResponse,
};
use crate::protocol::wire::{self, Message, Request, RequestKind};
use crate::seed::mix;
use crate::storage::{ChunkStore, CostModel, Payload, SimCost};
use crate::trace::{EpochTrace, RequestStreams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub sn: usize,
    pub requested: FileId,
    pub returned: FileId,
}

/// Per-node record of what each request returned.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeliveryLog {
    pub entries: Vec<Delivery>,
}

impl DeliveryLog {
    /// `sn requested_file returned_file` lines.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::with_capacity(self.entries.len() * 20);
        for d in &self.entries {
            let _ = writeln!(out, "{} {} {}", d.sn, d.requested, d.returned);
        }
        out
    }
}

/// Requester-side traffic counters for one node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeCounters {
    pub requests: u64,
    pub local_requests: u64,
    /// Remote-homed requests served from prefetched data.
    pub prefetch_hits: u64,
    pub remote_on_demand: u64,
    pub prefetched_received: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub response_payload_bytes: u64,
    pub net_cost: SimCost,
}

#[derive(Debug, Clone)]
pub struct Node {
    id: NodeId,
    local: LocalProtocol,
    windows: Vec<PrefetchWindowState>,
    cache: RemoteCache,
    log: DeliveryLog,
    counters: NodeCounters,
}

impl Node {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn local(&self) -> &LocalProtocol {
        &self.local
    }

    pub fn cache(&self) -> &RemoteCache {
        &self.cache
    }

    /// Prefetch window this node keeps for `requester`.
    pub fn window(&self, requester: NodeId) -> &PrefetchWindowState {
        &self.windows[requester]
    }

    pub fn log(&self) -> &DeliveryLog {
        &self.log
    }

    pub fn counters(&self) -> &NodeCounters {
        &self.counters
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterOptions {
    pub policy: RefillPolicy,
    pub prefetch: bool,
    pub charge: ReadCharge,
    pub tiebreak_seed: u64,
    /// Pass every message through the binary encoding. Materializes all
    /// payload bytes, so only practical for small datasets.
    pub wire_roundtrip: bool,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            policy: RefillPolicy::Greedy,
            prefetch: true,
            charge: ReadCharge::Batched,
            tiebreak_seed: 0,
            wire_roundtrip: false,
        }
    }
}

/// What a finished (or aborted) epoch left behind.
#[derive(Debug, Clone)]
pub struct EpochOutcome {
    pub logs: Vec<DeliveryLog>,
    pub refills: Vec<RefillStats>,
    pub counters: Vec<NodeCounters>,
    /// Files never filled into any virtual chunk.
    pub unconsumed: usize,
    /// Prefetched payloads still sitting in requester memory.
    pub stranded_prefetches: usize,
}

pub struct Cluster {
    layout: Arc<Layout>,
    store: Arc<dyn ChunkStore + Send + Sync>,
    cost: CostModel,
    options: ClusterOptions,
    nodes: Vec<Node>,
    epoch: Option<(EpochTrace, RequestStreams)>,
    epochs_run: u64,
}

impl Cluster {
    pub fn new(
        layout: Arc<Layout>,
        store: Arc<dyn ChunkStore + Send + Sync>,
        cost: CostModel,
        options: ClusterOptions,
    ) -> Self {
        let mut cluster = Self {
            layout,
            store,
            cost,
            options,
            nodes: Vec::new(),
            epoch: None,
            epochs_run: 0,
        };
        cluster.nodes = (0..cluster.layout.nodes()).map(|n| cluster.fresh_node(n)).collect();
        cluster
    }

    /// Owner state for `id`, with a tie-break stream unique to (node, epoch).
    fn local_for(&self, id: NodeId) -> LocalProtocol {
        let rng = ChaCha8Rng::seed_from_u64(mix(mix(self.options.tiebreak_seed, id as u64), self.epochs_run));
        LocalProtocol::new(&self.layout, id, self.options.policy, rng).with_charge(self.options.charge)
    }

    fn fresh_node(&self, id: NodeId) -> Node {
        let cfg = self.layout.config();
        Node {
            id,
            local: self.local_for(id),
            windows: (0..cfg.nodes)
                .map(|_| PrefetchWindowState::new(cfg.prefetch_window))
                .collect(),
            cache: RemoteCache::new(id, cfg.chunk_size, cfg.remote_vc_budget),
            log: DeliveryLog::default(),
            counters: NodeCounters::default(),
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn options(&self) -> &ClusterOptions {
        &self.options
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn trace(&self) -> Option<&EpochTrace> {
        self.epoch.as_ref().map(|(t, _)| t)
    }

    /// Installs the epoch's access order. Node state must be fresh; call
    /// [`Cluster::end_epoch`] between epochs.
    pub fn begin_epoch(&mut self, trace: EpochTrace) {
        let streams = RequestStreams::new(&self.layout, &trace);
        self.epoch = Some((trace, streams));
    }

    /// Reads the file at position `sn` of the epoch trace on behalf of its
    /// requester. Returns the delivered payload, which may be any file that
    /// shares the requested file's (vc, offset, home).
    pub fn read_sn(&mut self, sn: usize) -> Result<Payload, Error> {
        let entry = self.epoch.as_ref().expect("begin_epoch not called").0.entries()[sn];
        self.read_file(entry.file, entry.requester)
    }

    pub fn read_file(&mut self, file: FileId, requester: NodeId) -> Result<Payload, Error> {
        let (_, streams) = self.epoch.as_ref().expect("begin_epoch not called");
        let layout = &*self.layout;
        let meta = layout.meta(file);
        let store = &*self.store;
        let cost = &self.cost;

        let payload = if meta.home == requester {
            let node = &mut self.nodes[requester];
            node.counters.local_requests += 1;
            node.local.read_local_file(layout, store, cost, file)?
        } else if let Some(p) = self.nodes[requester].cache.take(meta.vc, meta.offset) {
            self.nodes[requester].counters.prefetch_hits += 1;
            p
        } else {
            let declared = self.nodes[requester].cache.declare_budget();
            let request = Request {
                kind: if self.options.prefetch {
                    RequestKind::ReadAndPrefetch
                } else {
                    RequestKind::Read
                },
                file_id: file as u64,
                requester: requester as u64,
                remaining_budget: declared,
            };
            let request = if self.options.wire_roundtrip {
                match wire::decode(&request.encode())? {
                    Message::Request(r) => r,
                    other => unreachable!("request decoded as {other:?}"),
                }
            } else {
                request
            };

            let owner = &mut self.nodes[meta.home];
            let response = match request.kind {
                RequestKind::Read => read_remote_file(&mut owner.local, layout, store, cost, file),
                RequestKind::ReadAndPrefetch => read_and_prefetch_remote(
                    &mut owner.local,
                    &mut owner.windows[requester],
                    layout,
                    store,
                    cost,
                    streams,
                    file,
                    requester,
                    request.remaining_budget,
                ),
            }?;
            let response_len = wire::response_len(&response);
            let response = if self.options.wire_roundtrip {
                match wire::decode(&wire::encode_response(&response))? {
                    Message::Response(r) => r,
                    other => unreachable!("response decoded as {other:?}"),
                }
            } else {
                response
            };

            let node = &mut self.nodes[requester];
            let c = &mut node.counters;
            c.remote_on_demand += 1;
            c.prefetched_received += response.prefetched() as u64;
            c.bytes_sent += wire::REQUEST_LEN as u64;
            c.bytes_received += response_len as u64;
            c.response_payload_bytes += response.payload_bytes();
            c.net_cost += cost.estimate_transfer(wire::REQUEST_LEN as u64);
            c.net_cost += cost.estimate_transfer(response_len as u64);

            let p = fill_in_data(&mut node.cache, layout, streams, file, meta.home, response)?;
            if node.cache.is_valid(meta.vc, meta.offset) {
                return Err(ProtocolViolation::SlotStillValid {
                    vc: meta.vc as u64,
                    offset: meta.offset as u64,
                }
                .into());
            }
            p
        };

        if layout.meta(payload.file_id()).slot() != meta.slot() {
            return Err(ProtocolViolation::Redirection {
                requested: file as u64,
                returned: payload.file_id() as u64,
            }
            .into());
        }
        let (trace, _) = self.epoch.as_ref().expect("begin_epoch not called");
        let node = &mut self.nodes[requester];
        node.counters.requests += 1;
        node.log.entries.push(Delivery {
            sn: trace.sn_of(file),
            requested: file,
            returned: payload.file_id(),
        });
        Ok(payload)
    }

    /// Archives delivery logs and statistics and clears all per-epoch
    /// state. Undelivered files are reported through a warning.
    pub fn end_epoch(&mut self) -> EpochOutcome {
        let mut logs = Vec::with_capacity(self.nodes.len());
        let mut refills = Vec::with_capacity(self.nodes.len());
        let mut counters = Vec::with_capacity(self.nodes.len());
        let mut unconsumed = 0;
        let mut stranded = 0;
        let mut delivered = 0;
        for node in &mut self.nodes {
            logs.push(std::mem::take(&mut node.log));
            delivered += logs.last().unwrap().entries.len();
            refills.push(node.local.take_stats());
            counters.push(std::mem::take(&mut node.counters));
            unconsumed += node.local.reset_epoch();
            stranded += node.cache.resident_count();
            node.cache.clear();
            node.windows.iter_mut().for_each(PrefetchWindowState::reset);
        }
        let total = self.layout.num_files();
        if stranded > 0 {
            warn!(stranded, "prefetched payloads left undelivered at epoch end");
        }
        if delivered < total {
            warn!(
                delivered,
                undelivered = total - delivered,
                unconsumed,
                "epoch ended before every file was delivered"
            );
        }
        self.epochs_run += 1;
        for id in 0..self.nodes.len() {
            let local = self.local_for(id);
            self.nodes[id].local = local;
        }
        self.epoch = None;
        EpochOutcome {
            logs,
            refills,
            counters,
            unconsumed,
            stranded_prefetches: stranded,
        }
    }

    /// Test hook: places a payload in a requester's remote memory.
    #[doc(hidden)]
    pub fn inject_prefetched(&mut self, node: NodeId, file: FileId, payload: Payload) -> Result<(), ProtocolViolation> {
        let m = self.layout.meta(file);
        self.nodes[node].cache.insert(m.vc, m.offset, payload)
    }

    /// Runs a single owner-side response without touching the requester,
    /// for inspecting window behavior.
    #[doc(hidden)]
    pub fn serve_remote(
        &mut self,
        file: FileId,
        requester: NodeId,
        declared_budget: u64,
    ) -> Result<RemoteResponse, Error> {
        let (_, streams) = self.epoch.as_ref().expect("begin_epoch not called");
        let home = self.layout.meta(file).home;
        let owner = &mut self.nodes[home];
        read_and_prefetch_remote(
            &mut owner.local,
            &mut owner.windows[requester],
            &self.layout,
            &*self.store,
            &self.cost,
            streams,
            file,
            requester,
            declared_budget,
        )
    }
}
