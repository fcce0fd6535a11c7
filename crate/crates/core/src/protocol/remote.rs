//! Cross-node reads: single-file serving, opportunistic conflict-free
//! prefetching over the requester's known future requests, and the
//! requester-side fill of prefetched payloads.
//!
//! A prefetch window is defined over the stream of requests one requester
//! sends to one owner (see [`RequestStreams`]). The on-demand request
//! anchors entry 0; entries `1..P` are that requester's next requests to
//! the same owner. Window state records the `(vc, offset)` pair of every
//! entry that was sent and survives a slide when consecutive windows
//! overlap.

use std::collections::BTreeMap;

use crate::error::{Error, ProtocolViolation};
use crate::layout::{FileId, Layout, NodeId, VcId};
use crate::protocol::local::{LocalProtocol, VirtualChunkState};
use crate::storage::{ChunkStore, CostModel, Payload};
use crate::trace::RequestStreams;

/// `(vc, offset)` of a slot.
pub type SlotKey = (VcId, usize);

/// Owner-side record of one requester's prefetch window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefetchWindowState {
    map: Vec<bool>,
    pairs: Vec<Option<SlotKey>>,
    last_position: Option<usize>,
}

impl PrefetchWindowState {
    pub fn new(p: usize) -> Self {
        Self {
            map: vec![false; p],
            pairs: vec![None; p],
            last_position: None,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Bits set in the most recent response.
    pub fn map(&self) -> &[bool] {
        &self.map
    }

    pub fn pairs(&self) -> &[Option<SlotKey>] {
        &self.pairs
    }

    /// Stream position of the last on-demand request, if any.
    pub fn last_position(&self) -> Option<usize> {
        self.last_position
    }

    /// Shifts recorded pairs left by `sl` and clears the map. Entries that
    /// fall off the end become absent; `sl >= P` empties the window.
    pub fn slide(&mut self, sl: usize) {
        debug_assert!(sl >= 1);
        let p = self.pairs.len();
        for j in 0..p {
            self.pairs[j] = if j + sl < p { self.pairs[j + sl] } else { None };
        }
        self.map.iter_mut().for_each(|b| *b = false);
    }

    pub fn reset(&mut self) {
        let p = self.pairs.len();
        *self = Self::new(p);
    }
}

/// Payloads sent for one remote request. `payloads[i]` corresponds to the
/// i-th set bit of `map`; bit 0 is always the on-demand file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteResponse {
    pub map: Vec<bool>,
    pub payloads: Vec<Payload>,
}

impl RemoteResponse {
    pub fn single(payload: Payload) -> Self {
        Self {
            map: vec![true],
            payloads: vec![payload],
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolViolation> {
        if !self.map.first().copied().unwrap_or(false) {
            return Err(ProtocolViolation::MissingOnDemand);
        }
        let bits = self.map.iter().filter(|&&b| b).count();
        if bits != self.payloads.len() {
            return Err(ProtocolViolation::MapMismatch {
                payloads: self.payloads.len(),
                bits,
            });
        }
        Ok(())
    }

    pub fn prefetched(&self) -> usize {
        self.payloads.len().saturating_sub(1)
    }

    pub fn payload_bytes(&self) -> u64 {
        self.payloads.iter().map(Payload::len).sum()
    }
}

/// Serves `file` for a remote requester with no prefetching.
pub fn read_remote_file(
    owner: &mut LocalProtocol,
    layout: &Layout,
    store: &dyn ChunkStore,
    cost: &CostModel,
    file: FileId,
) -> Result<RemoteResponse, Error> {
    let payload = owner.read_local_file(layout, store, cost, file)?;
    Ok(RemoteResponse::single(payload))
}

/// Serves `file` for `requester` and piggybacks any future requests of the
/// same requester whose slots are resident right now.
///
/// A candidate at window index `j > 0` is sent only if
/// - it was not already sent in an earlier, overlapping window,
/// - no earlier request in the window maps to the same `(vc, offset)`,
/// - the owner's slot for it is valid (prefetch never reads storage), and
/// - its payload fits in what remains of the requester's declared budget.
#[allow(clippy::too_many_arguments)]
pub fn read_and_prefetch_remote(
    owner: &mut LocalProtocol,
    window: &mut PrefetchWindowState,
    layout: &Layout,
    store: &dyn ChunkStore,
    cost: &CostModel,
    streams: &RequestStreams,
    file: FileId,
    requester: NodeId,
    declared_budget: u64,
) -> Result<RemoteResponse, Error> {
    let home = owner.node();
    let position = streams.position(file);
    let sl = match window.last_position {
        Some(last) => position - last,
        None => position + 1,
    };
    window.slide(sl);
    window.last_position = Some(position);
    if window.pairs[0].is_some() {
        return Err(ProtocolViolation::OnDemandAlreadyPrefetched {
            file_id: file as u64,
            requester: requester as u64,
        }
        .into());
    }

    let p = window.len();
    let stream = streams.stream(requester, home);
    let upcoming = &stream[position..stream.len().min(position + p)];
    debug_assert_eq!(upcoming[0], file);
    let keys: Vec<SlotKey> = upcoming
        .iter()
        .map(|&f| {
            let m = layout.meta(f);
            (m.vc, m.offset)
        })
        .collect();

    let mut payloads = Vec::with_capacity(p);
    payloads.push(owner.read_local_file(layout, store, cost, file)?);
    window.pairs[0] = Some(keys[0]);
    window.map[0] = true;

    let mut remaining = declared_budget;
    for j in 1..upcoming.len() {
        if window.pairs[j].is_some() {
            continue;
        }
        let key = keys[j];
        if keys[..j].contains(&key) {
            continue;
        }
        let Some(len) = owner.peek_slot(key.0, key.1).map(Payload::len) else {
            continue;
        };
        if len > remaining {
            continue;
        }
        remaining -= len;
        payloads.push(owner.read_local_file(layout, store, cost, upcoming[j])?);
        window.pairs[j] = Some(key);
        window.map[j] = true;
    }
    Ok(RemoteResponse {
        map: window.map.clone(),
        payloads,
    })
}

/// Requester-side memory for virtual chunks homed elsewhere. Only
/// prefetched payloads ever live here.
#[derive(Debug, Clone)]
pub struct RemoteCache {
    node: NodeId,
    k: usize,
    vcs: BTreeMap<VcId, VirtualChunkState>,
    budget: u64,
    used: u64,
}

impl RemoteCache {
    pub fn new(node: NodeId, k: usize, budget: u64) -> Self {
        Self {
            node,
            k,
            vcs: BTreeMap::new(),
            budget,
            used: 0,
        }
    }

    /// Remaining budget, piggybacked on every on-demand request.
    pub fn declare_budget(&self) -> u64 {
        self.budget.saturating_sub(self.used)
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn is_valid(&self, vc: VcId, offset: usize) -> bool {
        self.vcs.get(&vc).is_some_and(|s| s.is_valid(offset))
    }

    /// File held in the slot, if any.
    pub fn resident(&self, vc: VcId, offset: usize) -> Option<FileId> {
        self.vcs.get(&vc)?.resident(offset)
    }

    pub fn resident_count(&self) -> usize {
        self.vcs.values().map(VirtualChunkState::valid_count).sum()
    }

    /// Delivers and frees the slot, returning its bytes to the budget.
    pub fn take(&mut self, vc: VcId, offset: usize) -> Option<Payload> {
        let p = self.vcs.get_mut(&vc)?.take(offset)?;
        self.used -= p.len();
        Some(p)
    }

    pub fn insert(&mut self, vc: VcId, offset: usize, payload: Payload) -> Result<(), ProtocolViolation> {
        let k = self.k;
        let state = self.vcs.entry(vc).or_insert_with(|| VirtualChunkState::new(vc, k));
        if state.is_valid(offset) {
            return Err(ProtocolViolation::SlotOccupied {
                node: self.node as u64,
                vc: vc as u64,
                offset: offset as u64,
                file_id: payload.file_id() as u64,
            });
        }
        self.used += payload.len();
        state.put(offset, payload);
        if self.used > self.budget {
            return Err(ProtocolViolation::BudgetExceeded {
                node: self.node as u64,
                used: self.used,
                budget: self.budget,
            });
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        self.vcs.clear();
        self.used = 0;
    }
}

/// Consumes a response at the requester: returns the on-demand payload and
/// inserts every prefetched payload into the slot of the request it
/// answers.
pub fn fill_in_data(
    cache: &mut RemoteCache,
    layout: &Layout,
    streams: &RequestStreams,
    file: FileId,
    home: NodeId,
    resp: RemoteResponse,
) -> Result<Payload, Error> {
    resp.validate()?;
    let position = streams.position(file);
    let stream = streams.stream(cache.node, home);
    let mut payloads = resp.payloads.into_iter();
    let on_demand = payloads.next().expect("validated: bit 0 set");
    for (j, _) in resp.map.iter().enumerate().skip(1).filter(|(_, &b)| b) {
        let payload = payloads.next().expect("validated: one payload per set bit");
        let target = *stream
            .get(position + j)
            .ok_or(ProtocolViolation::WindowOverrun { index: j })?;
        let want = layout.meta(target);
        if layout.meta(payload.file_id()).slot() != want.slot() {
            return Err(ProtocolViolation::Redirection {
                requested: target as u64,
                returned: payload.file_id() as u64,
            }
            .into());
        }
        cache.insert(want.vc, want.offset, payload)?;
    }
    Ok(on_demand)
}
