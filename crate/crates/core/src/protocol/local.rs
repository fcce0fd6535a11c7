//! Single-node read path: redirected slot hits with self-invalidation,
//! waste-minimizing refill selection and batched chunk fills.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ProtocolViolation};
use crate::layout::{FileId, FileMeta, Layout, NodeId, PcId, VcId};
use crate::storage::{ChunkStore, CostModel, Payload, SimCost};

/// How a refill chunk is chosen among the feasible candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefillPolicy {
    /// Maximize useful refill; ties broken uniformly with the node's seeded RNG.
    #[default]
    Greedy,
    /// Maximize useful refill; the lowest-numbered maximum wins.
    First,
    /// Any feasible chunk, uniformly at random.
    Random,
}

impl std::str::FromStr for RefillPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "first" => Ok(Self::First),
            "random" => Ok(Self::Random),
            other => Err(format!(
                "unknown refill policy `{other}` (expected greedy, random or first)"
            )),
        }
    }
}

impl std::fmt::Display for RefillPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Greedy => "greedy",
            Self::First => "first",
            Self::Random => "random",
        })
    }
}

/// How storage reads are charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadCharge {
    /// One sequential I/O per chunk.
    #[default]
    Batched,
    /// One random I/O per file (the unbatched baseline).
    PerFile,
}

/// K slots of an in-memory virtual chunk. A slot is valid exactly when it
/// holds a payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VirtualChunkState {
    vc: VcId,
    slots: Vec<Option<Payload>>,
}

impl VirtualChunkState {
    pub fn new(vc: VcId, k: usize) -> Self {
        Self {
            vc,
            slots: vec![None; k],
        }
    }

    pub fn vc(&self) -> VcId {
        self.vc
    }

    pub fn is_valid(&self, slot: usize) -> bool {
        self.slots[slot].is_some()
    }

    pub fn resident(&self, slot: usize) -> Option<FileId> {
        self.slots[slot].as_ref().map(Payload::file_id)
    }

    pub fn peek(&self, slot: usize) -> Option<&Payload> {
        self.slots[slot].as_ref()
    }

    pub fn valid_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// Removes and returns the slot's payload, invalidating it.
    pub fn take(&mut self, slot: usize) -> Option<Payload> {
        self.slots[slot].take()
    }

    pub(crate) fn put(&mut self, slot: usize, payload: Payload) {
        debug_assert!(self.slots[slot].is_none());
        self.slots[slot] = Some(payload);
    }

    pub fn clear(&mut self) {
        self.slots.iter_mut().for_each(|s| *s = None);
    }
}

/// Per-chunk consumed flags for one node's physical chunks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsumedLedger {
    first_pc: PcId,
    k: usize,
    bits: Vec<bool>,
    consumed: usize,
}

impl ConsumedLedger {
    pub fn new(pcs: std::ops::Range<PcId>, k: usize) -> Self {
        Self {
            first_pc: pcs.start,
            k,
            bits: vec![false; pcs.len() * k],
            consumed: 0,
        }
    }

    fn index(&self, pc: PcId, slot: usize) -> usize {
        (pc - self.first_pc) * self.k + slot
    }

    pub fn is_consumed(&self, pc: PcId, slot: usize) -> bool {
        self.bits[self.index(pc, slot)]
    }

    /// Sets the flag; returns false if it was already set.
    pub fn mark(&mut self, pc: PcId, slot: usize) -> bool {
        let i = self.index(pc, slot);
        if self.bits[i] {
            return false;
        }
        self.bits[i] = true;
        self.consumed += 1;
        true
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn unconsumed(&self) -> usize {
        self.bits.len() - self.consumed
    }

    pub fn reset(&mut self) {
        self.bits.iter_mut().for_each(|b| *b = false);
        self.consumed = 0;
    }
}

/// Counters for the refills one node performed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefillStats {
    pub refills: u64,
    pub files_read: u64,
    pub files_filled: u64,
    pub files_wasted: u64,
    pub bytes_read: u64,
    pub bytes_wasted: u64,
    /// Σ over refills of (K − usefulRefill of the chosen chunk).
    pub waste_by_score: u64,
    /// `fill_histogram[u]` counts refills that filled `u` slots.
    pub fill_histogram: Vec<u64>,
    /// Loads per local physical chunk.
    pub pc_loads: Vec<u32>,
    pub disk_cost: SimCost,
}

/// Owner-side state of one node: its local virtual chunks and the consumed
/// flags of its physical chunks.
#[derive(Debug, Clone)]
pub struct LocalProtocol {
    node: NodeId,
    first_vc: VcId,
    first_pc: PcId,
    k: usize,
    vcs: Vec<VirtualChunkState>,
    ledger: ConsumedLedger,
    policy: RefillPolicy,
    charge: ReadCharge,
    rng: ChaCha8Rng,
    stats: RefillStats,
    last_refill: Option<(PcId, usize)>,
}

impl LocalProtocol {
    pub fn new(layout: &Layout, node: NodeId, policy: RefillPolicy, rng: ChaCha8Rng) -> Self {
        let k = layout.chunk_size();
        let vcs = layout.vcs_of_node(node);
        let pcs = layout.pcs_of_node(node);
        let stats = RefillStats {
            fill_histogram: vec![0; k + 1],
            pc_loads: vec![0; pcs.len()],
            ..Default::default()
        };
        Self {
            node,
            first_vc: vcs.start,
            first_pc: pcs.start,
            k,
            vcs: vcs.map(|vc| VirtualChunkState::new(vc, k)).collect(),
            ledger: ConsumedLedger::new(pcs, k),
            policy,
            charge: ReadCharge::Batched,
            rng,
            stats,
            last_refill: None,
        }
    }

    pub fn with_charge(mut self, charge: ReadCharge) -> Self {
        self.charge = charge;
        self
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn policy(&self) -> RefillPolicy {
        self.policy
    }

    pub fn vc(&self, vc: VcId) -> &VirtualChunkState {
        &self.vcs[vc - self.first_vc]
    }

    fn vc_mut(&mut self, vc: VcId) -> &mut VirtualChunkState {
        &mut self.vcs[vc - self.first_vc]
    }

    pub fn ledger(&self) -> &ConsumedLedger {
        &self.ledger
    }

    pub fn stats(&self) -> &RefillStats {
        &self.stats
    }

    /// Chunk and useful-refill score of the most recent refill.
    pub fn last_refill(&self) -> Option<(PcId, usize)> {
        self.last_refill
    }

    /// Payload currently resident in slot `offset` of local `vc`, if any.
    pub fn peek_slot(&self, vc: VcId, offset: usize) -> Option<&Payload> {
        self.vc(vc).peek(offset)
    }

    /// Feasible refill candidates for a miss on `(vc, offset)` with their
    /// useful-refill scores, in physical chunk order.
    pub fn candidates(&self, layout: &Layout, vc: VcId, offset: usize) -> Vec<(PcId, usize)> {
        let state = self.vc(vc);
        layout
            .chunk_map()
            .pcs(vc)
            .iter()
            .filter(|&&pc| !self.ledger.is_consumed(pc, offset))
            .map(|&pc| {
                let useful = (0..self.k)
                    .filter(|&i| !state.is_valid(i) && !self.ledger.is_consumed(pc, i))
                    .count();
                (pc, useful)
            })
            .collect()
    }

    /// Chooses the chunk to refill for a miss on `f`, returning it with its
    /// useful-refill score.
    pub fn find_replace_pc(&mut self, layout: &Layout, f: &FileMeta) -> Result<(PcId, usize), ProtocolViolation> {
        let candidates = self.candidates(layout, f.vc, f.offset);
        if candidates.is_empty() {
            return Err(ProtocolViolation::NoCandidate {
                vc: f.vc as u64,
                offset: f.offset as u64,
            });
        }
        let pick = match self.policy {
            RefillPolicy::Random => candidates[self.rng.gen_range(0..candidates.len())],
            RefillPolicy::First | RefillPolicy::Greedy => {
                let best = candidates.iter().map(|&(_, s)| s).max().unwrap();
                let mut top = candidates.iter().copied().filter(|&(_, s)| s == best);
                if self.policy == RefillPolicy::First {
                    top.next().unwrap()
                } else {
                    let top: Vec<_> = top.collect();
                    top[self.rng.gen_range(0..top.len())]
                }
            }
        };
        Ok(pick)
    }

    /// Serves `file` from this node's memory, refilling from storage on a
    /// miss. The returned payload may belong to any file sharing the
    /// requested file's (vc, offset).
    pub fn read_local_file(
        &mut self,
        layout: &Layout,
        store: &dyn ChunkStore,
        cost: &CostModel,
        file: FileId,
    ) -> Result<Payload, Error> {
        let f = layout.meta(file);
        if f.home != self.node {
            return Err(ProtocolViolation::NotHome {
                file_id: file as u64,
                home: f.home as u64,
                node: self.node as u64,
            }
            .into());
        }
        if let Some(p) = self.vc_mut(f.vc).take(f.offset) {
            return Ok(p);
        }

        let (rpc, useful) = self.find_replace_pc(layout, &f)?;
        let actual = layout.chunk_map().vc_of(rpc);
        if actual != f.vc {
            return Err(ProtocolViolation::WrongVirtualChunk {
                pc: rpc as u64,
                expected: f.vc as u64,
                actual: actual as u64,
            }
            .into());
        }
        let payloads = store.read_chunk(rpc)?;
        let chunk_bytes: u64 = payloads.iter().map(Payload::len).sum();
        let read_cost = match self.charge {
            ReadCharge::Batched => cost.chunk_read(chunk_bytes),
            ReadCharge::PerFile => payloads.iter().map(|p| cost.random_read(p.len())).sum(),
        };

        let mut filled = 0usize;
        let mut wasted_bytes = 0u64;
        for (i, payload) in payloads.into_iter().enumerate() {
            if !self.ledger.is_consumed(rpc, i) && !self.vc(f.vc).is_valid(i) {
                self.vc_mut(f.vc).put(i, payload);
                self.ledger.mark(rpc, i);
                filled += 1;
            } else {
                wasted_bytes += payload.len();
            }
        }
        debug_assert_eq!(filled, useful);
        self.last_refill = Some((rpc, useful));

        let k = self.k as u64;
        let local_pc = rpc - self.first_pc;
        let s = &mut self.stats;
        s.refills += 1;
        s.files_read += k;
        s.files_filled += filled as u64;
        s.files_wasted += k - filled as u64;
        s.waste_by_score += k - useful as u64;
        s.bytes_read += chunk_bytes;
        s.bytes_wasted += wasted_bytes;
        s.fill_histogram[filled] += 1;
        s.pc_loads[local_pc] += 1;
        s.disk_cost += read_cost;
        if s.pc_loads[local_pc] as usize > self.k {
            return Err(ProtocolViolation::ChunkOverload {
                pc: rpc as u64,
                reads: s.pc_loads[local_pc] as u64,
                chunk_size: k,
            }
            .into());
        }

        let payload = self
            .vc_mut(f.vc)
            .take(f.offset)
            .expect("refill chunk is unconsumed at the requested offset and the slot was empty");
        Ok(payload)
    }

    /// Clears slots and consumed flags. Returns how many local files were
    /// never filled this epoch.
    pub fn reset_epoch(&mut self) -> usize {
        let unconsumed = self.ledger.unconsumed();
        self.ledger.reset();
        self.vcs.iter_mut().for_each(VirtualChunkState::clear);
        unconsumed
    }

    /// Zeroes the refill counters, keeping slot and ledger state.
    pub fn take_stats(&mut self) -> RefillStats {
        let fresh = RefillStats {
            fill_histogram: vec![0; self.k + 1],
            pc_loads: vec![0; self.stats.pc_loads.len()],
            ..Default::default()
        };
        std::mem::replace(&mut self.stats, fresh)
    }

    #[cfg(test)]
    pub(crate) fn force_state(&mut self, vc: VcId, slot: usize, payload: Option<Payload>) {
        self.vc_mut(vc).slots[slot] = payload;
    }

    #[cfg(test)]
    pub(crate) fn force_consumed(&mut self, pc: PcId, slot: usize) {
        self.ledger.mark(pc, slot);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::LayoutConfig;
    use crate::storage::SyntheticStore;
    use rand::SeedableRng;

    fn setup(cfg: LayoutConfig, policy: RefillPolicy) -> (Layout, SyntheticStore, LocalProtocol) {
        let layout = Layout::uniform(cfg, 100).unwrap();
        let store = SyntheticStore::new(&layout, 0);
        let node = LocalProtocol::new(&layout, 0, policy, ChaCha8Rng::seed_from_u64(5));
        (layout, store, node)
    }

    fn read(node: &mut LocalProtocol, layout: &Layout, store: &SyntheticStore, f: FileId) -> FileId {
        node.read_local_file(layout, store, &CostModel::default(), f)
            .unwrap()
            .file_id()
    }

    /// Brute-force score: number of empty VC slots the chunk can fill.
    fn oracle_score(node: &LocalProtocol, pc: PcId, vc: VcId, k: usize) -> usize {
        let mut n = 0;
        for i in 0..k {
            let slot_empty = node.vc(vc).resident(i).is_none();
            let unconsumed = !node.ledger().is_consumed(pc, i);
            if slot_empty && unconsumed {
                n += 1;
            }
        }
        n
    }

    #[test]
    fn single_pc_group_loads_once() {
        let (layout, store, mut node) = setup(LayoutConfig::new(8, 4, 2, 1), RefillPolicy::Greedy);
        assert_eq!(read(&mut node, &layout, &store, 2), 2);
        assert_eq!(node.vc(0).valid_count(), 3);
        assert_eq!(node.stats().files_wasted, 0);
        for f in [0, 3, 1] {
            assert_eq!(read(&mut node, &layout, &store, f), f);
        }
        assert_eq!(node.stats().refills, 1);
        assert_eq!(node.stats().pc_loads, vec![1, 0]);
    }

    #[test]
    fn resident_slots_redirect() {
        // F=32, K=4, M=2: VC0 holds PCs 0..4 (files 0..16).
        let (layout, store, mut node) = setup(LayoutConfig::new(32, 4, 2, 1), RefillPolicy::First);
        assert_eq!(read(&mut node, &layout, &store, 0), 0);
        assert_eq!(read(&mut node, &layout, &store, 10), 2);
        assert_eq!(read(&mut node, &layout, &store, 15), 3);
        assert!(!node.vc(0).is_valid(2));
        assert!(node.ledger().is_consumed(0, 2));
    }

    #[test]
    fn greedy_prefers_higher_useful_refill() {
        // K=3, G=3: VC=[invalid, invalid, valid], PC0 consumed=[T,F,F],
        // PC1 fresh, PC2 fully consumed (its offset-2 file is resident).
        let (layout, store, mut node) = setup(LayoutConfig::new(9, 3, 1, 1), RefillPolicy::Greedy);
        node.force_consumed(0, 0);
        for i in 0..3 {
            node.force_consumed(2, i);
        }
        node.force_state(0, 2, Some(Payload::synthetic(8, 100, 0)));

        let scores = node.candidates(&layout, 0, 1);
        assert_eq!(scores, vec![(0, 1), (1, 2)]);
        for &(pc, s) in &scores {
            assert_eq!(s, oracle_score(&node, pc, 0, 3));
        }
        let f = layout.meta(4);
        assert_eq!(node.find_replace_pc(&layout, &f).unwrap(), (1, 2));

        // request offset 1: PC1 fills slots 0 and 1, slot-1 file returned
        assert_eq!(read(&mut node, &layout, &store, 1), 4);
        assert_eq!(node.vc(0).resident(0), Some(3));
        assert_eq!(node.vc(0).resident(2), Some(8));
        assert_eq!(node.stats().files_wasted, 1);
        assert!(!node.ledger().is_consumed(1, 2));
    }

    #[test]
    fn forced_choice_ignores_score() {
        let (layout, _, mut node) = setup(LayoutConfig::new(9, 3, 1, 1), RefillPolicy::Greedy);
        for pc in [0, 1] {
            node.force_consumed(pc, 1);
        }
        node.force_consumed(2, 0);
        node.force_consumed(2, 2);
        let f = layout.meta(1);
        assert_eq!(node.find_replace_pc(&layout, &f).unwrap(), (2, 1));
    }

    #[test]
    fn no_candidate_is_a_violation() {
        let (layout, _, mut node) = setup(LayoutConfig::new(9, 3, 1, 1), RefillPolicy::Greedy);
        for pc in 0..3 {
            node.force_consumed(pc, 0);
        }
        let err = node.find_replace_pc(&layout, &layout.meta(0)).unwrap_err();
        assert_eq!(err, ProtocolViolation::NoCandidate { vc: 0, offset: 0 });
    }

    #[test]
    fn symmetric_start_tie_breaks_vary_with_seed() {
        let layout = Layout::uniform(LayoutConfig::new(64, 4, 1, 1), 1).unwrap();
        let mut picks = std::collections::BTreeSet::new();
        for seed in 0..64 {
            let mut node = LocalProtocol::new(&layout, 0, RefillPolicy::Greedy, ChaCha8Rng::seed_from_u64(seed));
            let (pc, score) = node.find_replace_pc(&layout, &layout.meta(0)).unwrap();
            assert_eq!(score, 4);
            picks.insert(pc);
        }
        assert_eq!(picks.len(), 16);

        let mut node = LocalProtocol::new(&layout, 0, RefillPolicy::First, ChaCha8Rng::seed_from_u64(1));
        assert_eq!(node.find_replace_pc(&layout, &layout.meta(5)).unwrap(), (0, 4));
    }

    #[test]
    fn rejects_foreign_file() {
        let layout = Layout::uniform(LayoutConfig::new(16, 2, 4, 2), 1).unwrap();
        let store = SyntheticStore::new(&layout, 0);
        let mut node = LocalProtocol::new(&layout, 0, RefillPolicy::Greedy, ChaCha8Rng::seed_from_u64(1));
        let err = node
            .read_local_file(&layout, &store, &CostModel::default(), 9)
            .unwrap_err();
        assert!(matches!(err, Error::Protocol(ProtocolViolation::NotHome { .. })));
    }

    #[test]
    fn full_epoch_is_exactly_once_with_waste_identity() {
        use rand::seq::SliceRandom;
        for policy in [RefillPolicy::Greedy, RefillPolicy::First, RefillPolicy::Random] {
            let (layout, store, mut node) = setup(LayoutConfig::new(240, 8, 5, 1), policy);
            let mut order: Vec<FileId> = (0..240).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(11));
            let mut returned = Vec::new();
            for f in order {
                let (vc, o, _) = layout.slot_of(f).unwrap();
                let before = node.candidates(&layout, vc, o);
                let had_slot = node.vc(vc).is_valid(o);
                let refills = node.stats().refills;
                let g = read(&mut node, &layout, &store, f);
                assert_eq!(layout.meta(g).slot(), layout.meta(f).slot());
                if !had_slot && policy != RefillPolicy::Random {
                    assert_eq!(node.stats().refills, refills + 1);
                    let best = before.iter().map(|c| c.1).max().unwrap();
                    let (_, chosen) = node.last_refill().unwrap();
                    assert!(before.iter().all(|c| chosen >= c.1));
                    assert_eq!(chosen, best);
                }
                returned.push(g);
            }
            returned.sort_unstable();
            assert_eq!(returned, (0..240).collect::<Vec<_>>());
            let s = node.stats();
            assert_eq!(s.files_read, s.files_filled + s.files_wasted);
            assert_eq!(s.waste_by_score, s.files_wasted);
            assert_eq!(s.files_filled, 240);
            assert!(s.pc_loads.iter().all(|&l| l >= 1 && l as usize <= 8));
            assert_eq!(node.ledger().unconsumed(), 0);
            assert_eq!(node.reset_epoch(), 0);
            assert_eq!(node.ledger().consumed(), 0);
        }
    }

    #[test]
    fn per_file_charge_costs_more() {
        let layout = Layout::uniform(LayoutConfig::new(8, 4, 2, 1), 100_000).unwrap();
        let store = SyntheticStore::new(&layout, 0);
        let cost = CostModel::default();
        let mut batched = LocalProtocol::new(&layout, 0, RefillPolicy::First, ChaCha8Rng::seed_from_u64(0));
        let mut per_file = batched.clone().with_charge(ReadCharge::PerFile);
        batched.read_local_file(&layout, &store, &cost, 0).unwrap();
        per_file.read_local_file(&layout, &store, &cost, 0).unwrap();
        assert!(batched.stats().disk_cost < per_file.stats().disk_cost);
    }
}
