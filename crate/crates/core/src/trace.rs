//! Per-epoch global access order.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::ParseError;
use crate::layout::{parse_u64_columns, FileId, Layout, LayoutConfig, NodeId};
use crate::protocol::{Delivery, DeliveryLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    pub sn: usize,
    pub requester: NodeId,
    pub file: FileId,
}

/// A permutation of all file ids, each position tagged with the node that
/// issues it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochTrace {
    epoch_seed: u64,
    nodes: usize,
    entries: Vec<TraceEntry>,
    sn_of: Vec<usize>,
}

impl EpochTrace {
    /// Uniform shuffle under `epoch_seed`; position `i` is requested by node
    /// `i mod N`.
    pub fn generate(config: &LayoutConfig, epoch_seed: u64) -> Self {
        let mut order: Vec<FileId> = (0..config.files).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        order.shuffle(&mut rng);
        let entries = order
            .into_iter()
            .enumerate()
            .map(|(sn, file)| TraceEntry {
                sn,
                requester: sn % config.nodes,
                file,
            })
            .collect();
        Self::assemble(epoch_seed, config.nodes, entries)
    }

    /// Builds a trace from an explicit `(requester, file)` order. Used for
    /// scripted scenarios; requester balance is not enforced.
    pub fn from_order(
        epoch_seed: u64,
        nodes: usize,
        order: impl IntoIterator<Item = (NodeId, FileId)>,
    ) -> Result<Self, String> {
        let entries: Vec<TraceEntry> = order
            .into_iter()
            .enumerate()
            .map(|(sn, (requester, file))| TraceEntry { sn, requester, file })
            .collect();
        let mut seen = vec![false; entries.len()];
        for e in &entries {
            if e.requester >= nodes {
                return Err(format!("sn {} names node {} but N={nodes}", e.sn, e.requester));
            }
            match seen.get_mut(e.file) {
                Some(s) if !*s => *s = true,
                Some(_) => return Err(format!("file {} appears twice", e.file)),
                None => return Err(format!("file {} out of range", e.file)),
            }
        }
        Ok(Self::assemble(epoch_seed, nodes, entries))
    }

    fn assemble(epoch_seed: u64, nodes: usize, entries: Vec<TraceEntry>) -> Self {
        let mut sn_of = vec![0; entries.len()];
        for e in &entries {
            sn_of[e.file] = e.sn;
        }
        Self {
            epoch_seed,
            nodes,
            entries,
            sn_of,
        }
    }

    pub fn epoch_seed(&self) -> u64 {
        self.epoch_seed
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sn_of(&self, file: FileId) -> usize {
        self.sn_of[file]
    }

    pub fn requester_of(&self, file: FileId) -> NodeId {
        self.entries[self.sn_of[file]].requester
    }

    /// Files requested by `node`, in sn order.
    pub fn node_sequence(&self, node: NodeId) -> impl Iterator<Item = &TraceEntry> + '_ {
        self.entries.iter().filter(move |e| e.requester == node)
    }

    /// `redox-trace v1 F N epoch_seed`, then `sn requester file_id` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(24 * self.entries.len() + 48);
        let _ = writeln!(
            out,
            "redox-trace v1 {} {} {}",
            self.entries.len(),
            self.nodes,
            self.epoch_seed
        );
        for e in &self.entries {
            let _ = writeln!(out, "{} {} {}", e.sn, e.requester, e.file);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ParseError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| ParseError::new(1, "empty trace file"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 5 || h[0] != "redox-trace" || h[1] != "v1" {
            return Err(ParseError::new(1, "expected header `redox-trace v1 F N epoch_seed`"));
        }
        let parse = |s: &str| s.parse::<u64>().map_err(|e| ParseError::new(1, e.to_string()));
        let files = parse(h[2])? as usize;
        let nodes = parse(h[3])? as usize;
        let seed = parse(h[4])?;
        let mut order = Vec::with_capacity(files);
        for (idx, line) in lines {
            let cols = parse_u64_columns(line, 3, idx + 1)?;
            if cols[0] as usize != order.len() {
                return Err(ParseError::new(idx + 1, format!("sn {} out of sequence", cols[0])));
            }
            order.push((cols[1] as usize, cols[2] as usize));
        }
        if order.len() != files {
            return Err(ParseError::new(
                0,
                format!("header says {files} entries, found {}", order.len()),
            ));
        }
        Self::from_order(seed, nodes, order).map_err(|m| ParseError::new(0, m))
    }
}

/// One line of a delivery trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub sn: usize,
    pub requester: NodeId,
    pub requested: FileId,
    pub returned: FileId,
}

/// All nodes' delivery logs for one epoch, merged in sn order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryTrace {
    pub files: usize,
    pub nodes: usize,
    pub epoch_seed: u64,
    pub records: Vec<DeliveryRecord>,
}

impl DeliveryTrace {
    /// `logs[n]` is node `n`'s log.
    pub fn from_logs(files: usize, epoch_seed: u64, logs: &[DeliveryLog]) -> Self {
        let mut records: Vec<DeliveryRecord> = logs
            .iter()
            .enumerate()
            .flat_map(|(n, log)| {
                log.entries.iter().map(move |d| DeliveryRecord {
                    sn: d.sn,
                    requester: n,
                    requested: d.requested,
                    returned: d.returned,
                })
            })
            .collect();
        records.sort_by_key(|r| r.sn);
        Self {
            files,
            nodes: logs.len(),
            epoch_seed,
            records,
        }
    }

    /// Splits the records back into per-node logs.
    pub fn logs(&self) -> Vec<DeliveryLog> {
        let mut logs = vec![DeliveryLog::default(); self.nodes];
        for r in &self.records {
            logs[r.requester].entries.push(Delivery {
                sn: r.sn,
                requested: r.requested,
                returned: r.returned,
            });
        }
        logs
    }

    /// `redox-deliveries v1 F N epoch_seed`, then
    /// `sn requester requested_file returned_file` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(32 * self.records.len() + 48);
        let _ = writeln!(
            out,
            "redox-deliveries v1 {} {} {}",
            self.files, self.nodes, self.epoch_seed
        );
        for r in &self.records {
            let _ = writeln!(out, "{} {} {} {}", r.sn, r.requester, r.requested, r.returned);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ParseError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| ParseError::new(1, "empty delivery file"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 5 || h[0] != "redox-deliveries" || h[1] != "v1" {
            return Err(ParseError::new(
                1,
                "expected header `redox-deliveries v1 F N epoch_seed`",
            ));
        }
        let parse = |s: &str| s.parse::<u64>().map_err(|e| ParseError::new(1, e.to_string()));
        let files = parse(h[2])? as usize;
        let nodes = parse(h[3])? as usize;
        let epoch_seed = parse(h[4])?;
        let mut records = Vec::new();
        for (idx, line) in lines {
            let c = parse_u64_columns(line, 4, idx + 1)?;
            if c[1] as usize >= nodes {
                return Err(ParseError::new(
                    idx + 1,
                    format!("requester {} out of range (N={nodes})", c[1]),
                ));
            }
            records.push(DeliveryRecord {
                sn: c[0] as usize,
                requester: c[1] as usize,
                requested: c[2] as usize,
                returned: c[3] as usize,
            });
        }
        Ok(Self {
            files,
            nodes,
            epoch_seed,
            records,
        })
    }
}

/// Each requester's trace split by the home node of the requested file.
///
/// Prefetch windows index into these streams: an owner only ever looks at
/// the requests one requester sends to it.
#[derive(Debug, Clone)]
pub struct RequestStreams {
    nodes: usize,
    streams: Vec<Vec<FileId>>,
    position: Vec<usize>,
}

impl RequestStreams {
    pub fn new(layout: &Layout, trace: &EpochTrace) -> Self {
        let n = layout.nodes();
        let mut streams = vec![Vec::new(); n * n];
        let mut position = vec![0; layout.num_files()];
        for e in trace.entries() {
            let home = layout.home_of(e.file);
            let s = &mut streams[e.requester * n + home];
            position[e.file] = s.len();
            s.push(e.file);
        }
        Self {
            nodes: n,
            streams,
            position,
        }
    }

    /// Requests `requester` sends to `home`, in order.
    pub fn stream(&self, requester: NodeId, home: NodeId) -> &[FileId] {
        &self.streams[requester * self.nodes + home]
    }

    /// Index of `file` within its (requester, home) stream.
    pub fn position(&self, file: FileId) -> usize {
        self.position[file]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let c = LayoutConfig::new(64, 4, 4, 2);
        assert_eq!(EpochTrace::generate(&c, 7), EpochTrace::generate(&c, 7));
        assert_ne!(EpochTrace::generate(&c, 7), EpochTrace::generate(&c, 8));
    }

    #[test]
    fn round_robin_requesters() {
        let c = LayoutConfig::new(8, 2, 2, 2);
        let t = EpochTrace::generate(&c, 1);
        for node in 0..2 {
            assert_eq!(t.node_sequence(node).count(), 4);
        }
        for e in t.entries() {
            assert_eq!(e.requester, e.sn % 2);
            assert_eq!(t.sn_of(e.file), e.sn);
        }
    }

    #[test]
    fn from_order_rejects_duplicates() {
        assert!(EpochTrace::from_order(0, 1, [(0, 1), (0, 1)]).is_err());
        assert!(EpochTrace::from_order(0, 1, [(1, 0)]).is_err());
        assert!(EpochTrace::from_order(0, 1, [(0, 5)]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let c = LayoutConfig::new(48, 2, 6, 3);
        let t = EpochTrace::generate(&c, 42);
        assert_eq!(EpochTrace::from_text(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn streams_partition_each_node_sequence() {
        let c = LayoutConfig::new(48, 2, 6, 3);
        let layout = Layout::uniform(c.clone(), 1).unwrap();
        let t = EpochTrace::generate(&c, 3);
        let s = RequestStreams::new(&layout, &t);
        let mut total = 0;
        for r in 0..3 {
            for h in 0..3 {
                let stream = s.stream(r, h);
                total += stream.len();
                for (i, &f) in stream.iter().enumerate() {
                    assert_eq!(layout.home_of(f), h);
                    assert_eq!(t.requester_of(f), r);
                    assert_eq!(s.position(f), i);
                }
                assert!(stream.windows(2).all(|w| t.sn_of(w[0]) < t.sn_of(w[1])));
            }
        }
        assert_eq!(total, 48);
    }

    #[test]
    fn delivery_trace_round_trip() {
        let logs = vec![
            DeliveryLog {
                entries: vec![
                    Delivery {
                        sn: 0,
                        requested: 3,
                        returned: 1,
                    },
                    Delivery {
                        sn: 2,
                        requested: 0,
                        returned: 0,
                    },
                ],
            },
            DeliveryLog {
                entries: vec![Delivery {
                    sn: 1,
                    requested: 2,
                    returned: 2,
                }],
            },
        ];
        let t = DeliveryTrace::from_logs(4, 9, &logs);
        assert_eq!(t.records.iter().map(|r| r.sn).collect::<Vec<_>>(), vec![0, 1, 2]);
        let text = t.to_text();
        assert!(text.starts_with("redox-deliveries v1 4 2 9\n0 0 3 1\n1 1 2 2\n"));
        let back = DeliveryTrace::from_text(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.logs(), logs);
        assert!(DeliveryTrace::from_text("redox-deliveries v1 4 1 0\n0 1 0 0\n").is_err());
        assert!(DeliveryTrace::from_text("redox-trace v1 4 1 0\n").is_err());
    }
}
