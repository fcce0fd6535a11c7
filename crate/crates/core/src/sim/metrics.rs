use serde::{Deserialize, Serialize};

use crate::layout::Layout;
use crate::protocol::EpochOutcome;

/// Per-node view of one epoch. Times are simulated seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node: usize,
    pub requests: u64,
    pub local_requests: u64,
    pub prefetch_hits: u64,
    pub remote_on_demand_requests: u64,
    pub refills: u64,
    pub disk_time: f64,
    pub network_time: f64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

/// Aggregate metrics for one epoch across all nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub epoch: usize,
    pub epoch_seed: u64,
    pub delivered: u64,
    /// Requests that found their slot empty and triggered a chunk load.
    pub memory_misses: u64,
    pub remote_on_demand_requests: u64,
    pub prefetch_hits: u64,
    pub prefetched_files: u64,
    pub stranded_prefetches: u64,
    pub files_read_from_disk: u64,
    pub files_filled: u64,
    pub files_wasted: u64,
    pub waste_by_score: u64,
    pub bytes_read_from_disk: u64,
    pub bytes_wasted: u64,
    /// Request and response bytes, headers included.
    pub bytes_over_network: u64,
    pub response_payload_bytes: u64,
    /// Entry `u` counts refills that filled `u` slots.
    pub fill_rate_histogram: Vec<u64>,
    /// Loads per physical chunk, indexed by global chunk id.
    pub per_pc_load_counts: Vec<u32>,
    pub per_node: Vec<NodeMetrics>,
    /// Slowest node's disk plus network time.
    pub simulated_epoch_time: f64,
}

impl MetricsReport {
    pub fn from_outcome(layout: &Layout, epoch: usize, epoch_seed: u64, outcome: &EpochOutcome) -> Self {
        let k = layout.chunk_size();
        let mut r = MetricsReport {
            epoch,
            epoch_seed,
            delivered: 0,
            memory_misses: 0,
            remote_on_demand_requests: 0,
            prefetch_hits: 0,
            prefetched_files: 0,
            stranded_prefetches: outcome.stranded_prefetches as u64,
            files_read_from_disk: 0,
            files_filled: 0,
            files_wasted: 0,
            waste_by_score: 0,
            bytes_read_from_disk: 0,
            bytes_wasted: 0,
            bytes_over_network: 0,
            response_payload_bytes: 0,
            fill_rate_histogram: vec![0; k + 1],
            per_pc_load_counts: Vec::with_capacity(layout.chunk_map().num_pcs()),
            per_node: Vec::with_capacity(layout.nodes()),
            simulated_epoch_time: 0.0,
        };
        for (node, (s, c)) in outcome.refills.iter().zip(&outcome.counters).enumerate() {
            r.delivered += outcome.logs[node].entries.len() as u64;
            r.memory_misses += s.refills;
            r.remote_on_demand_requests += c.remote_on_demand;
            r.prefetch_hits += c.prefetch_hits;
            r.prefetched_files += c.prefetched_received;
            r.files_read_from_disk += s.files_read;
            r.files_filled += s.files_filled;
            r.files_wasted += s.files_wasted;
            r.waste_by_score += s.waste_by_score;
            r.bytes_read_from_disk += s.bytes_read;
            r.bytes_wasted += s.bytes_wasted;
            r.bytes_over_network += c.bytes_sent + c.bytes_received;
            r.response_payload_bytes += c.response_payload_bytes;
            for (h, &n) in r.fill_rate_histogram.iter_mut().zip(&s.fill_histogram) {
                *h += n;
            }
            r.per_pc_load_counts.extend_from_slice(&s.pc_loads);
            let nm = NodeMetrics {
                node,
                requests: c.requests,
                local_requests: c.local_requests,
                prefetch_hits: c.prefetch_hits,
                remote_on_demand_requests: c.remote_on_demand,
                refills: s.refills,
                disk_time: s.disk_cost.secs(),
                network_time: c.net_cost.secs(),
                bytes_sent: c.bytes_sent,
                bytes_received: c.bytes_received,
            };
            r.simulated_epoch_time = r.simulated_epoch_time.max(nm.disk_time + nm.network_time);
            r.per_node.push(nm);
        }
        r
    }

    /// Mean loads per physical chunk.
    pub fn mean_pc_loads(&self) -> f64 {
        if self.per_pc_load_counts.is_empty() {
            return 0.0;
        }
        self.per_pc_load_counts.iter().map(|&n| n as f64).sum::<f64>() / self.per_pc_load_counts.len() as f64
    }

    /// Fraction of the bytes read from disk that were discarded.
    pub fn waste_ratio(&self) -> f64 {
        if self.bytes_read_from_disk == 0 {
            0.0
        } else {
            self.bytes_wasted as f64 / self.bytes_read_from_disk as f64
        }
    }
}
