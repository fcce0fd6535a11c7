#![allow(dead_code)]

//! Scripted scenarios with hand-checked expected outcomes, shared by the
//! golden and acceptance tests.
//!
//! Both use F=32, K=4, M=2 (G=4): VC0 groups chunks 0..4 (files 0..16),
//! VC1 groups chunks 4..8 (files 16..32). File `f` sits at offset `f % 4`.

use std::sync::Arc;

use redox_core::protocol::{Cluster, ClusterOptions, RefillPolicy};
use redox_core::sim::verify_exactly_once;
use redox_core::storage::{CostModel, SyntheticStore};
use redox_core::{EpochTrace, Error, Layout, LayoutConfig, ProtocolViolation};

fn cluster(nodes: usize, p: usize) -> Cluster {
    let layout = Arc::new(Layout::uniform(LayoutConfig::new(32, 4, 2, nodes).with_prefetch_window(p), 10).unwrap());
    let store = Arc::new(SyntheticStore::new(&layout, 5));
    let options = ClusterOptions {
        policy: RefillPolicy::First,
        ..ClusterOptions::default()
    };
    Cluster::new(layout, store, CostModel::default(), options)
}

fn trace(nodes: usize, head: &[(usize, usize)], rest_by: usize) -> EpochTrace {
    let mut order = head.to_vec();
    order.extend(
        (0..32)
            .filter(|f| !head.iter().any(|&(_, h)| h == *f))
            .map(|f| (rest_by, f)),
    );
    EpochTrace::from_order(0, nodes, order).unwrap()
}

pub fn single_node_redirection() {
    let mut c = cluster(1, 1);
    c.begin_epoch(trace(1, &[(0, 0), (0, 10), (0, 15), (0, 5), (0, 4)], 0));

    assert_eq!(c.read_sn(0).unwrap().file_id(), 0);
    assert_eq!(c.node(0).local().last_refill(), Some((0, 4)));
    // The chunk of files 0..4 is resident: reads of the 10th and 15th file
    // are answered with the 2nd and 3rd.
    assert_eq!(c.read_sn(1).unwrap().file_id(), 2);
    assert_eq!(c.read_sn(2).unwrap().file_id(), 3);
    assert_eq!(c.read_sn(3).unwrap().file_id(), 1);
    assert_eq!(c.node(0).local().stats().refills, 1);
    assert_eq!(c.node(0).local().vc(0).valid_count(), 0);

    // VC0 is drained; chunk 0 has nothing left at offset 0, so the first
    // chunk with a full useful refill is loaded.
    assert_eq!(c.read_sn(4).unwrap().file_id(), 4);
    assert_eq!(c.node(0).local().last_refill(), Some((1, 4)));

    for sn in 5..32 {
        c.read_sn(sn).unwrap();
    }
    let out = c.end_epoch();
    assert!(verify_exactly_once(32, &out.logs).is_ok());
    assert_eq!(
        out.refills[0].files_read,
        out.refills[0].files_filled + out.refills[0].files_wasted
    );
}

/// Node 0's requests to node 1, in order. In the worked example these are
/// reads 10, 12, 15, 16, 17, 19 and 20.
const STREAM: [usize; 7] = [19, 20, 23, 27, 25, 28, 18];

fn two_node() -> Cluster {
    let mut c = cluster(2, 5);
    let head: Vec<(usize, usize)> = STREAM.iter().map(|&f| (0, f)).collect();
    c.begin_epoch(trace(2, &head, 1));
    c
}

pub fn two_node_prefetch_windows() {
    let mut c = two_node();

    // Read 10 (file 19, offset 3) misses at the owner. Reads 15 and 16
    // share offset 3 and are blocked; reads 12 and 17 are prefetched as the
    // resident files 16 and 17.
    assert_eq!(c.read_sn(0).unwrap().file_id(), 19);
    assert_eq!(c.node(1).window(0).map(), &[true, true, false, false, true]);
    assert_eq!(c.node(0).cache().resident(1, 0), Some(16));
    assert_eq!(c.node(0).cache().resident(1, 1), Some(17));
    assert_eq!(c.node(0).counters().prefetched_received, 2);

    // Read 12 is served from prefetched memory with no message.
    assert_eq!(c.read_sn(1).unwrap().file_id(), 16);
    assert_eq!(c.node(0).counters().remote_on_demand, 1);
    assert_eq!(c.node(0).counters().prefetch_hits, 1);

    // Read 15 slides the window by 2. The owner refills chunk 5 (files
    // 20, 21, 23; 22 is wasted since slot 2 still holds 18). Read 16 is
    // still blocked, read 17 was already prefetched, reads 19 and 20 go
    // out as 20 and 18.
    assert_eq!(c.read_sn(2).unwrap().file_id(), 23);
    assert_eq!(c.node(1).local().last_refill(), Some((5, 3)));
    assert_eq!(c.node(1).local().stats().files_wasted, 1);
    assert_eq!(c.node(1).window(0).map(), &[true, false, false, true, true]);
    assert_eq!(c.node(1).window(0).pairs()[2], Some((1, 1)));
    assert_eq!(c.node(0).cache().resident(1, 0), Some(20));
    assert_eq!(c.node(0).cache().resident(1, 2), Some(18));
    assert_eq!(c.node(0).counters().prefetched_received, 4);

    // Read 16 goes on demand; everything after it is already local.
    assert_eq!(c.read_sn(3).unwrap().file_id(), 27);
    assert_eq!(c.node(1).window(0).map(), &[true, false, false, false, false]);
    assert_eq!(c.read_sn(4).unwrap().file_id(), 17);
    assert_eq!(c.read_sn(5).unwrap().file_id(), 20);
    assert_eq!(c.read_sn(6).unwrap().file_id(), 18);
    assert_eq!(c.node(0).counters().remote_on_demand, 3);
    assert_eq!(c.node(0).cache().resident_count(), 0);
    assert_eq!(c.node(0).cache().used(), 0);

    for sn in 7..32 {
        c.read_sn(sn).unwrap();
    }
    let out = c.end_epoch();
    assert!(verify_exactly_once(32, &out.logs).is_ok());
    assert_eq!(out.stranded_prefetches, 0);
}

pub fn occupied_prefetch_slot_is_caught() {
    let mut c = two_node();
    let junk = redox_core::storage::Payload::from_bytes(16, vec![0u8; 10]);
    c.inject_prefetched(0, 16, junk).unwrap();
    let err = c.read_sn(0).unwrap_err();
    assert!(
        matches!(
            err,
            Error::Protocol(ProtocolViolation::SlotOccupied {
                node: 0,
                vc: 1,
                offset: 0,
                ..
            })
        ),
        "{err}"
    );
    assert!(err.is_invariant_violation());
}

pub fn prefetch_off_sends_one_payload_per_request() {
    let layout = Arc::new(Layout::uniform(LayoutConfig::new(32, 4, 2, 2).with_prefetch_window(5), 10).unwrap());
    let store = Arc::new(SyntheticStore::new(&layout, 5));
    let options = ClusterOptions {
        policy: RefillPolicy::First,
        prefetch: false,
        ..ClusterOptions::default()
    };
    let mut c = Cluster::new(layout, store, CostModel::default(), options);
    let head: Vec<(usize, usize)> = STREAM.iter().map(|&f| (0, f)).collect();
    c.begin_epoch(trace(2, &head, 1));
    for sn in 0..32 {
        c.read_sn(sn).unwrap();
    }
    let out = c.end_epoch();
    let counters = &out.counters[0];
    assert_eq!(counters.remote_on_demand, 7);
    assert_eq!(counters.prefetched_received, 0);
    assert_eq!(counters.prefetch_hits, 0);
    assert!(verify_exactly_once(32, &out.logs).is_ok());
}

/// Random admissible config for the property sweeps: F ≤ 10⁵,
/// K ∈ 2..=256, G ∈ 2..=16, N ∈ 1..=5, P ∈ 1..=8.
pub fn random_config(rng: &mut impl rand::Rng) -> redox_core::sim::SimConfig {
    use redox_core::sim::{Scheduler, Seeds, SimConfig, SizeDistribution};
    loop {
        let k = rng.gen_range(2..=256usize);
        let g = rng.gen_range(2..=16usize);
        let n = rng.gen_range(1..=5usize);
        let max_m = 100_000 / (k * g * n);
        if max_m == 0 {
            continue;
        }
        let m = n * rng.gen_range(1..=max_m);
        let mut layout = LayoutConfig::new(k * g * m, k, m, n).with_prefetch_window(rng.gen_range(1..=8));
        layout.layout_seed = rng.gen();
        let sizes = match rng.gen_range(0..3) {
            0 => SizeDistribution::Fixed {
                bytes: rng.gen_range(1..=4096),
            },
            1 => SizeDistribution::Uniform {
                min: 1,
                max: rng.gen_range(1..=8192),
            },
            _ => SizeDistribution::LogNormal {
                mean: rng.gen_range(10.0..5000.0),
                sigma: rng.gen_range(0.0..1.5),
            },
        };
        if rng.gen_bool(0.25) {
            // Tight enough that prefetching is often budget-limited.
            layout.remote_vc_budget = rng.gen_range(1..=64) * 1024;
        }
        let mut c = SimConfig {
            layout,
            epochs: rng.gen_range(1..=2),
            sizes,
            seeds: Seeds::derive(rng.gen()),
            scheduler: if rng.gen_bool(0.25) {
                Scheduler::Jitter { seed: rng.gen() }
            } else {
                Scheduler::RoundRobin
            },
            ..SimConfig::default()
        };
        c.features.prefetch = rng.gen_bool(0.5);
        c.features.refill_policy = match rng.gen_range(0..3) {
            0 => RefillPolicy::Greedy,
            1 => RefillPolicy::First,
            _ => RefillPolicy::Random,
        };
        return c;
    }
}
