use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{MetricsReport, SimConfig, Simulator};
use crate::error::{ConfigError, Result};
use crate::protocol::RefillPolicy;

/// One variant of the feature breakdown. Counts are per-epoch means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub prefetch: bool,
    pub refill_policy: RefillPolicy,
    pub batching: bool,
    pub simulated_epoch_time: f64,
    pub memory_misses: f64,
    pub remote_on_demand_requests: f64,
    pub files_read_from_disk: f64,
    pub files_wasted: f64,
    pub bytes_over_network: f64,
}

fn mean(reports: &[MetricsReport], f: impl Fn(&MetricsReport) -> f64) -> f64 {
    reports.iter().map(f).sum::<f64>() / reports.len() as f64
}

/// Runs the full system and three ablated variants on identical seeds.
///
/// `no_optimization` turns off prefetch and batching; with one file per
/// chunk the refill policy has nothing to choose between.
pub fn run_ablation(base: &SimConfig) -> Result<Vec<AblationRow>> {
    let variants: [(&str, bool, RefillPolicy, bool); 4] = [
        ("full", true, base.features.refill_policy, true),
        ("random_selection", true, RefillPolicy::Random, true),
        ("no_prefetch", false, base.features.refill_policy, true),
        ("no_optimization", false, base.features.refill_policy, false),
    ];
    variants
        .into_iter()
        .map(|(name, prefetch, policy, batching)| {
            let mut c = base.clone();
            c.features.prefetch = prefetch;
            c.features.refill_policy = policy;
            c.features.batching = batching;
            let reports = Simulator::new(c)?.run()?;
            Ok(AblationRow {
                variant: name.to_owned(),
                prefetch,
                refill_policy: policy,
                batching,
                simulated_epoch_time: mean(&reports, |r| r.simulated_epoch_time),
                memory_misses: mean(&reports, |r| r.memory_misses as f64),
                remote_on_demand_requests: mean(&reports, |r| r.remote_on_demand_requests as f64),
                files_read_from_disk: mean(&reports, |r| r.files_read_from_disk as f64),
                files_wasted: mean(&reports, |r| r.files_wasted as f64),
                bytes_over_network: mean(&reports, |r| r.bytes_over_network as f64),
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "variant,prefetch,refill_policy,batching,simulated_epoch_time,memory_misses,remote_on_demand_requests,files_read_from_disk,files_wasted,bytes_over_network\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.variant,
            r.prefetch,
            r.refill_policy,
            r.batching,
            r.simulated_epoch_time,
            r.memory_misses,
            r.remote_on_demand_requests,
            r.files_read_from_disk,
            r.files_wasted,
            r.bytes_over_network
        );
    }
    out
}

/// One chunk size of a sweep. Counts are per-epoch means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub chunk_size: usize,
    pub virtual_chunks: usize,
    pub simulated_epoch_time: f64,
    pub memory_misses: f64,
    pub files_read_from_disk: f64,
    pub files_wasted: f64,
    pub mean_pc_loads: f64,
}

/// Sweeps the chunk size with total memory held fixed: the group size G of
/// `base` is kept and `M = F / (K·G)`.
pub fn chunk_size_sweep(base: &SimConfig, chunk_sizes: &[usize]) -> Result<Vec<SweepRow>> {
    base.validate()?;
    let g = base.layout.pcs_size();
    let files = base.layout.files;
    chunk_sizes
        .iter()
        .map(|&k| {
            if k == 0 || !files.is_multiple_of(k * g) {
                return Err(ConfigError::Invalid(format!(
                    "chunk size {k} does not divide F={files} into groups of {g} chunks"
                ))
                .into());
            }
            let mut c = base.clone();
            c.layout.chunk_size = k;
            c.layout.virtual_chunks = files / (k * g);
            let reports = Simulator::new(c)?.run()?;
            Ok(SweepRow {
                chunk_size: k,
                virtual_chunks: files / (k * g),
                simulated_epoch_time: mean(&reports, |r| r.simulated_epoch_time),
                memory_misses: mean(&reports, |r| r.memory_misses as f64),
                files_read_from_disk: mean(&reports, |r| r.files_read_from_disk as f64),
                files_wasted: mean(&reports, |r| r.files_wasted as f64),
                mean_pc_loads: mean(&reports, MetricsReport::mean_pc_loads),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "chunk_size,virtual_chunks,simulated_epoch_time,memory_misses,files_read_from_disk,files_wasted,mean_pc_loads\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.chunk_size,
            r.virtual_chunks,
            r.simulated_epoch_time,
            r.memory_misses,
            r.files_read_from_disk,
            r.files_wasted,
            r.mean_pc_loads
        );
    }
    out
}
