//! Discrete simulation of a cluster running one or more epochs.
//!
//! A [`Simulator`] owns a [`Cluster`], generates each epoch's shuffled
//! trace, replays it under the configured [`Scheduler`], checks the
//! per-epoch invariants and reduces the outcome to a [`MetricsReport`].

mod config;
mod experiments;
mod metrics;
mod verify;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{Features, Scheduler, Seeds, SimConfig, SizeDistribution};
pub use experiments::{ablation_csv, chunk_size_sweep, run_ablation, sweep_csv, AblationRow, SweepRow};
pub use metrics::{MetricsReport, NodeMetrics};
pub use verify::{redirection_violations, verify_exactly_once, Duplicate, ExactlyOnceReport};

use crate::error::{ConfigError, Error, ProtocolViolation, Result};
use crate::layout::Layout;
use crate::protocol::{Cluster, ClusterOptions, DeliveryLog, ReadCharge};
use crate::seed::mix;
use crate::storage::{ChunkStore, SyntheticStore};
use crate::trace::EpochTrace;

/// Everything one simulated epoch produced.
#[derive(Debug, Clone)]
pub struct EpochRun {
    pub report: MetricsReport,
    pub trace: EpochTrace,
    pub logs: Vec<DeliveryLog>,
}

pub struct Simulator {
    config: SimConfig,
    layout: Arc<Layout>,
    cluster: Cluster,
    next_epoch: usize,
}

impl Simulator {
    /// Simulator over synthetic payloads drawn from the configured size
    /// distribution.
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(Layout::build(config.effective_layout(), config.file_sizes())?);
        let store = Arc::new(SyntheticStore::new(&layout, config.seeds.payload));
        Self::with_store(config, layout, store, false)
    }

    /// Simulator over an existing layout and store. The layout's
    /// parameters must equal the config's effective layout.
    pub fn with_store(
        config: SimConfig,
        layout: Arc<Layout>,
        store: Arc<dyn ChunkStore + Send + Sync>,
        wire_roundtrip: bool,
    ) -> Result<Self> {
        config.validate()?;
        if *layout.config() != config.effective_layout() {
            return Err(ConfigError::Invalid(format!(
                "layout parameters {:?} do not match the simulated layout {:?}",
                layout.config(),
                config.effective_layout()
            ))
            .into());
        }
        let options = ClusterOptions {
            policy: config.features.refill_policy,
            prefetch: config.features.prefetch,
            charge: if config.features.batching {
                ReadCharge::Batched
            } else {
                ReadCharge::PerFile
            },
            tiebreak_seed: config.seeds.tiebreak,
            wire_roundtrip,
        };
        let cluster = Cluster::new(layout.clone(), store, config.cost.clone(), options);
        Ok(Self {
            config,
            layout,
            cluster,
            next_epoch: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    /// Runs the next epoch. Errors carry the epoch seed that reproduces them.
    pub fn run_epoch(&mut self) -> Result<EpochRun> {
        let epoch = self.next_epoch;
        self.next_epoch += 1;
        let epoch_seed = self.config.seeds.epoch_seed(epoch);
        let trace = EpochTrace::generate(self.layout.config(), epoch_seed);
        self.replay(epoch, trace).map_err(|source| Error::Epoch {
            epoch,
            epoch_seed,
            source: Box::new(source),
        })
    }

    /// Runs the remaining configured epochs and returns their reports.
    pub fn run(&mut self) -> Result<Vec<MetricsReport>> {
        let mut reports = Vec::with_capacity(self.config.epochs);
        while self.next_epoch < self.config.epochs {
            reports.push(self.run_epoch()?.report);
        }
        Ok(reports)
    }

    fn replay(&mut self, epoch: usize, trace: EpochTrace) -> Result<EpochRun> {
        let order = schedule(&trace, self.config.scheduler, epoch);
        self.cluster.begin_epoch(trace.clone());
        for sn in order {
            if let Err(e) = self.cluster.read_sn(sn) {
                self.cluster.end_epoch();
                return Err(e);
            }
        }
        let outcome = self.cluster.end_epoch();

        let once = verify_exactly_once(self.layout.num_files(), &outcome.logs);
        if !once.is_ok() {
            return Err(ProtocolViolation::NotExactlyOnce {
                duplicates: once.duplicates.len(),
                omissions: once.omissions.len(),
            }
            .into());
        }
        for s in &outcome.refills {
            if s.files_read != s.files_filled + s.files_wasted || s.waste_by_score != s.files_wasted {
                return Err(ProtocolViolation::WasteIdentity {
                    read: s.files_read,
                    filled: s.files_filled,
                    wasted: s.files_wasted,
                }
                .into());
            }
        }
        let report = MetricsReport::from_outcome(&self.layout, epoch, trace.epoch_seed(), &outcome);
        Ok(EpochRun {
            report,
            trace,
            logs: outcome.logs,
        })
    }
}

/// Order in which the trace's sequence numbers are issued.
pub fn schedule(trace: &EpochTrace, scheduler: Scheduler, epoch: usize) -> Vec<usize> {
    match scheduler {
        Scheduler::RoundRobin => (0..trace.len()).collect(),
        Scheduler::Jitter { seed } => {
            let mut queues: Vec<std::collections::VecDeque<usize>> = (0..trace.nodes())
                .map(|n| trace.node_sequence(n).map(|e| e.sn).collect())
                .collect();
            let mut live: Vec<usize> = (0..queues.len()).filter(|&n| !queues[n].is_empty()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64));
            let mut order = Vec::with_capacity(trace.len());
            while !live.is_empty() {
                let i = rng.gen_range(0..live.len());
                let q = &mut queues[live[i]];
                order.push(q.pop_front().expect("live queues are non-empty"));
                if q.is_empty() {
                    live.swap_remove(i);
                }
            }
            order
        }
    }
}
