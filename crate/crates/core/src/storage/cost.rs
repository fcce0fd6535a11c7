use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Simulated wall time in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimCost(pub f64);

impl SimCost {
    pub const ZERO: SimCost = SimCost(0.0);

    pub fn secs(self) -> f64 {
        self.0
    }
}

impl Add for SimCost {
    type Output = SimCost;
    fn add(self, rhs: SimCost) -> SimCost {
        SimCost(self.0 + rhs.0)
    }
}

impl AddAssign for SimCost {
    fn add_assign(&mut self, rhs: SimCost) {
        self.0 += rhs.0;
    }
}

impl Sum for SimCost {
    fn sum<I: Iterator<Item = SimCost>>(iter: I) -> SimCost {
        iter.fold(SimCost::ZERO, Add::add)
    }
}

/// Flat storage and network cost model.
///
/// Defaults: a Gen4 NVMe SSD at 7,000 MB/s sequential and ~4,100 MB/s
/// effective for random 4K reads, and a 0.38 GB/s inter-node link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// bytes/s for whole-chunk sequential reads.
    pub seq_bandwidth: f64,
    /// bytes/s for standalone per-file reads.
    pub rand_read_effective_bandwidth: f64,
    /// seconds charged per storage I/O.
    pub per_io_latency: f64,
    /// bytes/s.
    pub net_bandwidth: f64,
    /// seconds per message.
    pub net_latency: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            seq_bandwidth: 7.0e9,
            rand_read_effective_bandwidth: 4.1e9,
            per_io_latency: 100e-6,
            net_bandwidth: 0.38e9,
            net_latency: 100e-6,
        }
    }
}

impl CostModel {
    /// Zero latency and unbounded bandwidth: every operation is free.
    pub fn free() -> Self {
        Self {
            seq_bandwidth: f64::INFINITY,
            rand_read_effective_bandwidth: f64::INFINITY,
            per_io_latency: 0.0,
            net_bandwidth: f64::INFINITY,
            net_latency: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("cost.{name} must be > 0, got {v}")))
            }
        };
        positive("seq_bandwidth", self.seq_bandwidth)?;
        positive("rand_read_effective_bandwidth", self.rand_read_effective_bandwidth)?;
        positive("net_bandwidth", self.net_bandwidth)?;
        if self.seq_bandwidth < self.rand_read_effective_bandwidth {
            return Err(ConfigError::Invalid(
                "cost.seq_bandwidth must be >= cost.rand_read_effective_bandwidth".into(),
            ));
        }
        for (name, v) in [
            ("per_io_latency", self.per_io_latency),
            ("net_latency", self.net_latency),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "cost.{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// One batched read of a whole chunk holding `bytes`.
    pub fn chunk_read(&self, bytes: u64) -> SimCost {
        SimCost(self.per_io_latency + bytes as f64 / self.seq_bandwidth)
    }

    /// A standalone read of a single file.
    pub fn random_read(&self, bytes: u64) -> SimCost {
        SimCost(self.per_io_latency + bytes as f64 / self.rand_read_effective_bandwidth)
    }

    /// One network message carrying `bytes`.
    pub fn estimate_transfer(&self, bytes: u64) -> SimCost {
        SimCost(self.net_latency + bytes as f64 / self.net_bandwidth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_of_64_files_of_100kb() {
        let c = CostModel::default();
        let cost = c.chunk_read(64 * 100_000).secs();
        // 6.4e6 / 7e9 + 1e-4
        assert!((cost - 1.0143e-3).abs() < 1e-6, "{cost}");
    }

    #[test]
    fn free_model_costs_nothing() {
        let c = CostModel::free();
        assert_eq!(c.chunk_read(1 << 30).secs(), 0.0);
        assert_eq!(c.random_read(1 << 30).secs(), 0.0);
        assert_eq!(c.estimate_transfer(1 << 30).secs(), 0.0);
    }

    #[test]
    fn batching_beats_random_reads() {
        let c = CostModel::default();
        for k in [1u64, 2, 16, 64, 256] {
            for size in [4_096u64, 100_000, 1 << 20] {
                let batched = c.chunk_read(k * size).secs();
                let single = k as f64 * c.random_read(size).secs();
                assert!(batched < single, "k={k} size={size}");
                assert!(batched / (k as f64) < c.random_read(size).secs());
            }
        }
    }

    #[test]
    fn transfer_linear_in_bytes() {
        let c = CostModel::default();
        assert_eq!(c.estimate_transfer(0).secs(), c.net_latency);
        let one = c.estimate_transfer(380_000_000).secs() - c.net_latency;
        assert!((one - 1.0).abs() < 1e-9);
        let two = c.estimate_transfer(760_000_000).secs() - c.net_latency;
        assert!((two - 2.0 * one).abs() < 1e-9);
    }

    #[test]
    fn validation() {
        CostModel::default().validate().unwrap();
        let mut c = CostModel::default();
        c.seq_bandwidth = 1.0e9;
        assert!(c.validate().is_err());
        let mut c = CostModel::default();
        c.net_latency = -1.0;
        assert!(c.validate().is_err());
    }
}
