use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::layout::{LayoutConfig, DEFAULT_REMOTE_VC_BUDGET};
use crate::protocol::RefillPolicy;
use crate::seed::mix;
use crate::storage::CostModel;

/// Everything a simulation run depends on. Serialized as the JSON config
/// file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub layout: LayoutConfig,
    #[serde(default = "one")]
    pub epochs: usize,
    #[serde(default)]
    pub cost: CostModel,
    #[serde(default)]
    pub features: Features,
    #[serde(default)]
    pub sizes: SizeDistribution,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub scheduler: Scheduler,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Features {
    #[serde(default = "yes")]
    pub prefetch: bool,
    #[serde(default)]
    pub refill_policy: RefillPolicy,
    /// When off, chunks hold a single file and every storage read is
    /// charged as a random read.
    #[serde(default = "yes")]
    pub batching: bool,
}

impl Default for Features {
    fn default() -> Self {
        Self {
            prefetch: true,
            refill_policy: RefillPolicy::Greedy,
            batching: true,
        }
    }
}

/// Seeds for every random stream of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Per-epoch shuffle; epoch `e` uses `mix(epoch, e)`.
    pub epoch: u64,
    /// Synthetic payload content.
    pub payload: u64,
    /// Refill tie-breaks and random refill selection.
    pub tiebreak: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self::derive(1)
    }
}

impl Seeds {
    /// All streams derived from one master seed.
    pub fn derive(master: u64) -> Self {
        Self {
            epoch: mix(master, 1),
            payload: mix(master, 2),
            tiebreak: mix(master, 3),
        }
    }

    pub fn epoch_seed(&self, epoch: usize) -> u64 {
        mix(self.epoch, epoch as u64)
    }
}

/// Order in which requests from different nodes are interleaved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    /// Strict global sn order.
    #[default]
    RoundRobin,
    /// Each step picks a random node with requests left; every node still
    /// issues its own requests in order.
    Jitter { seed: u64 },
}

/// File size generator for synthetic datasets, seeded by the layout seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SizeDistribution {
    Fixed {
        bytes: u64,
    },
    Uniform {
        min: u64,
        max: u64,
    },
    /// Log-normal with the given mean and log-space standard deviation.
    LogNormal {
        mean: f64,
        sigma: f64,
    },
}

impl Default for SizeDistribution {
    fn default() -> Self {
        SizeDistribution::LogNormal {
            mean: 100_000.0,
            sigma: 0.5,
        }
    }
}

impl SizeDistribution {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match *self {
            SizeDistribution::Fixed { bytes: 0 } => Err(ConfigError::Invalid("sizes.bytes must be > 0".into())),
            SizeDistribution::Uniform { min, max } if min == 0 || min > max => Err(ConfigError::Invalid(format!(
                "sizes.uniform needs 0 < min <= max, got [{min}, {max}]"
            ))),
            SizeDistribution::LogNormal { mean, sigma } if !(mean >= 1.0 && sigma >= 0.0 && sigma.is_finite()) => {
                Err(ConfigError::Invalid(format!(
                    "sizes.log_normal needs mean >= 1 and sigma >= 0, got {mean}, {sigma}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn sample(&self, count: usize, seed: u64) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match *self {
            SizeDistribution::Fixed { bytes } => vec![bytes; count],
            SizeDistribution::Uniform { min, max } => (0..count).map(|_| rng.gen_range(min..=max)).collect(),
            SizeDistribution::LogNormal { mean, sigma } => {
                let mu = mean.ln() - sigma * sigma / 2.0;
                let dist = LogNormal::new(mu, sigma).expect("validated parameters");
                (0..count)
                    .map(|_| (dist.sample(&mut rng).round() as u64).max(1))
                    .collect()
            }
        }
    }
}

impl Default for SimConfig {
    /// Three nodes, about 10⁵ files of ~100 KB, K=64, G=8, P=16.
    fn default() -> Self {
        Self {
            layout: LayoutConfig {
                files: 99_840,
                chunk_size: 64,
                virtual_chunks: 195,
                nodes: 3,
                prefetch_window: 16,
                layout_seed: 7,
                remote_vc_budget: DEFAULT_REMOTE_VC_BUDGET,
            },
            epochs: 1,
            cost: CostModel::default(),
            features: Features::default(),
            sizes: SizeDistribution::default(),
            seeds: Seeds::default(),
            scheduler: Scheduler::RoundRobin,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.layout.validate()?;
        self.effective_layout().validate()?;
        self.cost.validate()?;
        self.sizes.validate()?;
        if self.epochs == 0 {
            return Err(ConfigError::Zero {
                name: "epochs",
                value: 0,
            });
        }
        Ok(())
    }

    /// Layout actually simulated: with batching off, chunks shrink to one
    /// file and the virtual chunk count grows to keep memory constant.
    pub fn effective_layout(&self) -> LayoutConfig {
        let mut l = self.layout.clone();
        if !self.features.batching {
            l.virtual_chunks *= l.chunk_size;
            l.chunk_size = 1;
        }
        l
    }

    pub fn file_sizes(&self) -> Vec<u64> {
        self.sizes.sample(self.layout.files, self.layout.layout_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let c = SimConfig::default();
        c.validate().unwrap();
        assert_eq!(c.layout.pcs_size(), 8);
    }

    #[test]
    fn json_defaults_fill_in() {
        let c: SimConfig = serde_json::from_str(r#"{"layout": {"F": 48, "K": 2, "M": 6, "N": 3, "P": 4}}"#).unwrap();
        assert_eq!(c.layout.files, 48);
        assert_eq!(c.epochs, 1);
        assert_eq!(c.features, Features::default());
        assert_eq!(c.layout.remote_vc_budget, DEFAULT_REMOTE_VC_BUDGET);
        let back: SimConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_keys() {
        let r: Result<SimConfig, _> =
            serde_json::from_str(r#"{"layout": {"F": 4, "K": 1, "M": 1, "N": 1, "P": 1}, "epoch": 2}"#);
        assert!(r.is_err());
    }

    #[test]
    fn batching_off_keeps_memory() {
        let mut c = SimConfig::default();
        c.features.batching = false;
        let l = c.effective_layout();
        assert_eq!(l.chunk_size, 1);
        assert_eq!(l.virtual_chunks, 195 * 64);
        assert_eq!(l.pcs_size(), 8);
    }

    #[test]
    fn size_distributions() {
        let fixed = SizeDistribution::Fixed { bytes: 9 }.sample(10, 0);
        assert!(fixed.iter().all(|&s| s == 9));
        let u = SizeDistribution::Uniform { min: 5, max: 10 }.sample(1000, 1);
        assert!(u.iter().all(|&s| (5..=10).contains(&s)));
        let ln = SizeDistribution::LogNormal {
            mean: 100_000.0,
            sigma: 0.5,
        }
        .sample(20_000, 2);
        let mean = ln.iter().sum::<u64>() as f64 / ln.len() as f64;
        assert!((mean / 100_000.0 - 1.0).abs() < 0.03, "{mean}");
        assert_eq!(
            ln,
            SizeDistribution::LogNormal {
                mean: 100_000.0,
                sigma: 0.5
            }
            .sample(20_000, 2)
        );
        assert!(SizeDistribution::Uniform { min: 3, max: 2 }.validate().is_err());
    }
}
