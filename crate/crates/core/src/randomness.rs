//! Randomness accounting for file redirection.
//!
//! Redirection lets a request for one file return any file sharing its
//! (vc, offset). Within one virtual chunk of `L = F/M` files this shrinks
//! the set of reachable delivery orders from `L!` to at least
//! `L! / (G!)^K`. [`compute_bound`] evaluates that bound,
//! [`enumerate_reachable`] counts reachable orders exhaustively on tiny
//! instances, and [`position_uniformity`] runs chi-square diagnostics.

use std::collections::HashSet;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use crate::error::{ConfigError, Result};
use crate::layout::{Layout, LayoutConfig};
use crate::protocol::{LocalProtocol, RefillPolicy};
use crate::seed::mix;
use crate::storage::{CostModel, SyntheticStore};

/// Largest `L!` [`enumerate_reachable`] will walk.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

/// Exact values, available when `F/M ≤ 20`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactBound {
    pub full: u64,
    pub divisor: u64,
    pub lower_bound: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomnessBound {
    pub files: usize,
    pub virtual_chunks: usize,
    pub chunk_size: usize,
    pub group_size: usize,
    pub files_per_vc: usize,
    /// log₁₀((F/M)!)
    pub log10_full: f64,
    /// log₁₀((G!)^K)
    pub log10_divisor: f64,
    pub log10_lower_bound: f64,
    pub exact: Option<ExactBound>,
}

fn log10_factorial(n: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) / std::f64::consts::LN_10
}

fn factorial(n: usize) -> Option<u64> {
    (1..=n as u64).try_fold(1u64, |acc, i| acc.checked_mul(i))
}

pub fn compute_bound(files: usize, virtual_chunks: usize, chunk_size: usize) -> Result<RandomnessBound, ConfigError> {
    for (name, v) in [("F", files), ("M", virtual_chunks), ("K", chunk_size)] {
        if v == 0 {
            return Err(ConfigError::Zero { name, value: 0 });
        }
    }
    if !files.is_multiple_of(chunk_size * virtual_chunks) {
        return Err(ConfigError::Divisibility {
            constraint: "F % (K*M) == 0",
            files: files as u64,
            chunk_size: chunk_size as u64,
            virtual_chunks: virtual_chunks as u64,
            nodes: 1,
        });
    }
    let l = files / virtual_chunks;
    let g = l / chunk_size;
    let log10_full = log10_factorial(l);
    let log10_divisor = chunk_size as f64 * log10_factorial(g);
    let exact = if l <= 20 {
        let full = factorial(l).expect("20! fits in u64");
        let divisor = factorial(g)
            .and_then(|f| f.checked_pow(chunk_size as u32))
            .expect("bounded by L!");
        Some(ExactBound {
            full,
            divisor,
            lower_bound: full / divisor,
        })
    } else {
        None
    };
    Ok(RandomnessBound {
        files,
        virtual_chunks,
        chunk_size,
        group_size: g,
        files_per_vc: l,
        log10_full,
        log10_divisor,
        log10_lower_bound: log10_full - log10_divisor,
        exact,
    })
}

/// Outcome of exhaustive enumeration over one virtual chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enumeration {
    pub files_per_vc: usize,
    pub chunk_size: usize,
    pub group_size: usize,
    pub permutations: u64,
    pub distinct_sequences: u64,
}

/// Single-node layout holding exactly one virtual chunk of `l` files.
fn single_vc_layout(l: usize, k: usize) -> Result<Layout, ConfigError> {
    if k == 0 || !l.is_multiple_of(k) {
        return Err(ConfigError::Invalid(format!(
            "files per vc ({l}) must be a positive multiple of K ({k})"
        )));
    }
    Layout::uniform(LayoutConfig::new(l, k, 1, 1), 1)
}

/// Runs the `first` refill policy over every request order of one virtual
/// chunk's `l` files and counts the distinct delivery sequences.
pub fn enumerate_reachable(l: usize, k: usize) -> Result<Enumeration> {
    let perms = factorial(l).filter(|&p| p <= ENUMERATION_LIMIT).ok_or_else(|| {
        ConfigError::Invalid(format!(
            "{l}! request orders exceed the enumeration limit of {ENUMERATION_LIMIT}"
        ))
    })?;
    let layout = single_vc_layout(l, k)?;
    let store = SyntheticStore::new(&layout, 0);
    let cost = CostModel::free();
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    for order in (0..l).permutations(l) {
        let mut node = LocalProtocol::new(&layout, 0, RefillPolicy::First, ChaCha8Rng::seed_from_u64(0));
        let mut out = Vec::with_capacity(l);
        for f in order {
            out.push(node.read_local_file(&layout, &store, &cost, f)?.file_id() as u8);
        }
        seen.insert(out);
    }
    Ok(Enumeration {
        files_per_vc: l,
        chunk_size: k,
        group_size: l / k,
        permutations: perms,
        distinct_sequences: seen.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub description: String,
    pub categories: usize,
    pub statistic: f64,
    pub p_value: f64,
    /// True when `p_value < alpha`.
    pub flagged: bool,
    /// Only one category, so there is nothing to test.
    pub vacuous: bool,
}

impl ChiSquareTest {
    fn against_uniform(description: String, counts: &[u64], alpha: f64) -> Self {
        let categories = counts.len();
        if categories <= 1 {
            return Self {
                description,
                categories,
                statistic: 0.0,
                p_value: 1.0,
                flagged: false,
                vacuous: true,
            };
        }
        let n: u64 = counts.iter().sum();
        let expected = n as f64 / categories as f64;
        let statistic: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let dist = ChiSquared::new((categories - 1) as f64).expect("positive degrees of freedom");
        let p_value = dist.sf(statistic);
        Self {
            description,
            categories,
            statistic,
            p_value,
            flagged: p_value < alpha,
            vacuous: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    pub files_per_vc: usize,
    pub chunk_size: usize,
    pub group_size: usize,
    pub policy: RefillPolicy,
    pub trials: usize,
    pub alpha: f64,
    /// Order in which the group's physical chunks are first loaded.
    pub pc_order: ChiSquareTest,
    /// File returned by the first request of the epoch.
    pub first_delivery: ChiSquareTest,
}

/// Full-order test is used while G! stays at or below this many categories.
const MAX_ORDER_CATEGORIES: usize = 720;

/// Lexicographic rank of a permutation of `0..n`.
fn permutation_rank(perm: &[usize]) -> usize {
    let n = perm.len();
    let mut rank = 0;
    for i in 0..n {
        let smaller_after = perm[i + 1..].iter().filter(|&&x| x < perm[i]).count();
        rank = rank * (n - i) + smaller_after;
    }
    rank
}

/// Chi-square diagnostics over `trials` shuffled epochs of one virtual
/// chunk. A diagnostic only: flags indicate non-uniformity at `alpha`.
pub fn position_uniformity(
    l: usize,
    k: usize,
    policy: RefillPolicy,
    trials: usize,
    alpha: f64,
    seed: u64,
) -> Result<UniformityReport> {
    if trials < 1000 {
        return Err(
            ConfigError::Invalid(format!("position_uniformity needs at least 1000 trials, got {trials}")).into(),
        );
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConfigError::Invalid(format!("alpha must be in (0, 1), got {alpha}")).into());
    }
    let layout = single_vc_layout(l, k)?;
    let g = l / k;
    let store = SyntheticStore::new(&layout, 0);
    let cost = CostModel::free();
    let full_order = factorial(g).is_some_and(|c| c as usize <= MAX_ORDER_CATEGORIES);
    let mut order_counts = vec![0u64; if full_order { factorial(g).unwrap() as usize } else { g }];
    let mut first_counts = vec![0u64; l];

    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, t as u64));
        let mut order: Vec<usize> = (0..l).collect();
        order.shuffle(&mut rng);
        let mut node = LocalProtocol::new(
            &layout,
            0,
            policy,
            ChaCha8Rng::seed_from_u64(mix(mix(seed, t as u64), 1)),
        );
        let mut first_loads = Vec::with_capacity(g);
        for (i, &f) in order.iter().enumerate() {
            let before = node.stats().refills;
            let p = node.read_local_file(&layout, &store, &cost, f)?;
            if i == 0 {
                first_counts[p.file_id()] += 1;
            }
            if node.stats().refills > before {
                let (pc, _) = node.last_refill().expect("refill recorded");
                if !first_loads.contains(&pc) {
                    first_loads.push(pc);
                }
            }
        }
        debug_assert_eq!(first_loads.len(), g);
        if full_order {
            order_counts[permutation_rank(&first_loads)] += 1;
        } else {
            order_counts[first_loads[0]] += 1;
        }
    }

    let order_desc = if full_order {
        format!("first-load order over all {g}! orderings of the chunk group")
    } else {
        format!("first chunk loaded, over {g} chunks (marginal; {g}! orderings too many)")
    };
    Ok(UniformityReport {
        files_per_vc: l,
        chunk_size: k,
        group_size: g,
        policy,
        trials,
        alpha,
        pc_order: ChiSquareTest::against_uniform(order_desc, &order_counts, alpha),
        first_delivery: ChiSquareTest::against_uniform(
            format!("first delivered file over {l} files"),
            &first_counts,
            alpha,
        ),
    })
}
