//! Packet-processing chain model: ordered stages with per-packet costs,
//! a one-time per-flow setup cost, and contiguous split schemes for
//! pipelined execution across a core group.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{fnv1a, Nanos, NS_PER_SEC};

/// Default maximum batch size pulled per dequeue.
pub const DEFAULT_MAX_BATCH: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("chain must have at least one stage")]
    NoStages,
    #[error("stage `{0}` has zero cost")]
    ZeroCost(String),
    #[error("max_batch must be >= 1")]
    ZeroBatch,
    #[error("invalid cut points {0:?} for a {1}-stage chain")]
    InvalidCuts(Vec<usize>, usize),
}

/// One processing stage of a chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub cost_ns: Nanos,
}

/// An ordered chain of stages. Service time is packet-size independent;
/// `per_new_flow_cost_ns` is charged once per flow per core, when the
/// core processes the flow's first packet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub stages: Vec<Stage>,
    pub per_new_flow_cost_ns: Nanos,
    pub max_batch: usize,
}

impl ChainSpec {
    /// Single-stage chain, setup cost defaulting to 3x the per-packet cost.
    pub fn single(name: &str, cost_ns: Nanos) -> Self {
        ChainSpec {
            stages: vec![Stage {
                name: name.to_string(),
                cost_ns,
            }],
            per_new_flow_cost_ns: 3 * cost_ns,
            max_batch: DEFAULT_MAX_BATCH,
        }
    }

    /// Chain from (name, cost) pairs with an explicit setup cost.
    pub fn new(stages: &[(&str, Nanos)], per_new_flow_cost_ns: Nanos) -> Self {
        ChainSpec {
            stages: stages
                .iter()
                .map(|(n, c)| Stage {
                    name: n.to_string(),
                    cost_ns: *c,
                })
                .collect(),
            per_new_flow_cost_ns,
            max_batch: DEFAULT_MAX_BATCH,
        }
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        if self.stages.is_empty() {
            return Err(ChainError::NoStages);
        }
        for s in &self.stages {
            if s.cost_ns == 0 {
                return Err(ChainError::ZeroCost(s.name.clone()));
            }
        }
        if self.max_batch == 0 {
            return Err(ChainError::ZeroBatch);
        }
        Ok(())
    }

    /// Total per-packet cost: the sum of all stage costs.
    pub fn total_cost_ns(&self) -> Nanos {
        self.stages.iter().map(|s| s.cost_ns).sum()
    }

    /// Per-packet service time; new flows additionally pay the setup cost.
    pub fn service_time_ns(&self, is_new_flow: bool) -> Nanos {
        self.total_cost_ns()
            + if is_new_flow {
                self.per_new_flow_cost_ns
            } else {
                0
            }
    }

    /// Stable content hash binding trained predictors to the exact chain
    /// (stage costs, setup cost, batch size) they were trained for.
    pub fn hash(&self) -> u64 {
        let mut bytes = Vec::new();
        for s in &self.stages {
            bytes.extend_from_slice(s.name.as_bytes());
            bytes.push(0);
            bytes.extend_from_slice(&s.cost_ns.to_le_bytes());
        }
        bytes.extend_from_slice(&self.per_new_flow_cost_ns.to_le_bytes());
        bytes.extend_from_slice(&(self.max_batch as u64).to_le_bytes());
        fnv1a(&bytes)
    }
}

/// A partition of a chain into `n` contiguous sub-chains, one per core of
/// a pipeline group. `cuts` holds the interior stage indices at which a
/// new sub-chain begins; whole stages only, never split internally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitScheme {
    pub cuts: Vec<usize>,
}

impl SplitScheme {
    /// The trivial scheme: the whole chain on one core.
    pub fn unsplit() -> Self {
        SplitScheme { cuts: Vec::new() }
    }

    /// Number of sub-chains (cores) in the scheme.
    pub fn cores(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn validate(&self, chain: &ChainSpec) -> Result<(), ChainError> {
        let n = chain.stages.len();
        let mut prev = 0usize;
        for &c in &self.cuts {
            if c == 0 || c >= n || c <= prev {
                return Err(ChainError::InvalidCuts(self.cuts.clone(), n));
            }
            prev = c;
        }
        Ok(())
    }

    /// Cost of each sub-chain, in order. Sub-chains cover all stages
    /// exactly once, so the costs sum to the total chain cost.
    pub fn sub_chain_costs(&self, chain: &ChainSpec) -> Vec<Nanos> {
        let mut bounds = Vec::with_capacity(self.cuts.len() + 2);
        bounds.push(0);
        bounds.extend_from_slice(&self.cuts);
        bounds.push(chain.stages.len());
        bounds
            .windows(2)
            .map(|w| chain.stages[w[0]..w[1]].iter().map(|s| s.cost_ns).sum())
            .collect()
    }

    /// Bottleneck sub-chain cost: the pipeline admits one packet per this
    /// many nanoseconds once full.
    pub fn bottleneck_cost_ns(&self, chain: &ChainSpec) -> Nanos {
        self.sub_chain_costs(chain).into_iter().max().unwrap_or(0)
    }
}

/// Pipeline throughput in packets/s: the slowest sub-chain gates the rate.
pub fn split_throughput(chain: &ChainSpec, scheme: &SplitScheme) -> f64 {
    NS_PER_SEC as f64 / scheme.bottleneck_cost_ns(chain) as f64
}

/// Unloaded per-packet latency of a split chain. Splitting parallelizes
/// work but never reduces it, so this equals the unsplit chain cost.
pub fn split_latency_ns(chain: &ChainSpec, scheme: &SplitScheme) -> Nanos {
    scheme.sub_chain_costs(chain).iter().sum()
}

/// All contiguous partitions of `chain` into at most `max_cores`
/// sub-chains, ordered by core count and then by descending throughput.
pub fn enumerate_splits(chain: &ChainSpec, max_cores: usize) -> Vec<SplitScheme> {
    let stages = chain.stages.len();
    let mut out = Vec::new();
    // Choose cut points as subsets of the interior boundaries 1..stages.
    let interior: Vec<usize> = (1..stages).collect();
    let mut current = Vec::new();
    fn rec(
        interior: &[usize],
        start: usize,
        left: usize,
        current: &mut Vec<usize>,
        out: &mut Vec<SplitScheme>,
    ) {
        out.push(SplitScheme {
            cuts: current.clone(),
        });
        if left == 0 {
            return;
        }
        for i in start..interior.len() {
            current.push(interior[i]);
            rec(interior, i + 1, left - 1, current, out);
            current.pop();
        }
    }
    rec(
        &interior,
        0,
        max_cores.saturating_sub(1).min(interior.len()),
        &mut current,
        &mut out,
    );
    out.sort_by(|a, b| {
        a.cores().cmp(&b.cores()).then(
            a.bottleneck_cost_ns(chain)
                .cmp(&b.bottleneck_cost_ns(chain))
                .then(a.cuts.cmp(&b.cuts)),
        )
    });
    out
}

/// Among schemes with exactly `cores` sub-chains, the one with maximal
/// throughput (minimal bottleneck). `None` if the chain has fewer stages
/// than `cores`.
pub fn best_split(chain: &ChainSpec, cores: usize) -> Option<SplitScheme> {
    enumerate_splits(chain, cores)
        .into_iter()
        .filter(|s| s.cores() == cores)
        .min_by_key(|s| s.bottleneck_cost_ns(chain))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heavy() -> ChainSpec {
        // 20 us three-stage chain.
        ChainSpec::new(&[("acl", 6_000), ("lb", 6_000), ("acct", 8_000)], 0)
    }

    #[test]
    fn service_time_existing_flow() {
        assert_eq!(heavy().service_time_ns(false), 20_000);
        assert_eq!(ChainSpec::single("nf", 5_000).service_time_ns(false), 5_000);
    }

    #[test]
    fn service_time_new_flow_adds_setup() {
        let mut c = ChainSpec::single("nf", 10_000);
        c.per_new_flow_cost_ns = 30_000;
        assert_eq!(c.service_time_ns(true), 40_000);
    }

    #[test]
    fn split_bottleneck_formula() {
        let c = ChainSpec::new(&[("a", 5_000), ("b", 5_000), ("c", 10_000)], 0);
        let s = SplitScheme { cuts: vec![2] }; // [a,b] | [c]
        s.validate(&c).unwrap();
        assert_eq!(s.sub_chain_costs(&c), vec![10_000, 10_000]);
        assert!((split_throughput(&c, &s) - 1e5).abs() < 1e-6);
        assert_eq!(split_latency_ns(&c, &s), 20_000);
    }

    #[test]
    fn unsplit_degenerate() {
        let c = ChainSpec::new(&[("a", 5_000), ("b", 5_000), ("c", 10_000)], 0);
        let s = SplitScheme::unsplit();
        assert!((split_throughput(&c, &s) - 1.0 / 20e-6).abs() < 1e-3);
    }

    /// Independent enumeration oracle: every subset of interior stage
    /// boundaries of size < max_cores, generated by bitmask.
    fn oracle_enumerate(stages: usize, max_cores: usize) -> Vec<Vec<usize>> {
        let interior: Vec<usize> = (1..stages).collect();
        let mut all = Vec::new();
        for mask in 0u32..(1 << interior.len()) {
            let cuts: Vec<usize> = interior
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &b)| b)
                .collect();
            if cuts.len() + 1 <= max_cores {
                all.push(cuts);
            }
        }
        all.sort();
        all
    }

    #[test]
    fn enumerate_matches_bitmask_oracle() {
        let c = ChainSpec::new(&[("a", 5_000), ("b", 5_000), ("c", 10_000)], 0);
        for max_cores in 1..=4 {
            let mut got: Vec<Vec<usize>> = enumerate_splits(&c, max_cores)
                .into_iter()
                .map(|s| s.cuts)
                .collect();
            got.sort();
            assert_eq!(got, oracle_enumerate(3, max_cores));
        }
        // 3-stage chain: {n=1: 1 scheme, n=2: 2 schemes, n=3: 1 scheme}.
        let counts: Vec<usize> = (1..=3)
            .map(|n| {
                enumerate_splits(&c, 3)
                    .iter()
                    .filter(|s| s.cores() == n)
                    .count()
            })
            .collect();
        assert_eq!(counts, vec![1, 2, 1]);
    }

    #[test]
    fn enumerate_two_stage() {
        let c = ChainSpec::new(&[("a", 5_000), ("b", 5_000)], 0);
        assert_eq!(enumerate_splits(&c, 2).len(), 2);
        assert!(enumerate_splits(&c, 1)
            .iter()
            .all(|s| s.cores() == 1));
    }

    #[test]
    fn split_properties() {
        let c = heavy();
        let total = c.total_cost_ns();
        let one_core = split_throughput(&c, &SplitScheme::unsplit());
        for s in enumerate_splits(&c, 3) {
            assert_eq!(split_latency_ns(&c, &s), total);
            let th = split_throughput(&c, &s);
            assert!(th >= one_core - 1e-9);
            if (th - one_core).abs() < 1e-9 {
                assert_eq!(s.bottleneck_cost_ns(&c), total);
            }
        }
    }

    #[test]
    fn invalid_cuts_rejected() {
        let c = heavy();
        assert!(SplitScheme { cuts: vec![0] }.validate(&c).is_err());
        assert!(SplitScheme { cuts: vec![3] }.validate(&c).is_err());
        assert!(SplitScheme { cuts: vec![2, 1] }.validate(&c).is_err());
        assert!(SplitScheme { cuts: vec![1, 2] }.validate(&c).is_ok());
    }

    #[test]
    fn hash_tracks_content() {
        let a = heavy();
        let mut b = heavy();
        assert_eq!(a.hash(), b.hash());
        b.per_new_flow_cost_ns = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
