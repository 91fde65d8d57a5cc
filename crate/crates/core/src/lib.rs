//! Packet-level discrete-event simulation of NFV auto-scaling under
//! microsecond-scale tail-latency SLOs.
//!
//! The library models a rack of multi-core servers running a packet
//! processing chain, with traffic steered at three spatial scales:
//! an ingress mapper assigns destination prefixes to servers, a server
//! mapper packs RSS buckets onto the fewest dedicated cores, and a
//! per-core mapper absorbs microsecond bursts by migrating flows to
//! auxiliary cores or splitting the chain across a core group.
//!
//! Capacity decisions are driven by trained predictors: a short-term
//! ⟨flows, packets⟩-per-epoch frontier and a long-term per-flow-count
//! packet-rate threshold table. Both live in [`predictor`] together
//! with their training procedures.

pub mod chain;
pub mod cli;
pub mod config;
pub mod core_mapper;
pub mod ingress;
pub mod predictor;
pub mod server_mapper;
pub mod sim;
pub mod traffic;

/// Simulated time in nanoseconds since experiment start.
pub type Nanos = u64;

/// Nanoseconds per second, for rate conversions.
pub const NS_PER_SEC: u64 = 1_000_000_000;

/// Opaque flow identifier. Derived from a 5-tuple when ingesting real
/// traces, assigned sequentially by the synthetic generator. Stable for
/// the lifetime of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowId(pub u64);

impl std::fmt::Display for FlowId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// 64-bit FNV-1a over a byte stream. Used for stable content hashes
/// (chain hash, config hash) that must not vary across processes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic 64-bit mix used for RSS bucket hashing. The NIC hash
/// itself is unspecified upstream; what matters here is determinism and
/// reasonable dispersion (splitmix64 finalizer).
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Nearest-rank percentile of an unsorted sample set. `q` in [0, 100].
/// Returns 0 for an empty set.
pub fn percentile(samples: &mut [u64], q: f64) -> u64 {
    if samples.is_empty() {
        return 0;
    }
    samples.sort_unstable();
    let n = samples.len();
    let rank = ((q / 100.0) * n as f64).ceil() as usize;
    samples[rank.clamp(1, n) - 1]
}
