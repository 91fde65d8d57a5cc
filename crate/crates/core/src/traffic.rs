//! Trace ingestion and synthetic workload generation.
//!
//! Traces are flat CSV files of per-packet records, sorted by arrival
//! time. The generator produces a Poisson base load plus two kinds of
//! bursts: whales (one flow at a sustained instantaneous packet rate)
//! and minnow storms (many new flows first arriving inside a short
//! window). Output is fully determined by the spec and its seed.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{FlowId, Nanos, NS_PER_SEC};

/// One packet of simulated work. `size` is metadata only; the default
/// chain model charges size-independent service times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketRecord {
    pub arrival_ns: Nanos,
    pub flow: FlowId,
    pub dst_addr: u32,
    pub size: u32,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace is empty")]
    Empty,
    #[error("line {0}: malformed record: {1}")]
    Malformed(usize, String),
    #[error("line {0}: arrival time {1} precedes previous record ({2})")]
    OutOfOrder(usize, Nanos, Nanos),
}

/// Parse a CSV trace: `arrival_ns,flow_id,dst_addr,size`, one packet per
/// line, an optional header line, LF endings. Input must already be
/// sorted by arrival time; out-of-order records are an error, not a
/// silent re-sort.
pub fn parse_trace(path: &Path) -> Result<Vec<PacketRecord>, TraceError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    let mut prev: Option<Nanos> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if idx == 0 && line.starts_with("arrival") {
            continue; // header
        }
        let mut parts = line.split(',');
        let mut field = |name: &str| {
            parts
                .next()
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| TraceError::Malformed(lineno, format!("missing field {name}")))
        };
        let arrival_ns: Nanos = field("arrival_ns")?
            .parse()
            .map_err(|e| TraceError::Malformed(lineno, format!("arrival_ns: {e}")))?;
        let flow: u64 = field("flow_id")?
            .parse()
            .map_err(|e| TraceError::Malformed(lineno, format!("flow_id: {e}")))?;
        let dst_addr: u32 = field("dst_addr")?
            .parse()
            .map_err(|e| TraceError::Malformed(lineno, format!("dst_addr: {e}")))?;
        let size: u32 = field("size")?
            .parse()
            .map_err(|e| TraceError::Malformed(lineno, format!("size: {e}")))?;
        if let Some(p) = prev {
            if arrival_ns < p {
                return Err(TraceError::OutOfOrder(lineno, arrival_ns, p));
            }
        }
        prev = Some(arrival_ns);
        records.push(PacketRecord {
            arrival_ns,
            flow: FlowId(flow),
            dst_addr,
            size,
        });
    }
    if records.is_empty() {
        return Err(TraceError::Empty);
    }
    Ok(records)
}

/// Write records in the same CSV format `parse_trace` reads.
pub fn write_trace(path: &Path, records: &[PacketRecord]) -> Result<(), TraceError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "arrival_ns,flow_id,dst_addr,size")?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.arrival_ns, r.flow.0, r.dst_addr, r.size)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-flow packet count distribution for generated flows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PacketCountDist {
    Fixed { count: u64 },
    /// Geometric on {1, 2, ...} with the given mean.
    Geometric { mean: f64 },
}

impl PacketCountDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match *self {
            PacketCountDist::Fixed { count } => count.max(1),
            PacketCountDist::Geometric { mean } => {
                let p = 1.0 / mean.max(1.0);
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                1 + (u.ln() / (1.0 - p).ln()).floor() as u64
            }
        }
    }
}

/// A single flow sustaining `rate_pps` for `duration_ns`, paced exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhaleSpec {
    pub start_ns: Nanos,
    pub duration_ns: Nanos,
    pub rate_pps: f64,
}

/// `flows` new flows whose first packets all arrive in
/// `[start_ns, start_ns + window_ns]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StormSpec {
    pub start_ns: Nanos,
    pub window_ns: Nanos,
    pub flows: u64,
}

/// Full description of a synthetic workload. `seed` determines the
/// output byte-for-byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    /// Poisson flow arrival rate of the base load, flows/s.
    pub flow_rate: f64,
    pub packets_per_flow: PacketCountDist,
    /// Per-flow pacing rate, packets/s.
    pub pacing_pps: f64,
    #[serde(default)]
    pub whales: Vec<WhaleSpec>,
    #[serde(default)]
    pub minnow_storms: Vec<StormSpec>,
    /// Pace every flow exactly: intra-flow gaps are never shorter than
    /// the pacing interval, so burstiness comes only from flow arrivals.
    pub shape_flows: bool,
    pub duration_ns: Nanos,
    pub seed: u64,
    /// Destination addresses are drawn uniformly from [0, addr_pool).
    #[serde(default = "default_addr_pool")]
    pub addr_pool: u32,
}

fn default_addr_pool() -> u32 {
    1 << 16
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("workload spec invalid: {0}")]
    Invalid(String),
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::Invalid(m.to_string()));
        if self.flow_rate < 0.0 || !self.flow_rate.is_finite() {
            return bad("flow_rate must be finite and >= 0");
        }
        if self.pacing_pps <= 0.0 {
            return bad("pacing_pps must be > 0");
        }
        if self.duration_ns == 0 {
            return bad("duration_ns must be > 0");
        }
        if self.addr_pool == 0 {
            return bad("addr_pool must be > 0");
        }
        for w in &self.whales {
            if w.rate_pps <= 0.0 || w.duration_ns == 0 {
                return bad("whale rate and duration must be > 0");
            }
        }
        for s in &self.minnow_storms {
            if s.flows == 0 || s.window_ns == 0 {
                return bad("storm flows and window must be > 0");
            }
        }
        Ok(())
    }
}

/// Generate the packet trace described by `spec`. Deterministic given
/// the seed; records come back sorted by arrival time.
pub fn generate(spec: &WorkloadSpec) -> Result<Vec<PacketRecord>, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records: Vec<PacketRecord> = Vec::new();
    let mut next_flow: u64 = 1;
    let mut new_flow = |rng: &mut ChaCha8Rng| {
        let id = FlowId(next_flow);
        next_flow += 1;
        let addr = rng.gen_range(0..spec.addr_pool);
        (id, addr)
    };

    let pacing_gap = (NS_PER_SEC as f64 / spec.pacing_pps).round().max(1.0) as u64;
    let emit_flow =
        |records: &mut Vec<PacketRecord>, rng: &mut ChaCha8Rng, flow, addr, first_ns: Nanos| {
            let count = spec.packets_per_flow.sample(rng);
            let mut t = first_ns;
            for i in 0..count {
                if t > spec.duration_ns {
                    break;
                }
                records.push(PacketRecord {
                    arrival_ns: t,
                    flow,
                    dst_addr: addr,
                    size: 64,
                });
                let gap = if spec.shape_flows {
                    pacing_gap
                } else {
                    // Unshaped: exponential gaps at the pacing rate, but
                    // never below 1 ns to keep records distinct in time.
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    ((-u.ln()) * pacing_gap as f64).round().max(1.0) as u64
                };
                let _ = i;
                t = t.saturating_add(gap);
            }
        };

    // Base load: Poisson flow arrivals.
    if spec.flow_rate > 0.0 {
        let mean_gap = NS_PER_SEC as f64 / spec.flow_rate;
        let mut t = 0.0f64;
        loop {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            t += -u.ln() * mean_gap;
            if t >= spec.duration_ns as f64 {
                break;
            }
            let (flow, addr) = new_flow(&mut rng);
            emit_flow(&mut records, &mut rng, flow, addr, t as Nanos);
        }
    }

    // Whales: one flow each, paced exactly at the target rate so the
    // window carries >= rate x duration packets.
    for w in &spec.whales {
        let (flow, addr) = new_flow(&mut rng);
        let gap = (NS_PER_SEC as f64 / w.rate_pps).max(1.0);
        let count = (w.rate_pps * w.duration_ns as f64 / NS_PER_SEC as f64).ceil() as u64;
        for i in 0..count {
            let t = w.start_ns + (i as f64 * gap) as Nanos;
            if t > spec.duration_ns {
                break;
            }
            records.push(PacketRecord {
                arrival_ns: t,
                flow,
                dst_addr: addr,
                size: 64,
            });
        }
    }

    // Minnow storms: exactly N distinct new flows first arriving inside
    // the window; each then runs like a base flow.
    for s in &spec.minnow_storms {
        for _ in 0..s.flows {
            let (flow, addr) = new_flow(&mut rng);
            let first = s.start_ns + rng.gen_range(0..=s.window_ns);
            emit_flow(&mut records, &mut rng, flow, addr, first);
        }
    }

    // Stable total order: time, then flow, preserving per-flow emission
    // order (each flow's packets were pushed in time order).
    records.sort_by_key(|r| (r.arrival_ns, r.flow.0));
    Ok(records)
}

/// Aggregate statistics of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub flow_count: u64,
    pub packet_count: u64,
    /// Maximum per-flow packet rate over any sliding window, packets/s.
    pub max_flow_rate: f64,
    /// Flow arrivals per second over the trace span.
    pub flow_arrival_rate: f64,
    /// Sliding window used for `max_flow_rate`, nanoseconds.
    pub window_ns: Nanos,
}

/// Default sliding window for rate statistics: 10 ms, the same window
/// that defines a whale burst.
pub const DEFAULT_STATS_WINDOW_NS: Nanos = 10_000_000;

/// Compute exact counts and sliding-window rates for a sorted trace.
pub fn compute_stats(trace: &[PacketRecord], window_ns: Nanos) -> TraceStats {
    let mut per_flow: std::collections::BTreeMap<FlowId, Vec<Nanos>> =
        std::collections::BTreeMap::new();
    for r in trace {
        per_flow.entry(r.flow).or_default().push(r.arrival_ns);
    }
    let mut max_in_window = 0u64;
    for times in per_flow.values() {
        // Two-pointer max count of packets inside any window of width
        // `window_ns` (inclusive bounds).
        let mut lo = 0usize;
        for hi in 0..times.len() {
            while times[hi] - times[lo] > window_ns {
                lo += 1;
            }
            max_in_window = max_in_window.max((hi - lo + 1) as u64);
        }
    }
    let span_ns = match (trace.first(), trace.last()) {
        (Some(f), Some(l)) => (l.arrival_ns - f.arrival_ns).max(1),
        _ => 1,
    };
    TraceStats {
        flow_count: per_flow.len() as u64,
        packet_count: trace.len() as u64,
        max_flow_rate: max_in_window as f64 * NS_PER_SEC as f64 / window_ns as f64,
        flow_arrival_rate: per_flow.len() as f64 * NS_PER_SEC as f64 / span_ns as f64,
        window_ns,
    }
}
