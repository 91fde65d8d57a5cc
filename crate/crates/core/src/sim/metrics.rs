//! Run metrics: latency samples, activity-based core accounting, drop
//! and alert bookkeeping, and the conservation/ordering/affinity audits
//! that every run must pass.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::{percentile, FlowId, Nanos};

/// Core-usage sample window: active cores are counted per 100 us.
pub const CORE_SAMPLE_WINDOW_NS: Nanos = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DropCause {
    NicOverflow,
    SoftwareOverflow,
}

impl DropCause {
    pub fn name(&self) -> &'static str {
        match self {
            DropCause::NicOverflow => "nic_overflow",
            DropCause::SoftwareOverflow => "software_overflow",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub time_ns: Nanos,
    pub server: usize,
    pub core: usize,
    pub flow: Option<u64>,
    pub reason: String,
}

/// One per-packet latency sample, emitted under verbose reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub flow: u64,
    pub arrival_ns: Nanos,
    pub latency_ns: Nanos,
}

/// Aggregated result of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub slo_ns: Nanos,
    pub seed: u64,
    pub config_hash: u64,
    pub p50_ns: Nanos,
    pub p99_ns: Nanos,
    pub completed: u64,
    pub arrivals: u64,
    pub drops: BTreeMap<String, u64>,
    pub loss_rate: f64,
    pub in_flight: u64,
    pub avg_cores: f64,
    pub alerts: u64,
    pub best_effort_flows: u64,
    pub boost_entries: u64,
    pub boost_denied: u64,
    pub remap_migrations: u64,
    pub on_demand_remaps: u64,
    pub at_risk_epochs: u64,
    pub servers_used: usize,
    pub conservation_ok: bool,
    pub affinity_violations: u64,
    pub order_violations: u64,
    /// Order-sensitive digest of every completion and drop; identical
    /// runs produce identical digests.
    pub event_digest: u64,
}

/// Full metrics of a run: the summary plus raw samples and logs.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub summary: RunSummary,
    pub latencies: Vec<Nanos>,
    pub samples: Option<Vec<LatencySample>>,
    pub alerts: Vec<AlertRecord>,
    pub best_effort_flows: BTreeSet<FlowId>,
    /// (f, p) observations from SLO-violating epochs (training runs).
    pub capacity_obs: Vec<(u64, u64)>,
}

/// Collector threaded through a run. Activity intervals are merged per
/// core on the fly: cores report monotone-start busy spans and each
/// 100 us window touched counts the core as active once.
pub struct Collector {
    trace_end_ns: Nanos,
    slo_ns: Nanos,
    latencies: Vec<Nanos>,
    samples: Option<Vec<LatencySample>>,
    pub arrivals: u64,
    completions: u64,
    drops: BTreeMap<DropCause, u64>,
    window_counts: Vec<u32>,
    core_marks: HashMap<(usize, usize), i64>,
    pub alerts: Vec<AlertRecord>,
    pub best_effort_flows: BTreeSet<FlowId>,
    pub boost_entries: u64,
    pub boost_denied: u64,
    pub remap_migrations: u64,
    pub on_demand_remaps: u64,
    pub at_risk_epochs: u64,
    pub servers_used: usize,
    // Audits.
    last_completed_seq: HashMap<FlowId, u64>,
    serving: HashMap<FlowId, (usize, usize, u32)>,
    pub affinity_violations: u64,
    pub order_violations: u64,
    digest: u64,
    /// (f, p) capacity observations from SLO-violating epochs, filled
    /// only in training runs.
    pub capacity_obs: Vec<(u64, u64)>,
}

impl Collector {
    pub fn new(trace_end_ns: Nanos, slo_ns: Nanos, collect_samples: bool) -> Self {
        let windows = (trace_end_ns / CORE_SAMPLE_WINDOW_NS + 2) as usize;
        Collector {
            trace_end_ns,
            slo_ns,
            latencies: Vec::new(),
            samples: collect_samples.then(Vec::new),
            arrivals: 0,
            completions: 0,
            drops: BTreeMap::new(),
            window_counts: vec![0; windows],
            core_marks: HashMap::new(),
            alerts: Vec::new(),
            best_effort_flows: BTreeSet::new(),
            boost_entries: 0,
            boost_denied: 0,
            remap_migrations: 0,
            on_demand_remaps: 0,
            at_risk_epochs: 0,
            servers_used: 1,
            last_completed_seq: HashMap::new(),
            serving: HashMap::new(),
            affinity_violations: 0,
            order_violations: 0,
            digest: 0xcbf2_9ce4_8422_2325,
            capacity_obs: Vec::new(),
        }
    }

    pub fn slo_ns(&self) -> Nanos {
        self.slo_ns
    }

    fn digest_mix(&mut self, a: u64, b: u64) {
        self.digest ^= crate::mix64(a.wrapping_mul(0x9e37_79b9).wrapping_add(b));
        self.digest = self.digest.wrapping_mul(0x0000_0100_0000_01b3);
    }

    pub fn on_arrival(&mut self) {
        self.arrivals += 1;
    }

    pub fn on_drop(&mut self, cause: DropCause, seq: u64, t: Nanos) {
        *self.drops.entry(cause).or_insert(0) += 1;
        self.digest_mix(seq, t ^ 0xdead);
    }

    pub fn on_completion(&mut self, flow: FlowId, seq: u64, arrival_ns: Nanos, t: Nanos) {
        let latency = t - arrival_ns;
        self.latencies.push(latency);
        if let Some(s) = &mut self.samples {
            s.push(LatencySample {
                flow: flow.0,
                arrival_ns,
                latency_ns: latency,
            });
        }
        self.completions += 1;
        self.digest_mix(seq, t);
        // Per-flow completion order must follow arrival order.
        let last = self.last_completed_seq.entry(flow).or_insert(0);
        if seq < *last {
            self.order_violations += 1;
        } else {
            *last = seq;
        }
    }

    /// A serving entity (queue `slot` on `server`) starts work on a
    /// flow's packet; no other entity may serve the flow concurrently.
    pub fn serving_start(&mut self, flow: FlowId, server: usize, slot: usize) {
        match self.serving.get_mut(&flow) {
            Some((s, q, n)) => {
                if *s != server || *q != slot {
                    self.affinity_violations += 1;
                }
                *n += 1;
            }
            None => {
                self.serving.insert(flow, (server, slot, 1));
            }
        }
    }

    pub fn serving_end(&mut self, flow: FlowId) {
        if let Some((_, _, n)) = self.serving.get_mut(&flow) {
            *n -= 1;
            if *n == 0 {
                self.serving.remove(&flow);
            }
        }
    }

    /// Mark cores busy over [from, to). Starts are non-decreasing per
    /// core, so a running mark pointer per core dedupes windows.
    pub fn mark_active(&mut self, server: usize, core: usize, from: Nanos, to: Nanos) {
        let to = to.min(self.trace_end_ns);
        if from >= to {
            return;
        }
        let w_from = (from / CORE_SAMPLE_WINDOW_NS) as i64;
        let w_to = ((to - 1) / CORE_SAMPLE_WINDOW_NS) as i64;
        let last = self.core_marks.entry((server, core)).or_insert(-1);
        let start = (*last + 1).max(w_from);
        for w in start..=w_to {
            if let Some(c) = self.window_counts.get_mut(w as usize) {
                *c += 1;
            }
        }
        *last = (*last).max(w_to);
    }

    pub fn alert(
        &mut self,
        time_ns: Nanos,
        server: usize,
        core: usize,
        flow: Option<FlowId>,
        reason: &str,
    ) {
        self.alerts.push(AlertRecord {
            time_ns,
            server,
            core,
            flow: flow.map(|f| f.0),
            reason: reason.to_string(),
        });
    }

    pub fn record_capacity(&mut self, f: u64, p: u64) {
        self.capacity_obs.push((f, p));
    }

    /// Close out the run. `queued_scan` is the kernel's direct count of
    /// packets still sitting in queues or in-flight batches at trace
    /// end; conservation holds iff it matches arrivals minus completions
    /// minus drops.
    pub fn finish(
        mut self,
        mode: &str,
        seed: u64,
        config_hash: u64,
        queued_scan: u64,
    ) -> Metrics {
        let drops_total: u64 = self.drops.values().sum();
        let in_flight = self.arrivals - self.completions - drops_total;
        let conservation_ok = in_flight == queued_scan;
        let num_windows = (self.trace_end_ns / CORE_SAMPLE_WINDOW_NS).max(1) as f64;
        let avg_cores = self.window_counts.iter().map(|&c| c as f64).sum::<f64>() / num_windows;
        let mut sorted = self.latencies.clone();
        let p50 = percentile(&mut sorted, 50.0);
        let p99 = percentile(&mut sorted, 99.0);
        let summary = RunSummary {
            mode: mode.to_string(),
            slo_ns: self.slo_ns,
            seed,
            config_hash,
            p50_ns: p50,
            p99_ns: p99,
            completed: self.completions,
            arrivals: self.arrivals,
            drops: self
                .drops
                .iter()
                .map(|(k, v)| (k.name().to_string(), *v))
                .collect(),
            loss_rate: if self.arrivals == 0 {
                0.0
            } else {
                drops_total as f64 / self.arrivals as f64
            },
            in_flight,
            avg_cores,
            alerts: self.alerts.len() as u64,
            best_effort_flows: self.best_effort_flows.len() as u64,
            boost_entries: self.boost_entries,
            boost_denied: self.boost_denied,
            remap_migrations: self.remap_migrations,
            on_demand_remaps: self.on_demand_remaps,
            at_risk_epochs: self.at_risk_epochs,
            servers_used: self.servers_used,
            conservation_ok,
            affinity_violations: self.affinity_violations,
            order_violations: self.order_violations,
            event_digest: self.digest,
        };
        Metrics {
            summary,
            latencies: std::mem::take(&mut self.latencies),
            samples: std::mem::take(&mut self.samples),
            alerts: std::mem::take(&mut self.alerts),
            best_effort_flows: std::mem::take(&mut self.best_effort_flows),
            capacity_obs: std::mem::take(&mut self.capacity_obs),
        }
    }
}
