//! Training procedures for both predictors, plus the analytically safe
//! oracle frontier used by the invariant tests.
//!
//! Short-term training replays a workload through the full simulator
//! with flow migration disabled, collects what each core actually
//! processed in SLO-violating epochs, and takes the monotone envelope.
//! When a run produces no violating epochs the frontier falls back to
//! direct saturation probing. Long-term training runs a flow-count-
//! controlled open-loop generator against a single core and binary
//! searches the highest sustainable rate per flow count, biased low by
//! a two-seed confirmation of the final candidate.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::ChainSpec;
use crate::core_mapper::epoch_length_ns;
use crate::sim::probe::{run_single_core, saturation_capacity, ProbeParams};
use crate::sim::{self, SimParams};
use crate::traffic::{generate, WorkloadSpec};
use crate::{FlowId, Nanos, NS_PER_SEC};

use super::{CapacityFrontier, FrontierFamily, FrontierPoint, PredictorError, RateThresholdTable};

/// Where each trained frontier level came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrontierSource {
    /// Envelope over SLO-violating epochs of a training run.
    Observed,
    /// No violating epochs; saturation probing supplied the points.
    SaturationProbe,
}

#[derive(Debug, Clone)]
pub struct ShortTermOutcome {
    pub family: FrontierFamily,
    pub sources: Vec<(usize, FrontierSource)>,
}

/// Train the per-split-level capacity frontiers by running `workload`
/// through the simulator once per level, with every dedicated core
/// replaced by a level-n core group and migration disabled.
pub fn train_short_term(
    base: &SimParams,
    workload: &WorkloadSpec,
    max_split: usize,
) -> Result<ShortTermOutcome, PredictorError> {
    let trace = generate(workload)
        .map_err(|e| PredictorError::Invalid(format!("training workload: {e}")))?;
    let epoch_ns = epoch_length_ns(base.slo_ns);
    let levels_max = max_split.min(base.chain.stages.len()).max(1);
    let mut levels = std::collections::BTreeMap::new();
    let mut sources = Vec::new();
    for level in 1..=levels_max {
        let mut params = base.clone();
        params.training = true;
        params.training_level = level;
        params.trace_end_ns = workload.duration_ns;
        let metrics = sim::run(&params, &trace);
        let frontier = if metrics.capacity_obs.is_empty() {
            sources.push((level, FrontierSource::SaturationProbe));
            probe_frontier(&base.chain, level, epoch_ns, base.cm.dispatch_cost_ns, base.cm.plan_cost_ns)
        } else {
            sources.push((level, FrontierSource::Observed));
            CapacityFrontier::from_observations(epoch_ns, &metrics.capacity_obs)
        };
        let frontier = if frontier.points.is_empty() {
            probe_frontier(&base.chain, level, epoch_ns, base.cm.dispatch_cost_ns, base.cm.plan_cost_ns)
        } else {
            frontier
        };
        levels.insert(level, frontier);
    }
    let family = FrontierFamily {
        chain_hash: base.chain.hash(),
        epoch_ns,
        slo_ns: base.slo_ns,
        levels,
    };
    family.validate()?;
    Ok(ShortTermOutcome { family, sources })
}

/// Saturation-probe frontier: drive a prefilled queue for one epoch at
/// each flow count on a doubling grid.
pub fn probe_frontier(
    chain: &ChainSpec,
    level: usize,
    epoch_ns: Nanos,
    dispatch_cost_ns: Nanos,
    plan_cost_ns: Nanos,
) -> CapacityFrontier {
    let mut points = Vec::new();
    let mut f = 1u64;
    loop {
        let p = saturation_capacity(chain, level, epoch_ns, dispatch_cost_ns, plan_cost_ns, f);
        if p == 0 {
            break;
        }
        points.push((f, p));
        if f >= 4096 {
            break;
        }
        f *= 2;
    }
    CapacityFrontier::from_observations(epoch_ns, &points)
}

/// Analytically safe frontier for the simulator's own cost model: the
/// epoch budget minus plan overhead, one worst-case carryover batch and
/// one straddling batch, spread over per-packet work (bottleneck plus
/// dispatch) and per-flow setup. Everything a plan admits under this
/// frontier drains within the epoch.
pub fn oracle_family(
    chain: &ChainSpec,
    slo_ns: Nanos,
    plan_cost_ns: Nanos,
    dispatch_cost_ns: Nanos,
    max_split: usize,
    headroom: f64,
) -> FrontierFamily {
    let epoch_ns = epoch_length_ns(slo_ns);
    let setup = chain.per_new_flow_cost_ns;
    let batch = chain.max_batch as u64;
    let levels_max = max_split.min(chain.stages.len()).max(1);
    let mut levels = std::collections::BTreeMap::new();
    for level in 1..=levels_max {
        let b = crate::chain::best_split(chain, level)
            .map(|s| s.bottleneck_cost_ns(chain))
            .unwrap_or(chain.total_cost_ns());
        let fill = chain.total_cost_ns() - b;
        let slack = plan_cost_ns + 2 * (batch * (b + setup + dispatch_cost_ns) + fill);
        let budget = (headroom * epoch_ns as f64) as u64;
        let mut points = Vec::new();
        let mut f = 0u64;
        while f <= 4096 {
            let used = slack + f * setup;
            if used >= budget {
                break;
            }
            let p = (budget - used) / (b + dispatch_cost_ns);
            if p == 0 {
                break;
            }
            points.push(FrontierPoint { f, p });
            f = if f == 0 { 1 } else { f * 2 };
        }
        levels.insert(level, CapacityFrontier { epoch_ns, points });
    }
    FrontierFamily {
        chain_hash: chain.hash(),
        epoch_ns,
        slo_ns,
        levels,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LongTermTrainConfig {
    pub slo_ns: Nanos,
    pub duration_ns: Nanos,
    /// Lifetime of each concurrent flow; churn at f/lifetime flows per
    /// second is what keeps per-flow setup cost visible at steady state.
    pub flow_lifetime_ns: Nanos,
    /// Relative search resolution (0.01 = accept within 1%).
    pub resolution: f64,
    pub dispatch_cost_ns: Nanos,
    pub plan_cost_ns: Nanos,
    pub seed: u64,
}

/// Open-loop churn generator: exactly `f` concurrent flow slots, each
/// slot cycling through finite-lifetime flows paced at rate/f packets
/// per second, with a seed-derived phase per slot.
struct ChurnArrivals {
    heap: BinaryHeap<Reverse<(Nanos, usize)>>,
    slots: Vec<SlotState>,
    gap_ns: Nanos,
    lifetime_ns: Nanos,
    duration_ns: Nanos,
    next_flow_id: u64,
}

struct SlotState {
    next_ns: Nanos,
    flow: FlowId,
    pkts_left: u64,
    pkts_per_flow: u64,
}

impl ChurnArrivals {
    fn new(f: u64, rate_pps: f64, cfg: &LongTermTrainConfig) -> Self {
        let f = f.max(1);
        let gap_ns = ((f as f64 * NS_PER_SEC as f64) / rate_pps).round().max(1.0) as Nanos;
        let pkts_per_flow = (cfg.flow_lifetime_ns / gap_ns).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut slots = Vec::with_capacity(f as usize);
        let mut heap = BinaryHeap::new();
        for i in 0..f {
            // Every slot emits from the start at full pace: phases are
            // spread across one pacing gap, and each slot's first flow
            // begins partially consumed so flow replacements (and their
            // setup charges) stay spread across the lifetime.
            let stagger = (i * cfg.flow_lifetime_ns) / f;
            let jitter = rng.gen_range(0..gap_ns);
            let start = (stagger + jitter) % gap_ns;
            let consumed = ((stagger % cfg.flow_lifetime_ns) / gap_ns) % pkts_per_flow;
            slots.push(SlotState {
                next_ns: start,
                flow: FlowId(i + 1),
                pkts_left: pkts_per_flow - consumed,
                pkts_per_flow,
            });
            heap.push(Reverse((start, i as usize)));
        }
        ChurnArrivals {
            heap,
            slots,
            gap_ns,
            lifetime_ns: cfg.flow_lifetime_ns,
            duration_ns: cfg.duration_ns,
            next_flow_id: f + 1,
        }
    }
}

impl Iterator for ChurnArrivals {
    type Item = (Nanos, FlowId);

    fn next(&mut self) -> Option<Self::Item> {
        let Reverse((t, i)) = self.heap.pop()?;
        if t > self.duration_ns {
            return None;
        }
        let item = (t, self.slots[i].flow);
        let slot = &mut self.slots[i];
        slot.pkts_left -= 1;
        if slot.pkts_left == 0 {
            // Flow dies; its replacement arrives after the same gap.
            slot.flow = FlowId(self.next_flow_id);
            self.next_flow_id += 1;
            slot.pkts_left = slot.pkts_per_flow;
        }
        let _ = self.lifetime_ns;
        slot.next_ns = t + self.gap_ns;
        self.heap.push(Reverse((slot.next_ns, i)));
        Some(item)
    }
}

/// Binary-search the largest sustainable packet rate per flow count.
/// The final candidate must pass twice, with two different generator
/// phases; failing that, the search steps down by the resolution until
/// a rate passes or bottoms out at zero.
pub fn train_long_term(
    chain: &ChainSpec,
    flow_grid: &[u64],
    cfg: &LongTermTrainConfig,
) -> Result<RateThresholdTable, PredictorError> {
    let total = chain.total_cost_ns();
    let per_pkt = total + cfg.dispatch_cost_ns;
    let hi_bound = 1.05 * NS_PER_SEC as f64 / per_pkt as f64;
    let lo_bound = hi_bound / 2048.0;
    let probe = |f: u64, rate: f64, salt: u64| -> bool {
        let params = ProbeParams {
            level: 1,
            dispatch_cost_ns: cfg.dispatch_cost_ns,
            plan_cost_ns: cfg.plan_cost_ns,
            epoch_ns: epoch_length_ns(cfg.slo_ns),
            duration_ns: cfg.duration_ns,
            abort_latency_ns: (10 * cfg.slo_ns).max(100 * per_pkt),
        };
        let gen_cfg = LongTermTrainConfig {
            seed: cfg
                .seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(f)
                .wrapping_add(salt << 32),
            ..*cfg
        };
        let arrivals = ChurnArrivals::new(f, rate, &gen_cfg);
        let r = run_single_core(chain, &params, arrivals);
        !r.aborted && r.p99_ns <= cfg.slo_ns && r.completed > 0
    };

    let mut entries: Vec<(u64, f64)> = Vec::new();
    let mut prev_t = f64::INFINITY;
    for &f in flow_grid {
        if f == 0 {
            continue;
        }
        let t = if !probe(f, lo_bound, 0) {
            // Even the minimum rate violates the SLO: report zero.
            0.0
        } else {
            let mut lo = lo_bound;
            let mut hi = hi_bound;
            while hi - lo > cfg.resolution * hi {
                let mid = 0.5 * (lo + hi);
                if probe(f, mid, 0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            // Bias low: the candidate must also pass a second phase.
            let mut candidate = lo;
            loop {
                if candidate < lo_bound {
                    break 0.0;
                }
                if probe(f, candidate, 0) && probe(f, candidate, 1) {
                    break candidate;
                }
                candidate *= 1.0 - cfg.resolution;
            }
        };
        let t = t.min(prev_t);
        prev_t = t;
        entries.push((f, t));
    }
    let table = RateThresholdTable {
        chain_hash: chain.hash(),
        slo_ns: cfg.slo_ns,
        entries,
    };
    table.validate()?;
    Ok(table)
}
