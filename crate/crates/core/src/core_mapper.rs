//! Per-core burst mitigation at epoch granularity.
//!
//! Each dedicated core tracks per-queue and per-flow packet counters.
//! At every epoch boundary (half the latency SLO) the core mapper turns
//! the counters into fresh statistics, checks each software queue
//! against the capacity frontier at its split level, and produces a
//! migration plan: retained flows, first-fit moves into existing
//! borrowed queues (raising the split level when needed), newly opened
//! queues backed by auxiliary cores, and whale flows that need chain
//! splitting or best-effort treatment.

use std::collections::BTreeMap;

use crate::predictor::FrontierFamily;
use crate::{FlowId, Nanos};

/// The core mapper's decision interval is half the SLO: a backlog
/// counted at one boundary and drained by the next keeps every packet
/// within two epochs of its arrival.
pub fn epoch_length_ns(slo_ns: Nanos) -> Nanos {
    slo_ns / 2
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoreMapperConfig {
    pub slo_ns: Nanos,
    /// Largest core-group size a chain may be split across.
    pub max_split: usize,
    /// Fixed simulated cost of running the per-epoch plan, charged to
    /// the dedicated core.
    pub plan_cost_ns: Nanos,
}

impl CoreMapperConfig {
    pub fn epoch_ns(&self) -> Nanos {
        epoch_length_ns(self.slo_ns)
    }
}

/// Per-queue statistics for one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueStats {
    /// Queue slot on the owning core; slot 0 is the local queue.
    pub slot: usize,
    /// Current split level of the serving core group (1 = unsplit).
    pub level: usize,
    pub pkts_arrived: u64,
    pub pkts_processed: u64,
    pub pkts_queued: u64,
    /// Flows mapped to this queue with a non-zero task size.
    pub flows_queued: u64,
}

/// Per-flow statistics for one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowStats {
    pub flow: FlowId,
    /// Queued packets: the flow's task size for planning.
    pub task_size: u64,
    pub target_queue: usize,
    /// The flow has a packet inside the in-flight batch; it cannot be
    /// migrated this epoch without breaking flow affinity.
    pub in_service: bool,
}

/// Statistics snapshot produced at an epoch boundary. Flows are sorted
/// ascending by task size, the planning order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EpochStats {
    pub queues: Vec<QueueStats>,
    pub flows: Vec<FlowStats>,
}

#[derive(Debug, Clone, Default)]
struct QueueCounters {
    arrived: u64,
    processed: u64,
    queued: u64,
    level: usize,
    alive: bool,
}

#[derive(Debug, Clone, Default)]
struct FlowCounters {
    arrived: u64,
    processed: u64,
    queued: u64,
    target: usize,
    in_service: bool,
}

/// Runtime counter state for one core's queues and flows.
///
/// Flow counters advance at NIC arrival time, so a flow's task size
/// covers packets still sitting in the NIC queue; queue counters advance
/// at software-queue enqueue time and track physical occupancy. At each
/// epoch boundary `end_epoch` folds the per-epoch counters into the
/// carried queued counts, emits the statistics, and resets.
#[derive(Debug, Clone, Default)]
pub struct CoreStatsTracker {
    queues: Vec<QueueCounters>,
    flows: BTreeMap<FlowId, FlowCounters>,
}

impl CoreStatsTracker {
    pub fn new() -> Self {
        let mut t = CoreStatsTracker::default();
        t.set_queue(0, 1, true);
        t
    }

    pub fn set_queue(&mut self, slot: usize, level: usize, alive: bool) {
        if self.queues.len() <= slot {
            self.queues.resize(slot + 1, QueueCounters::default());
        }
        self.queues[slot].level = level;
        self.queues[slot].alive = alive;
    }

    pub fn set_level(&mut self, slot: usize, level: usize) {
        if let Some(q) = self.queues.get_mut(slot) {
            q.level = level;
        }
    }

    /// A packet of `flow` arrived at the NIC. New flows default to the
    /// local queue; established targets are left alone.
    pub fn on_flow_arrival(&mut self, flow: FlowId) {
        self.flows.entry(flow).or_default().arrived += 1;
    }

    /// Packets physically entered software queue `slot`.
    pub fn on_enqueued(&mut self, slot: usize, count: u64) {
        if let Some(q) = self.queues.get_mut(slot) {
            q.arrived += count;
        }
    }

    /// One packet of `flow` completed processing on queue `slot`.
    pub fn on_processed(&mut self, flow: FlowId, slot: usize) {
        if let Some(q) = self.queues.get_mut(slot) {
            q.processed += 1;
        }
        if let Some(fc) = self.flows.get_mut(&flow) {
            fc.processed += 1;
        }
    }

    /// Point a flow's future packets at another queue.
    pub fn retarget(&mut self, flow: FlowId, to_slot: usize) {
        self.flows.entry(flow).or_default().target = to_slot;
    }

    /// Account a physical move of queued packets between queues.
    pub fn on_packets_moved(&mut self, from: usize, to: usize, count: u64) {
        if let Some(q) = self.queues.get_mut(from) {
            q.queued = q.queued.saturating_sub(count);
        }
        if let Some(q) = self.queues.get_mut(to) {
            q.queued += count;
        }
    }

    /// A packet counted at NIC arrival was dropped before ever entering
    /// a software queue; cancel it from the flow's task size.
    pub fn on_dropped_before_enqueue(&mut self, flow: FlowId) {
        if let Some(fc) = self.flows.get_mut(&flow) {
            fc.processed += 1;
        }
    }

    /// A packet already carried in `slot`'s queued count was dropped.
    pub fn on_queued_dropped(&mut self, flow: FlowId, slot: usize) {
        if let Some(q) = self.queues.get_mut(slot) {
            q.queued = q.queued.saturating_sub(1);
        }
        if let Some(fc) = self.flows.get_mut(&flow) {
            fc.processed += 1;
        }
    }

    pub fn set_in_service(&mut self, flow: FlowId, v: bool) {
        if let Some(fc) = self.flows.get_mut(&flow) {
            fc.in_service = v;
        }
    }

    pub fn target_of(&self, flow: FlowId) -> Option<usize> {
        self.flows.get(&flow).map(|f| f.target)
    }

    pub fn flows_targeting(&self, slot: usize) -> Vec<FlowId> {
        self.flows
            .iter()
            .filter(|(_, fc)| fc.target == slot)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn has_flows(&self) -> bool {
        !self.flows.is_empty()
    }

    /// Close the epoch: fold per-epoch arrivals and completions into the
    /// carried queued counts, emit statistics over live queues, reset
    /// the counters, and forget flows that are idle and fully drained.
    pub fn end_epoch(&mut self) -> EpochStats {
        let mut flows: Vec<FlowStats> = Vec::new();
        let mut per_queue_flows: BTreeMap<usize, u64> = BTreeMap::new();
        let mut dead: Vec<FlowId> = Vec::new();
        for (id, fc) in self.flows.iter_mut() {
            let active = fc.arrived > 0;
            fc.queued = (fc.queued + fc.arrived).saturating_sub(fc.processed);
            fc.arrived = 0;
            fc.processed = 0;
            if fc.queued > 0 {
                *per_queue_flows.entry(fc.target).or_insert(0) += 1;
            }
            if active || fc.queued > 0 || fc.in_service {
                flows.push(FlowStats {
                    flow: *id,
                    task_size: fc.queued,
                    target_queue: fc.target,
                    in_service: fc.in_service,
                });
            } else {
                dead.push(*id);
            }
        }
        for id in dead {
            self.flows.remove(&id);
        }
        flows.sort_by_key(|f| (f.task_size, f.flow));

        let queues = self
            .queues
            .iter_mut()
            .enumerate()
            .filter(|(_, q)| q.alive)
            .map(|(slot, q)| {
                q.queued = (q.queued + q.arrived).saturating_sub(q.processed);
                let stats = QueueStats {
                    slot,
                    level: q.level.max(1),
                    pkts_arrived: q.arrived,
                    pkts_processed: q.processed,
                    pkts_queued: q.queued,
                    flows_queued: per_queue_flows.get(&slot).copied().unwrap_or(0),
                };
                q.arrived = 0;
                q.processed = 0;
                stats
            })
            .collect();
        EpochStats { queues, flows }
    }

    /// Reset a released queue slot.
    pub fn clear_queue(&mut self, slot: usize) {
        if let Some(q) = self.queues.get_mut(slot) {
            *q = QueueCounters {
                level: 1,
                alive: false,
                ..Default::default()
            };
        }
    }
}

/// A flow move into an existing queue, possibly raising its split level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowMove {
    pub flow: FlowId,
    pub to_slot: usize,
    pub new_level: usize,
}

/// A newly opened borrowed queue and the flows it starts with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewQueue {
    pub level: usize,
    pub flows: Vec<FlowId>,
    pub packets: u64,
}

/// Reason attached to an operator alert.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlertReason {
    /// No profiled split scheme can absorb the flow's backlog.
    WhaleBeyondProfiles,
    /// The auxiliary pool ran dry while absorbing a burst.
    AuxPoolExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanAlert {
    pub flow: Option<FlowId>,
    pub reason: AlertReason,
}

/// Outcome of one epoch's burst absorption at a dedicated core.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MigrationPlan {
    pub moves: Vec<FlowMove>,
    pub new_queues: Vec<NewQueue>,
    /// Whale flows beyond every profiled scheme, kept on a dedicated
    /// queue and processed best-effort.
    pub best_effort: Vec<FlowId>,
    pub alerts: Vec<PlanAlert>,
    /// Auxiliary cores needed to execute the plan.
    pub aux_cores_requested: usize,
    /// The pool could not cover the plan; some flows stayed local.
    pub at_risk: bool,
}

impl MigrationPlan {
    pub fn is_empty(&self) -> bool {
        self.moves.is_empty() && self.new_queues.is_empty() && self.best_effort.is_empty()
    }
}

/// Pick the smallest core-group size whose frontier admits a single
/// flow with backlog `p`. `None` means no profiled scheme suffices and
/// the flow runs best-effort.
pub fn plan_whale_split(p: u64, family: &FrontierFamily, max_split: usize) -> Option<usize> {
    for n in 1..=max_split {
        if let Some(fr) = family.level(n) {
            if fr.admits(1, p) {
                return Some(n);
            }
        }
    }
    None
}

/// Absorb this epoch's backlog: greedily retain what each queue can
/// drain at its split level, first-fit the overflow into other queues
/// (raising levels up to `max_split`), open new borrowed queues for the
/// rest, and fall back to whale splitting or best-effort for flows that
/// fit nowhere. `aux_available` bounds how many new cores the plan may
/// request.
pub fn absorb_bursts(
    stats: &EpochStats,
    family: &FrontierFamily,
    cfg: &CoreMapperConfig,
    aux_available: usize,
) -> MigrationPlan {
    let mut plan = MigrationPlan::default();
    let mut aux_left = aux_available;

    // Tentative load per existing queue as the plan fills it.
    #[derive(Clone)]
    struct Load {
        slot: usize,
        level: usize,
        flows: u64,
        packets: u64,
    }
    let mut loads: Vec<Load> = stats
        .queues
        .iter()
        .map(|q| Load {
            slot: q.slot,
            level: q.level,
            flows: 0,
            packets: 0,
        })
        .collect();

    // Flows forced to stay put: in-service this instant, or zero task.
    let mut overflow: Vec<&FlowStats> = Vec::new();
    for fs in &stats.flows {
        let load = loads
            .iter_mut()
            .find(|l| l.slot == fs.target_queue)
            .expect("flow targets unknown queue");
        if fs.task_size == 0 || fs.in_service {
            load.flows += u64::from(fs.task_size > 0);
            load.packets += fs.task_size;
            continue;
        }
        let fr = family
            .level(load.level)
            .unwrap_or_else(|| family.level1());
        if fr.admits(load.flows + 1, load.packets + fs.task_size) {
            load.flows += 1;
            load.packets += fs.task_size;
        } else {
            overflow.push(fs);
        }
    }

    // First-fit migration of overflow flows, smallest task first (the
    // input order), lowest queue slot first, trying split levels from
    // the queue's current level upward.
    for fs in overflow {
        let mut placed = false;
        for load in loads.iter_mut() {
            if load.slot == fs.target_queue {
                continue;
            }
            for level in load.level..=cfg.max_split {
                let Some(fr) = family.level(level) else { continue };
                if fr.admits(load.flows + 1, load.packets + fs.task_size) {
                    let extra_cores = level - load.level;
                    if extra_cores > aux_left {
                        continue;
                    }
                    aux_left -= extra_cores;
                    plan.aux_cores_requested += extra_cores;
                    load.level = level;
                    load.flows += 1;
                    load.packets += fs.task_size;
                    plan.moves.push(FlowMove {
                        flow: fs.flow,
                        to_slot: load.slot,
                        new_level: level,
                    });
                    placed = true;
                    break;
                }
            }
            if placed {
                break;
            }
        }
        if placed {
            continue;
        }

        // Nothing existing fits: open a fresh queue at the minimal
        // feasible split level (level 1 for ordinary flows; >1 is a
        // whale needing a pipelined core group).
        match plan_whale_split(fs.task_size, family, cfg.max_split) {
            Some(level) if level <= aux_left => {
                aux_left -= level;
                plan.aux_cores_requested += level;
                let slot = loads.len();
                loads.push(Load {
                    slot,
                    level,
                    flows: 1,
                    packets: fs.task_size,
                });
                plan.new_queues.push(NewQueue {
                    level,
                    flows: vec![fs.flow],
                    packets: fs.task_size,
                });
            }
            Some(_) => {
                // Feasible in principle, but the pool is dry.
                plan.at_risk = true;
                plan.alerts.push(PlanAlert {
                    flow: Some(fs.flow),
                    reason: AlertReason::AuxPoolExhausted,
                });
            }
            None => {
                // Beyond every profiled scheme: dedicated queue at the
                // deepest available split, best-effort, and an alert.
                let level = cfg.max_split.min(family.max_level()).max(1);
                plan.best_effort.push(fs.flow);
                plan.alerts.push(PlanAlert {
                    flow: Some(fs.flow),
                    reason: AlertReason::WhaleBeyondProfiles,
                });
                if level <= aux_left {
                    aux_left -= level;
                    plan.aux_cores_requested += level;
                    let slot = loads.len();
                    loads.push(Load {
                        slot,
                        level,
                        flows: 1,
                        packets: fs.task_size,
                    });
                    plan.new_queues.push(NewQueue {
                        level,
                        flows: vec![fs.flow],
                        packets: fs.task_size,
                    });
                } else {
                    plan.at_risk = true;
                }
            }
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{CapacityFrontier, FrontierPoint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frontier(points: &[(u64, u64)]) -> CapacityFrontier {
        CapacityFrontier {
            epoch_ns: 100_000,
            points: points.iter().map(|&(f, p)| FrontierPoint { f, p }).collect(),
        }
    }

    fn family(levels: &[(usize, &[(u64, u64)])]) -> FrontierFamily {
        FrontierFamily {
            chain_hash: 0,
            epoch_ns: 100_000,
            slo_ns: 200_000,
            levels: levels
                .iter()
                .map(|(n, pts)| (*n, frontier(pts)))
                .collect(),
        }
    }

    fn cfg() -> CoreMapperConfig {
        CoreMapperConfig {
            slo_ns: 200_000,
            max_split: 3,
            plan_cost_ns: 3_000,
        }
    }

    #[test]
    fn epoch_is_half_slo() {
        assert_eq!(epoch_length_ns(200_000), 100_000);
        assert_eq!(epoch_length_ns(500_000), 250_000);
        assert_eq!(epoch_length_ns(100_000), 50_000);
    }

    #[test]
    fn stats_drained_queue() {
        let mut t = CoreStatsTracker::new();
        for i in 0..40 {
            t.on_flow_arrival(FlowId(i % 4));
            t.on_enqueued(0, 1);
        }
        for i in 0..40 {
            t.on_processed(FlowId(i % 4), 0);
        }
        let s = t.end_epoch();
        assert_eq!(s.queues[0].pkts_queued, 0);
        assert_eq!(s.queues[0].flows_queued, 0);
        assert_eq!(s.queues[0].pkts_arrived, 40);
        assert_eq!(s.queues[0].pkts_processed, 40);
    }

    #[test]
    fn stats_single_backlogged_flow() {
        let mut t = CoreStatsTracker::new();
        for _ in 0..100 {
            t.on_flow_arrival(FlowId(9));
            t.on_enqueued(0, 1);
        }
        for _ in 0..60 {
            t.on_processed(FlowId(9), 0);
        }
        let s = t.end_epoch();
        assert_eq!(s.queues[0].pkts_queued, 40);
        assert_eq!(s.queues[0].flows_queued, 1);
        assert_eq!(s.flows.len(), 1);
        assert_eq!(s.flows[0].task_size, 40);
        // Counters reset; queued carries into the next epoch.
        let s2 = t.end_epoch();
        assert_eq!(s2.queues[0].pkts_arrived, 0);
        assert_eq!(s2.queues[0].pkts_queued, 40);
    }

    /// Replay-and-count oracle: feed a random multi-queue event stream,
    /// recount queue occupancy naively, compare.
    #[test]
    fn stats_match_naive_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mut t = CoreStatsTracker::new();
            let queues = rng.gen_range(1..4usize);
            for slot in 0..queues {
                t.set_queue(slot, 1, true);
            }
            // naive[flow] = (queue, outstanding)
            let mut naive: BTreeMap<u64, (usize, u64)> = BTreeMap::new();
            let mut epochs_left = rng.gen_range(1..4);
            while epochs_left > 0 {
                for _ in 0..rng.gen_range(0..60) {
                    let f = rng.gen_range(0..8u64);
                    let slot = naive
                        .get(&f)
                        .map(|&(s, _)| s)
                        .unwrap_or_else(|| rng.gen_range(0..queues));
                    if naive.get(&f).is_none() {
                        t.retarget(FlowId(f), slot);
                    }
                    let e = naive.entry(f).or_insert((slot, 0));
                    e.1 += 1;
                    t.on_flow_arrival(FlowId(f));
                    t.on_enqueued(e.0, 1);
                    // Randomly process some outstanding packet of some flow.
                    if rng.gen_bool(0.5) {
                        let candidates: Vec<u64> = naive
                            .iter()
                            .filter(|(_, (_, q))| *q > 0)
                            .map(|(f, _)| *f)
                            .collect();
                        if !candidates.is_empty() {
                            let pick = candidates[rng.gen_range(0..candidates.len())];
                            let e = naive.get_mut(&pick).unwrap();
                            e.1 -= 1;
                            t.on_processed(FlowId(pick), e.0);
                        }
                    }
                }
                let s = t.end_epoch();
                let mut per_queue = vec![0u64; queues];
                let mut per_queue_flows = vec![0u64; queues];
                for (_, (slot, q)) in &naive {
                    per_queue[*slot] += q;
                    per_queue_flows[*slot] += u64::from(*q > 0);
                }
                for q in &s.queues {
                    assert_eq!(q.pkts_queued, per_queue[q.slot], "queue {}", q.slot);
                    assert_eq!(q.flows_queued, per_queue_flows[q.slot]);
                }
                epochs_left -= 1;
            }
        }
    }

    #[test]
    fn absorb_no_burst_is_empty_plan() {
        let fam = family(&[(1, &[(55, 64)])]);
        let stats = EpochStats {
            queues: vec![QueueStats {
                slot: 0,
                level: 1,
                pkts_arrived: 10,
                pkts_processed: 10,
                pkts_queued: 30,
                flows_queued: 3,
            }],
            flows: (0..3)
                .map(|i| FlowStats {
                    flow: FlowId(i),
                    task_size: 10,
                    target_queue: 0,
                    in_service: false,
                })
                .collect(),
        };
        let plan = absorb_bursts(&stats, &fam, &cfg(), 8);
        assert!(plan.is_empty());
        assert!(!plan.at_risk);
    }

    #[test]
    fn absorb_overflow_recruits_two_or_more_queues() {
        // Backlog <55, 220> against a frontier point <55, 64>: the local
        // core keeps at most 64 packets, so at least two borrowed queues
        // are needed for the residual 156+.
        let fam = family(&[(1, &[(55, 64)])]);
        let flows: Vec<FlowStats> = (0..55)
            .map(|i| FlowStats {
                flow: FlowId(i),
                task_size: 4,
                target_queue: 0,
                in_service: false,
            })
            .collect();
        let stats = EpochStats {
            queues: vec![QueueStats {
                slot: 0,
                level: 1,
                pkts_arrived: 220,
                pkts_processed: 0,
                pkts_queued: 220,
                flows_queued: 55,
            }],
            flows,
        };
        let plan = absorb_bursts(&stats, &fam, &cfg(), 8);
        assert!(plan.new_queues.len() >= 2, "plan: {plan:?}");
        // Conservation: retained + moved + new-queue packets = 220.
        let moved: u64 = plan.new_queues.iter().map(|q| q.packets).sum();
        let retained = 220
            - moved
            - plan
                .moves
                .iter()
                .map(|_| 4u64)
                .sum::<u64>();
        assert!(fam.level1().admits(55 - plan.new_queues.iter().map(|q| q.flows.len() as u64).sum::<u64>(), retained));
    }

    #[test]
    fn absorb_randomized_postcondition() {
        let fam = family(&[(1, &[(8, 80), (16, 48), (32, 24)]), (2, &[(8, 160), (32, 64)]), (3, &[(8, 240), (32, 120)])]);
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let nflows = rng.gen_range(1..=24usize);
            let mut flows: Vec<FlowStats> = (0..nflows)
                .map(|i| FlowStats {
                    flow: FlowId(i as u64),
                    task_size: rng.gen_range(0..=40u64),
                    target_queue: 0,
                    in_service: false,
                })
                .collect();
            flows.sort_by_key(|f| (f.task_size, f.flow));
            let pkts: u64 = flows.iter().map(|f| f.task_size).sum();
            let fqueued = flows.iter().filter(|f| f.task_size > 0).count() as u64;
            let stats = EpochStats {
                queues: vec![QueueStats {
                    slot: 0,
                    level: 1,
                    pkts_arrived: pkts,
                    pkts_processed: 0,
                    pkts_queued: pkts,
                    flows_queued: fqueued,
                }],
                flows,
            };
            let plan = absorb_bursts(&stats, &fam, &c, 64);
            assert!(!plan.at_risk);

            // Audit: replay the plan and check every queue admits its
            // final (flows, packets) at its final level.
            let mut queues: BTreeMap<usize, (usize, u64, u64)> = BTreeMap::new();
            queues.insert(0, (1, 0, 0));
            for nq in &plan.new_queues {
                let slot = queues.len();
                queues.insert(slot, (nq.level, nq.flows.len() as u64, nq.packets));
            }
            for fs in &stats.flows {
                if fs.task_size == 0 {
                    continue;
                }
                if plan.new_queues.iter().any(|q| q.flows.contains(&fs.flow)) {
                    continue;
                }
                if let Some(mv) = plan.moves.iter().find(|m| m.flow == fs.flow) {
                    let q = queues.get_mut(&mv.to_slot).unwrap();
                    q.0 = q.0.max(mv.new_level);
                    q.1 += 1;
                    q.2 += fs.task_size;
                } else if !plan.best_effort.contains(&fs.flow) {
                    let q = queues.get_mut(&0).unwrap();
                    q.1 += 1;
                    q.2 += fs.task_size;
                }
            }
            for (slot, (level, f, p)) in &queues {
                let fr = fam.level(*level).unwrap();
                assert!(
                    fr.admits(*f, *p),
                    "queue {slot} at level {level} holds ({f},{p}) beyond frontier"
                );
            }
        }
    }

    #[test]
    fn whale_split_minimal_level() {
        // Level-2 pipeline doubles the packet budget; a backlog just above
        // one core's capacity picks n=2.
        let fam = family(&[(1, &[(1, 100)]), (2, &[(1, 200)]), (3, &[(1, 300)])]);
        assert_eq!(plan_whale_split(101, &fam, 3), Some(2));
        assert_eq!(plan_whale_split(100, &fam, 3), Some(1));
        assert_eq!(plan_whale_split(250, &fam, 3), Some(3));
        assert_eq!(plan_whale_split(301, &fam, 3), None);
    }

    #[test]
    fn whale_split_matches_exhaustive_scan() {
        let fam = family(&[(1, &[(1, 96)]), (2, &[(1, 180)]), (3, &[(1, 260)])]);
        for p in 1..300u64 {
            let expect = (1..=3usize)
                .filter(|n| fam.level(*n).unwrap().admits(1, p))
                .min();
            assert_eq!(plan_whale_split(p, &fam, 3), expect, "p={p}");
        }
    }

    #[test]
    fn whale_beyond_profiles_goes_best_effort_with_alert() {
        let fam = family(&[(1, &[(1, 50)]), (2, &[(1, 100)])]);
        let stats = EpochStats {
            queues: vec![QueueStats {
                slot: 0,
                level: 1,
                pkts_arrived: 500,
                pkts_processed: 0,
                pkts_queued: 500,
                flows_queued: 1,
            }],
            flows: vec![FlowStats {
                flow: FlowId(1),
                task_size: 500,
                target_queue: 0,
                in_service: false,
            }],
        };
        let mut c = cfg();
        c.max_split = 2;
        let plan = absorb_bursts(&stats, &fam, &c, 8);
        assert_eq!(plan.best_effort, vec![FlowId(1)]);
        assert!(plan
            .alerts
            .iter()
            .any(|a| a.reason == AlertReason::WhaleBeyondProfiles));
        // Still gets a dedicated queue at the deepest profiled level.
        assert_eq!(plan.new_queues.len(), 1);
        assert_eq!(plan.new_queues[0].level, 2);
    }

    #[test]
    fn exhausted_pool_degrades_plan() {
        let fam = family(&[(1, &[(2, 20)])]);
        let flows: Vec<FlowStats> = (0..6)
            .map(|i| FlowStats {
                flow: FlowId(i),
                task_size: 15,
                target_queue: 0,
                in_service: false,
            })
            .collect();
        let stats = EpochStats {
            queues: vec![QueueStats {
                slot: 0,
                level: 1,
                pkts_arrived: 90,
                pkts_processed: 0,
                pkts_queued: 90,
                flows_queued: 6,
            }],
            flows,
        };
        let plan = absorb_bursts(&stats, &fam, &cfg(), 1);
        assert!(plan.at_risk);
        assert!(plan.aux_cores_requested <= 1);
        assert!(plan
            .alerts
            .iter()
            .any(|a| a.reason == AlertReason::AuxPoolExhausted));
    }

    #[test]
    fn in_service_flows_stay_put() {
        let fam = family(&[(1, &[(2, 10)])]);
        let stats = EpochStats {
            queues: vec![QueueStats {
                slot: 0,
                level: 1,
                pkts_arrived: 60,
                pkts_processed: 0,
                pkts_queued: 60,
                flows_queued: 2,
            }],
            flows: vec![
                FlowStats {
                    flow: FlowId(1),
                    task_size: 30,
                    target_queue: 0,
                    in_service: true,
                },
                FlowStats {
                    flow: FlowId(2),
                    task_size: 30,
                    target_queue: 0,
                    in_service: false,
                },
            ],
        };
        let plan = absorb_bursts(&stats, &fam, &cfg(), 8);
        assert!(plan.moves.iter().all(|m| m.flow != FlowId(1)));
        assert!(plan.new_queues.iter().all(|q| !q.flows.contains(&FlowId(1))));
    }
}
