//! Deterministic discrete-event kernel.
//!
//! One kernel run simulates a rack: the ingress steers destination
//! prefixes to servers, RSS buckets pin flows to dedicated cores, each
//! dedicated core alternates pulling batches from its NIC queue with
//! run-to-completion processing of its local software queue, and the
//! three mappers fire at their contracted times (core epochs at SLO/2,
//! server ticks each decision interval, mapping installs after the RSS
//! update delay).
//!
//! Determinism: the event heap orders by (time, kind rank, sequence
//! number) and all iteration is over index-ordered or BTree state, so a
//! (config, trace, seed) triple always produces the identical event
//! stream.

pub mod metrics;
pub mod probe;

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet, VecDeque};

use crate::chain::{best_split, ChainSpec};
use crate::config::{CoreMapperSection, Mode, RackConfig, ServerMapperSection};
use crate::core_mapper::{
    absorb_bursts, epoch_length_ns, AlertReason, CoreMapperConfig, CoreStatsTracker,
    MigrationPlan,
};
use crate::ingress::IngressState;
use crate::predictor::{FrontierFamily, RateThresholdTable};
use crate::server_mapper::{
    boost_check, bucket_of, remap_greedy, BoostDecision, BucketStats, CoreMapping,
    MappingInstaller,
};
use crate::traffic::{PacketRecord, DEFAULT_STATS_WINDOW_NS};
use crate::{FlowId, Nanos, NS_PER_SEC};

use metrics::{Collector, DropCause, Metrics};

/// Everything one simulation run needs.
#[derive(Debug, Clone)]
pub struct SimParams {
    pub chain: ChainSpec,
    pub mode: Mode,
    pub slo_ns: Nanos,
    pub seed: u64,
    pub config_hash: u64,
    pub rack: RackConfig,
    pub cm: CoreMapperSection,
    pub sm: ServerMapperSection,
    pub prefix_len: u32,
    pub tau: u32,
    pub nic_cap: usize,
    pub sw_cap: usize,
    pub frontier: FrontierFamily,
    pub thresholds: RateThresholdTable,
    pub trace_end_ns: Nanos,
    /// Training runs disable migration and boost and record per-epoch
    /// capacity observations from SLO-violating epochs.
    pub training: bool,
    /// Split level dedicated cores run at (profiling core groups).
    pub training_level: usize,
    pub collect_samples: bool,
}

#[derive(Debug, Clone, Copy)]
struct Features {
    epochs: bool,
    migration: bool,
    boost: bool,
    server_remap: bool,
    on_demand: bool,
}

fn features(mode: Mode, training: bool) -> Features {
    if training {
        return Features {
            epochs: true,
            migration: false,
            boost: false,
            server_remap: true,
            on_demand: false,
        };
    }
    match mode {
        Mode::Full | Mode::StaticSafe | Mode::StaticUnsafe => Features {
            epochs: true,
            migration: true,
            boost: true,
            server_remap: true,
            on_demand: false,
        },
        Mode::NoBoost => Features {
            epochs: true,
            migration: true,
            boost: false,
            server_remap: true,
            on_demand: false,
        },
        Mode::OnDemandRemap => Features {
            epochs: true,
            migration: true,
            boost: false,
            server_remap: true,
            on_demand: true,
        },
        Mode::NoCoreMapper => Features {
            epochs: true,
            migration: false,
            boost: true,
            server_remap: true,
            on_demand: false,
        },
        Mode::HashOnly | Mode::PerFlowPerCore => Features {
            epochs: false,
            migration: false,
            boost: false,
            server_remap: false,
            on_demand: false,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EvKind {
    MappingEffective { server: usize },
    CoreWake { server: usize, core: usize },
    QueueWake { server: usize, core: usize, slot: usize },
    Epoch { server: usize },
    ServerTick { server: usize },
    TraceEnd,
}

impl EvKind {
    fn rank(&self) -> u8 {
        match self {
            EvKind::MappingEffective { .. } => 0,
            EvKind::CoreWake { .. } | EvKind::QueueWake { .. } => 1,
            EvKind::Epoch { .. } => 2,
            EvKind::ServerTick { .. } => 3,
            // Trace arrivals slot in at rank 4, straight from the cursor.
            EvKind::TraceEnd => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Ev {
    time: Nanos,
    rank: u8,
    seq: u64,
    kind: EvKind,
}

impl Ord for Ev {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.rank, self.seq).cmp(&(other.time, other.rank, other.seq))
    }
}
impl PartialOrd for Ev {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy)]
struct Pkt {
    flow: FlowId,
    arrival_ns: Nanos,
    seq: u64,
}

#[derive(Debug, Clone, Default)]
struct SwQueue {
    alive: bool,
    level: usize,
    aux_cores: Vec<usize>,
    q: VecDeque<Pkt>,
    busy_until: Nanos,
    in_flight: Vec<Pkt>,
    seen: HashSet<FlowId>,
    wake_pending: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CoreWork {
    Idle,
    /// Fixed simulated overhead (the epoch plan cost).
    Overhead,
    /// Moving a batch from the NIC queue into software queues.
    Pulling,
    /// Running the chain over a batch from the local queue.
    Processing,
}

struct CoreSim {
    nic: VecDeque<Pkt>,
    queues: Vec<SwQueue>,
    tracker: CoreStatsTracker,
    busy_until: Nanos,
    work: CoreWork,
    pulled: Vec<Pkt>,
    pulled_last: bool,
    wake_pending: bool,
    pending_overhead: Nanos,
    boost_worker: Option<usize>,
    boost_exit_pending: bool,
    epoch_violation: bool,
    epoch_pkts: u64,
    epoch_flows: BTreeSet<FlowId>,
}

impl CoreSim {
    fn new(level: usize) -> Self {
        let local = SwQueue {
            alive: true,
            level,
            ..Default::default()
        };
        let mut tracker = CoreStatsTracker::new();
        tracker.set_queue(0, level, true);
        CoreSim {
            nic: VecDeque::new(),
            queues: vec![local],
            tracker,
            busy_until: 0,
            work: CoreWork::Idle,
            pulled: Vec::new(),
            pulled_last: false,
            wake_pending: false,
            pending_overhead: 0,
            boost_worker: None,
            boost_exit_pending: false,
            epoch_violation: false,
            epoch_pkts: 0,
            epoch_flows: BTreeSet::new(),
        }
    }

    fn engaged(&self) -> bool {
        !self.nic.is_empty()
            || self.tracker.has_flows()
            || self
                .queues
                .iter()
                .any(|q| q.alive && (!q.q.is_empty() || !q.in_flight.is_empty()))
    }

    fn queued_scan(&self) -> u64 {
        self.nic.len() as u64
            + self.pulled.len() as u64
            + self
                .queues
                .iter()
                .map(|q| (q.q.len() + q.in_flight.len()) as u64)
                .sum::<u64>()
    }
}

struct ServerSim {
    installer: MappingInstaller,
    cores: Vec<CoreSim>,
    aux_free: Vec<usize>,
    /// flow -> (owning core, packets outstanding there). Lazy migration:
    /// a flow sticks to its core until fully drained, even after its
    /// bucket moves.
    outstanding: HashMap<u64, (usize, u32)>,
    bucket_pkts: Vec<u64>,
    bucket_win_flows: Vec<HashSet<u64>>,
    bucket_win_idx: Vec<u64>,
    bucket_flow_sum: Vec<u64>,
    interval_start: Nanos,
    last_on_demand: Option<Nanos>,
}

impl ServerSim {
    fn new(p: &SimParams) -> Self {
        let buckets = p.sm.rss_buckets;
        let dedicated = p.rack.max_dedicated();
        let initial =
            CoreMapping::round_robin(buckets, p.rack.initial_cores.min(dedicated), dedicated);
        ServerSim {
            installer: MappingInstaller::new(initial),
            cores: (0..p.rack.cores_per_server)
                .map(|_| CoreSim::new(p.training_level.max(1)))
                .collect(),
            aux_free: (dedicated..p.rack.cores_per_server).collect(),
            outstanding: HashMap::new(),
            bucket_pkts: vec![0; buckets],
            bucket_win_flows: vec![HashSet::new(); buckets],
            bucket_win_idx: vec![0; buckets],
            bucket_flow_sum: vec![0; buckets],
            interval_start: 0,
            last_on_demand: None,
        }
    }
}

/// Per-level batch cost model: a level-n pipeline admits one packet per
/// bottleneck interval after a one-time fill of (total - bottleneck).
#[derive(Debug, Clone, Copy)]
struct LevelCost {
    bottleneck_ns: Nanos,
    fill_ns: Nanos,
}

fn level_costs(chain: &ChainSpec, max_level: usize) -> Vec<LevelCost> {
    let total = chain.total_cost_ns();
    let mut v = vec![LevelCost {
        bottleneck_ns: total,
        fill_ns: 0,
    }];
    for n in 1..=max_level.max(1) {
        let b = best_split(chain, n)
            .map(|s| s.bottleneck_cost_ns(chain))
            .unwrap_or(total);
        v.push(LevelCost {
            bottleneck_ns: b,
            fill_ns: total - b,
        });
    }
    v
}

struct Sim<'a> {
    p: &'a SimParams,
    feat: Features,
    frontier: FrontierFamily,
    heap: BinaryHeap<Reverse<Ev>>,
    seq: u64,
    now: Nanos,
    servers: Vec<ServerSim>,
    ingress: IngressState,
    col: Collector,
    costs: Vec<LevelCost>,
    max_split: usize,
}

impl<'a> Sim<'a> {
    fn push(&mut self, time: Nanos, kind: EvKind) {
        self.seq += 1;
        self.heap.push(Reverse(Ev {
            time,
            rank: kind.rank(),
            seq: self.seq,
            kind,
        }));
    }

    fn wake_core(&mut self, s: usize, c: usize) {
        let now = self.now;
        let cs = &mut self.servers[s].cores[c];
        if !cs.wake_pending && cs.busy_until <= now && cs.work == CoreWork::Idle {
            cs.wake_pending = true;
            self.push(now, EvKind::CoreWake { server: s, core: c });
        }
    }

    fn wake_queue(&mut self, s: usize, c: usize, slot: usize) {
        let now = self.now;
        let q = &mut self.servers[s].cores[c].queues[slot];
        if q.alive && !q.wake_pending && q.busy_until <= now && q.in_flight.is_empty() {
            q.wake_pending = true;
            self.push(
                now,
                EvKind::QueueWake {
                    server: s,
                    core: c,
                    slot,
                },
            );
        }
    }

    // ---- arrivals -------------------------------------------------------

    fn on_arrival(&mut self, rec: &PacketRecord, seq: u64) {
        self.col.on_arrival();
        let s = if self.servers.len() == 1 {
            0
        } else {
            self.ingress.steer(rec.dst_addr)
        };
        let now = self.now;
        let srv = &mut self.servers[s];
        let bucket = bucket_of(rec.flow, srv.bucket_pkts.len());
        srv.bucket_pkts[bucket] += 1;
        let win = now / DEFAULT_STATS_WINDOW_NS;
        if srv.bucket_win_idx[bucket] != win {
            let n = srv.bucket_win_flows[bucket].len() as u64;
            srv.bucket_flow_sum[bucket] += n;
            srv.bucket_win_flows[bucket].clear();
            srv.bucket_win_idx[bucket] = win;
        }
        srv.bucket_win_flows[bucket].insert(rec.flow.0);

        // Lazy flow-to-core stickiness preserves affinity across RSS
        // remaps: a flow with packets still on its old core keeps
        // arriving there until drained.
        let mapped = srv.installer.current.core_of(bucket);
        let core = match srv.outstanding.get(&rec.flow.0) {
            Some(&(c, n)) if n > 0 => c,
            _ => mapped,
        };
        if srv.cores[core].nic.len() >= self.p.nic_cap {
            self.col.on_drop(DropCause::NicOverflow, seq, now);
            return;
        }
        srv.cores[core].nic.push_back(Pkt {
            flow: rec.flow,
            arrival_ns: now,
            seq,
        });
        srv.cores[core].tracker.on_flow_arrival(rec.flow);
        let e = srv.outstanding.entry(rec.flow.0).or_insert((core, 0));
        e.0 = core;
        e.1 += 1;
        self.wake_core(s, core);
    }

    // ---- dedicated core service loop -------------------------------------

    fn core_wake(&mut self, s: usize, c: usize) {
        {
            let cs = &mut self.servers[s].cores[c];
            cs.wake_pending = false;
            if cs.busy_until > self.now {
                return;
            }
        }
        let work = std::mem::replace(&mut self.servers[s].cores[c].work, CoreWork::Idle);
        match work {
            CoreWork::Idle | CoreWork::Overhead => {}
            CoreWork::Pulling => self.route_pulled(s, c),
            CoreWork::Processing => {
                self.complete_batch(s, c, 0);
                // Entered boost mid-batch: the worker takes over now.
                if self.servers[s].cores[c].boost_worker.is_some() {
                    self.wake_queue(s, c, 0);
                }
            }
        }
        self.start_core_work(s, c);
    }

    fn route_pulled(&mut self, s: usize, c: usize) {
        let pulled = std::mem::take(&mut self.servers[s].cores[c].pulled);
        let mut wake_slots: Vec<usize> = Vec::new();
        for pkt in pulled {
            let srv = &mut self.servers[s];
            let cs = &mut srv.cores[c];
            let slot = cs
                .tracker
                .target_of(pkt.flow)
                .filter(|&sl| cs.queues.get(sl).map_or(false, |q| q.alive))
                .unwrap_or(0);
            if cs.queues[slot].q.len() >= self.p.sw_cap {
                cs.tracker.on_dropped_before_enqueue(pkt.flow);
                decrement_outstanding(&mut srv.outstanding, pkt.flow);
                self.col
                    .on_drop(DropCause::SoftwareOverflow, pkt.seq, self.now);
                continue;
            }
            cs.queues[slot].q.push_back(pkt);
            cs.tracker.on_enqueued(slot, 1);
            if slot != 0 && !wake_slots.contains(&slot) {
                wake_slots.push(slot);
            }
        }
        for slot in wake_slots {
            self.wake_queue(s, c, slot);
        }
        // In boost the local queue runs on the worker.
        if self.servers[s].cores[c].boost_worker.is_some() {
            self.wake_queue(s, c, 0);
        }
    }

    fn start_core_work(&mut self, s: usize, c: usize) {
        let dispatch = self.p.cm.dispatch_cost_ns;
        let batch_cap = self.p.chain.max_batch;
        let now = self.now;

        let (start_pull, start_process, overhead) = {
            let cs = &self.servers[s].cores[c];
            debug_assert!(cs.work == CoreWork::Idle);
            if cs.pending_overhead > 0 {
                (false, false, true)
            } else {
                let boost = cs.boost_worker.is_some();
                let local_nonempty = !cs.queues[0].q.is_empty();
                let pull = !cs.nic.is_empty() && (boost || !cs.pulled_last || !local_nonempty);
                let process = !pull && !boost && local_nonempty;
                (pull, process, false)
            }
        };

        if overhead {
            let cs = &mut self.servers[s].cores[c];
            let cost = std::mem::take(&mut cs.pending_overhead);
            cs.work = CoreWork::Overhead;
            cs.busy_until = now + cost;
            let until = cs.busy_until;
            self.push(until, EvKind::CoreWake { server: s, core: c });
            self.col.mark_active(s, c, now, until);
            return;
        }
        if start_pull {
            let cs = &mut self.servers[s].cores[c];
            let k = cs.nic.len().min(batch_cap);
            cs.pulled = cs.nic.drain(..k).collect();
            cs.work = CoreWork::Pulling;
            cs.pulled_last = true;
            cs.busy_until = now + dispatch * k as u64;
            let until = cs.busy_until;
            self.push(until, EvKind::CoreWake { server: s, core: c });
            self.col.mark_active(s, c, now, until.max(now + 1));
            return;
        }
        if start_process {
            self.servers[s].cores[c].pulled_last = false;
            let until = self.start_batch(s, c, 0, &[c]);
            let cs = &mut self.servers[s].cores[c];
            cs.work = CoreWork::Processing;
            cs.busy_until = until;
            self.push(until, EvKind::CoreWake { server: s, core: c });
        }
    }

    /// Dequeue a batch from `slot` and start serving it; `serving` names
    /// the core ids doing the work (for activity accounting). Returns
    /// the completion time.
    fn start_batch(&mut self, s: usize, c: usize, slot: usize, serving: &[usize]) -> Nanos {
        let batch_cap = self.p.chain.max_batch;
        let setup = self.p.chain.per_new_flow_cost_ns;
        let now = self.now;
        let (until, flows) = {
            let cs = &mut self.servers[s].cores[c];
            let level = cs.queues[slot].level.clamp(1, self.costs.len() - 1);
            let lc = self.costs[level];
            let k = cs.queues[slot].q.len().min(batch_cap);
            let batch: Vec<Pkt> = cs.queues[slot].q.drain(..k).collect();
            let mut cost = lc.fill_ns + lc.bottleneck_ns * k as u64;
            let mut flows: Vec<FlowId> = Vec::new();
            for pkt in &batch {
                if cs.queues[slot].seen.insert(pkt.flow) {
                    cost += setup;
                }
                if !flows.contains(&pkt.flow) {
                    flows.push(pkt.flow);
                }
            }
            for f in &flows {
                cs.tracker.set_in_service(*f, true);
            }
            let per_pkt: Vec<FlowId> = batch.iter().map(|p| p.flow).collect();
            cs.queues[slot].busy_until = now + cost;
            cs.queues[slot].in_flight = batch;
            (cs.queues[slot].busy_until, per_pkt)
        };
        for f in flows {
            self.col.serving_start(f, s, global_slot(c, slot));
        }
        for &core in serving {
            self.col.mark_active(s, core, now, until);
        }
        until
    }

    fn complete_batch(&mut self, s: usize, c: usize, slot: usize) {
        let now = self.now;
        let batch = std::mem::take(&mut self.servers[s].cores[c].queues[slot].in_flight);
        let mut flows_done: Vec<FlowId> = Vec::new();
        for pkt in &batch {
            self.col.on_completion(pkt.flow, pkt.seq, pkt.arrival_ns, now);
            self.col.serving_end(pkt.flow);
            let srv = &mut self.servers[s];
            srv.cores[c].tracker.on_processed(pkt.flow, slot);
            decrement_outstanding(&mut srv.outstanding, pkt.flow);
            let cs = &mut srv.cores[c];
            if now - pkt.arrival_ns > self.p.slo_ns {
                cs.epoch_violation = true;
            }
            cs.epoch_pkts += 1;
            cs.epoch_flows.insert(pkt.flow);
            if !flows_done.contains(&pkt.flow) {
                flows_done.push(pkt.flow);
            }
        }
        let cs = &mut self.servers[s].cores[c];
        for f in flows_done {
            cs.tracker.set_in_service(f, false);
        }
    }

    // ---- borrowed queue service -------------------------------------------

    fn queue_wake(&mut self, s: usize, c: usize, slot: usize) {
        {
            let q = &mut self.servers[s].cores[c].queues[slot];
            q.wake_pending = false;
            if !q.alive || q.busy_until > self.now {
                return;
            }
        }
        if !self.servers[s].cores[c].queues[slot].in_flight.is_empty() {
            self.complete_batch(s, c, slot);
            if slot == 0 && self.servers[s].cores[c].boost_exit_pending {
                // Boost exited mid-batch: hand the local queue back.
                self.release_boost_worker(s, c);
                self.wake_core(s, c);
                return;
            }
        }
        let served_by_aux =
            slot != 0 || self.servers[s].cores[c].boost_worker.is_some();
        if !served_by_aux {
            // Normal-mode local queue runs inside the core loop.
            self.wake_core(s, c);
            return;
        }
        if self.servers[s].cores[c].queues[slot].q.is_empty() {
            return;
        }
        let serving: Vec<usize> = if slot == 0 {
            vec![self.servers[s].cores[c]
                .boost_worker
                .expect("boost worker serves the local queue")]
        } else {
            self.servers[s].cores[c].queues[slot].aux_cores.clone()
        };
        let until = self.start_batch(s, c, slot, &serving);
        self.push(
            until,
            EvKind::QueueWake {
                server: s,
                core: c,
                slot,
            },
        );
    }

    fn release_boost_worker(&mut self, s: usize, c: usize) {
        let cs = &mut self.servers[s].cores[c];
        cs.boost_exit_pending = false;
        if let Some(w) = cs.boost_worker.take() {
            let free = &mut self.servers[s].aux_free;
            free.push(w);
            free.sort_unstable();
        }
    }

    // ---- epoch boundary ----------------------------------------------------

    fn epoch_boundary(&mut self, s: usize) {
        let dedicated = self.p.rack.max_dedicated();
        for c in 0..dedicated {
            if !self.servers[s].cores[c].engaged() {
                let cs = &mut self.servers[s].cores[c];
                cs.epoch_violation = false;
                cs.epoch_pkts = 0;
                cs.epoch_flows.clear();
                continue;
            }
            self.release_empty_queues(s, c);
            let stats = self.servers[s].cores[c].tracker.end_epoch();

            {
                let cs = &mut self.servers[s].cores[c];
                if self.p.training && cs.epoch_violation && cs.epoch_pkts > 0 {
                    let f = cs.epoch_flows.len() as u64;
                    let p = cs.epoch_pkts;
                    self.col.record_capacity(f, p);
                }
                cs.epoch_violation = false;
                cs.epoch_pkts = 0;
                cs.epoch_flows.clear();
            }

            if self.feat.boost {
                self.boost_transition(s, c);
            }

            if self.feat.migration {
                let cfg = CoreMapperConfig {
                    slo_ns: self.p.slo_ns,
                    max_split: self.max_split,
                    plan_cost_ns: self.p.cm.plan_cost_ns,
                };
                let aux_available = self.servers[s].aux_free.len();
                let plan = absorb_bursts(&stats, &self.frontier, &cfg, aux_available);
                self.apply_plan(s, c, plan);
            }

            if self.feat.on_demand {
                self.maybe_on_demand_remap(s, c);
            }

            if self.feat.migration || self.p.training {
                self.servers[s].cores[c].pending_overhead += self.p.cm.plan_cost_ns;
                self.wake_core(s, c);
            }
        }
        let next = self.now + epoch_length_ns(self.p.slo_ns);
        if next <= self.p.trace_end_ns {
            self.push(next, EvKind::Epoch { server: s });
        }
    }

    fn release_empty_queues(&mut self, s: usize, c: usize) {
        let slots: Vec<usize> = self.servers[s].cores[c]
            .queues
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, q)| q.alive && q.q.is_empty() && q.in_flight.is_empty())
            .map(|(i, _)| i)
            .collect();
        for slot in slots {
            let cores = {
                let cs = &mut self.servers[s].cores[c];
                let cores = std::mem::take(&mut cs.queues[slot].aux_cores);
                cs.queues[slot].alive = false;
                cs.queues[slot].seen.clear();
                cs.queues[slot].level = 1;
                for f in cs.tracker.flows_targeting(slot) {
                    cs.tracker.retarget(f, 0);
                }
                cs.tracker.clear_queue(slot);
                cores
            };
            let free = &mut self.servers[s].aux_free;
            free.extend(cores);
            free.sort_unstable();
        }
    }

    fn boost_transition(&mut self, s: usize, c: usize) {
        let backlog = self.servers[s].cores[c].nic.len() as u64;
        let in_boost = self.servers[s].cores[c].boost_worker.is_some();
        match boost_check(in_boost, backlog, self.p.sm.boost_threshold) {
            BoostDecision::Enter => {
                if !self.servers[s].aux_free.is_empty() {
                    let w = self.servers[s].aux_free.remove(0);
                    let cs = &mut self.servers[s].cores[c];
                    cs.boost_worker = Some(w);
                    cs.boost_exit_pending = false;
                    self.col.boost_entries += 1;
                    self.wake_queue(s, c, 0);
                    self.wake_core(s, c);
                } else {
                    self.col.boost_denied += 1;
                    self.col
                        .alert(self.now, s, c, None, "boost denied: aux pool empty");
                }
            }
            BoostDecision::Exit => {
                let busy = {
                    let q = &self.servers[s].cores[c].queues[0];
                    q.busy_until > self.now || !q.in_flight.is_empty()
                };
                if busy {
                    self.servers[s].cores[c].boost_exit_pending = true;
                } else {
                    self.release_boost_worker(s, c);
                    self.wake_core(s, c);
                }
            }
            BoostDecision::Stay => {}
        }
    }

    fn apply_plan(&mut self, s: usize, c: usize, plan: MigrationPlan) {
        if plan.is_empty() && plan.alerts.is_empty() && !plan.at_risk {
            return;
        }
        for mv in &plan.moves {
            self.raise_level(s, c, mv.to_slot, mv.new_level);
            self.move_flow(s, c, mv.flow, mv.to_slot);
            self.wake_queue(s, c, mv.to_slot);
        }
        for nq in &plan.new_queues {
            let Some(slot) = self.alloc_queue(s, c, nq.level) else {
                self.col.at_risk_epochs += 1;
                continue;
            };
            for f in &nq.flows {
                self.move_flow(s, c, *f, slot);
            }
            self.wake_queue(s, c, slot);
        }
        for f in &plan.best_effort {
            self.col.best_effort_flows.insert(*f);
        }
        for a in &plan.alerts {
            let reason = match a.reason {
                AlertReason::WhaleBeyondProfiles => "whale exceeds every profiled split",
                AlertReason::AuxPoolExhausted => "aux pool exhausted",
            };
            self.col.alert(self.now, s, c, a.flow, reason);
        }
        if plan.at_risk {
            self.col.at_risk_epochs += 1;
        }
    }

    fn raise_level(&mut self, s: usize, c: usize, slot: usize, level: usize) {
        let current = self.servers[s].cores[c].queues[slot].level;
        if level <= current {
            return;
        }
        let extra = level - current;
        debug_assert!(self.servers[s].aux_free.len() >= extra, "plan over budget");
        let take = extra.min(self.servers[s].aux_free.len());
        let cores: Vec<usize> = self.servers[s].aux_free.drain(..take).collect();
        let cs = &mut self.servers[s].cores[c];
        cs.queues[slot].aux_cores.extend(cores);
        cs.queues[slot].level = current + take;
        cs.tracker.set_level(slot, current + take);
    }

    fn alloc_queue(&mut self, s: usize, c: usize, level: usize) -> Option<usize> {
        if self.servers[s].aux_free.len() < level {
            return None;
        }
        let cores: Vec<usize> = self.servers[s].aux_free.drain(..level).collect();
        let cs = &mut self.servers[s].cores[c];
        let slot = cs
            .queues
            .iter()
            .position(|q| !q.alive)
            .unwrap_or(cs.queues.len());
        if slot == cs.queues.len() {
            cs.queues.push(SwQueue::default());
        }
        let q = &mut cs.queues[slot];
        q.alive = true;
        q.level = level;
        q.aux_cores = cores;
        q.q.clear();
        q.in_flight.clear();
        q.seen.clear();
        q.busy_until = 0;
        q.wake_pending = false;
        cs.tracker.set_queue(slot, level, true);
        Some(slot)
    }

    /// Move a flow's queued packets into `to_slot` and redirect its
    /// future arrivals there.
    fn move_flow(&mut self, s: usize, c: usize, flow: FlowId, to_slot: usize) {
        let from = self.servers[s].cores[c].tracker.target_of(flow).unwrap_or(0);
        if from != to_slot {
            let moved: Vec<Pkt> = {
                let cs = &mut self.servers[s].cores[c];
                let src = &mut cs.queues[from].q;
                let mut moved = Vec::new();
                let mut rest = VecDeque::with_capacity(src.len());
                while let Some(pkt) = src.pop_front() {
                    if pkt.flow == flow {
                        moved.push(pkt);
                    } else {
                        rest.push_back(pkt);
                    }
                }
                cs.queues[from].q = rest;
                moved
            };
            let n = moved.len() as u64;
            self.servers[s].cores[c]
                .tracker
                .on_packets_moved(from, to_slot, n);
            for pkt in moved {
                if self.servers[s].cores[c].queues[to_slot].q.len() >= self.p.sw_cap {
                    let srv = &mut self.servers[s];
                    srv.cores[c].tracker.on_queued_dropped(flow, to_slot);
                    decrement_outstanding(&mut srv.outstanding, flow);
                    self.col
                        .on_drop(DropCause::SoftwareOverflow, pkt.seq, self.now);
                    continue;
                }
                self.servers[s].cores[c].queues[to_slot].q.push_back(pkt);
            }
        }
        self.servers[s].cores[c].tracker.retarget(flow, to_slot);
    }

    // ---- server mapper -------------------------------------------------------

    fn bucket_stats(&mut self, s: usize) -> BucketStats {
        let now = self.now;
        let srv = &mut self.servers[s];
        let elapsed = (now - srv.interval_start).max(1);
        let windows = (elapsed / DEFAULT_STATS_WINDOW_NS).max(1);
        let n = srv.bucket_pkts.len();
        let mut stats = BucketStats::zeros(n);
        for j in 0..n {
            let flushed = srv.bucket_win_flows[j].len() as u64;
            stats.rate_pps[j] = srv.bucket_pkts[j] as f64 * NS_PER_SEC as f64 / elapsed as f64;
            stats.flows[j] = (srv.bucket_flow_sum[j] + flushed) as f64 / windows as f64;
        }
        stats
    }

    fn reset_interval(&mut self, s: usize) {
        let now = self.now;
        let srv = &mut self.servers[s];
        srv.bucket_pkts.iter_mut().for_each(|v| *v = 0);
        srv.bucket_flow_sum.iter_mut().for_each(|v| *v = 0);
        srv.bucket_win_flows.iter_mut().for_each(|s| s.clear());
        srv.interval_start = now;
    }

    fn server_tick(&mut self, s: usize) {
        if self.feat.server_remap {
            let stats = self.bucket_stats(s);
            let current = self.servers[s].installer.current.clone();
            let outcome = remap_greedy(
                &stats,
                &current,
                &self.p.thresholds,
                self.p.sm.capacity_margin,
            );
            self.col.remap_migrations += outcome.migrated.len() as u64;
            if outcome.infeasible {
                self.col.alert(
                    self.now,
                    s,
                    usize::MAX,
                    None,
                    "server remap infeasible: keeping best-effort mapping",
                );
            }
            let reported = outcome.mapping.active_cores() as u32;
            if !outcome.migrated.is_empty() {
                let eff = self.servers[s].installer.install(
                    outcome.mapping,
                    self.now,
                    self.p.sm.rss_update_delay_ns,
                );
                self.push(eff, EvKind::MappingEffective { server: s });
            }
            let _ = self.ingress.report_cores(s, reported);
        } else {
            let reported = self.servers[s].installer.current.active_cores() as u32;
            let _ = self.ingress.report_cores(s, reported);
        }
        self.reset_interval(s);
        let next = self.now + self.p.sm.decision_interval_ns;
        if next <= self.p.trace_end_ns {
            self.push(next, EvKind::ServerTick { server: s });
        }
    }

    /// On-demand remap: a large NIC backlog triggers an immediate
    /// long-term optimization, rate-limited per server, using the
    /// running averages accumulated so far in the interval.
    fn maybe_on_demand_remap(&mut self, s: usize, c: usize) {
        let backlog = self.servers[s].cores[c].nic.len() as u64;
        if backlog <= self.p.sm.boost_threshold {
            return;
        }
        let gap_ok = self.servers[s]
            .last_on_demand
            .map_or(true, |t| self.now - t >= self.p.sm.on_demand_min_gap_ns);
        if !gap_ok {
            return;
        }
        self.servers[s].last_on_demand = Some(self.now);
        self.col.on_demand_remaps += 1;
        let stats = self.bucket_stats(s);
        let current = self.servers[s].installer.current.clone();
        let outcome = remap_greedy(
            &stats,
            &current,
            &self.p.thresholds,
            self.p.sm.capacity_margin,
        );
        self.col.remap_migrations += outcome.migrated.len() as u64;
        if !outcome.migrated.is_empty() {
            let eff = self.servers[s].installer.install(
                outcome.mapping,
                self.now,
                self.p.sm.rss_update_delay_ns,
            );
            self.push(eff, EvKind::MappingEffective { server: s });
        }
        // The long-term epoch restarts after an on-demand invocation.
        self.reset_interval(s);
    }

    // ---- main loop -------------------------------------------------------

    fn run(mut self, trace: &[PacketRecord]) -> Metrics {
        for s in 0..self.servers.len() {
            if self.feat.epochs {
                self.push(epoch_length_ns(self.p.slo_ns), EvKind::Epoch { server: s });
            }
            if self.feat.server_remap {
                self.push(
                    self.p.sm.decision_interval_ns,
                    EvKind::ServerTick { server: s },
                );
            }
        }
        self.push(self.p.trace_end_ns, EvKind::TraceEnd);

        let mut cursor = 0usize;
        // Skip any trace suffix beyond the horizon.
        let horizon = self.p.trace_end_ns;
        loop {
            while cursor < trace.len() && trace[cursor].arrival_ns > horizon {
                cursor = trace.len();
            }
            let heap_next = self.heap.peek().map(|Reverse(e)| (e.time, e.rank));
            let trace_next = trace.get(cursor).map(|r| (r.arrival_ns, 4u8));
            let take_arrival = match (heap_next, trace_next) {
                (Some(h), Some(t)) => t < h,
                (None, Some(_)) => true,
                (Some(_), None) => false,
                (None, None) => break,
            };
            if take_arrival {
                let rec = &trace[cursor];
                self.now = rec.arrival_ns;
                self.on_arrival(rec, cursor as u64);
                cursor += 1;
                continue;
            }
            let Reverse(ev) = self.heap.pop().unwrap();
            self.now = ev.time;
            match ev.kind {
                EvKind::MappingEffective { server } => {
                    self.servers[server].installer.advance(self.now);
                }
                EvKind::CoreWake { server, core } => self.core_wake(server, core),
                EvKind::QueueWake { server, core, slot } => self.queue_wake(server, core, slot),
                EvKind::Epoch { server } => self.epoch_boundary(server),
                EvKind::ServerTick { server } => self.server_tick(server),
                EvKind::TraceEnd => break,
            }
        }

        let queued: u64 = self
            .servers
            .iter()
            .map(|srv| srv.cores.iter().map(|c| c.queued_scan()).sum::<u64>())
            .sum();
        self.col.servers_used = self.ingress.servers_used().max(1);
        self.col
            .finish(self.p.mode.name(), self.p.seed, self.p.config_hash, queued)
    }
}

fn decrement_outstanding(map: &mut HashMap<u64, (usize, u32)>, flow: FlowId) {
    if let Some(e) = map.get_mut(&flow.0) {
        e.1 = e.1.saturating_sub(1);
        if e.1 == 0 {
            map.remove(&flow.0);
        }
    }
}

/// Queue identity for the affinity audit: one serving entity per
/// (core, slot) pair.
fn global_slot(core: usize, slot: usize) -> usize {
    core * 4096 + slot
}

/// Run one simulation. Mode-specific frontier transforms (the static
/// ablations) apply here, so callers always pass the trained family.
pub fn run(params: &SimParams, trace: &[PacketRecord]) -> Metrics {
    match params.mode {
        Mode::PerFlowPerCore => run_per_flow(params, trace),
        _ => {
            let frontier = match params.mode {
                Mode::StaticSafe => params.frontier.static_safe(),
                Mode::StaticUnsafe => params.frontier.static_unsafe(),
                _ => params.frontier.clone(),
            };
            let feat = features(params.mode, params.training);
            let max_split = params.cm.max_split.min(params.chain.stages.len()).max(1);
            let sim = Sim {
                p: params,
                feat,
                costs: level_costs(&params.chain, max_split),
                frontier,
                heap: BinaryHeap::new(),
                seq: 0,
                now: 0,
                servers: (0..params.rack.servers)
                    .map(|_| ServerSim::new(params))
                    .collect(),
                ingress: IngressState::new(
                    params.rack.servers,
                    params.prefix_len,
                    params.tau,
                    params.rack.initial_cores as u32,
                ),
                col: Collector::new(params.trace_end_ns, params.slo_ns, params.collect_samples),
                max_split,
            };
            sim.run(trace)
        }
    }
}

/// Motivation mode: every flow gets its own core, so queueing reflects
/// only each flow's own arrival process. Flow cores are independent
/// batch-served FIFO queues.
fn run_per_flow(params: &SimParams, trace: &[PacketRecord]) -> Metrics {
    let mut col = Collector::new(params.trace_end_ns, params.slo_ns, params.collect_samples);
    let mut by_flow: std::collections::BTreeMap<FlowId, Vec<(Nanos, u64)>> = Default::default();
    for (i, rec) in trace.iter().enumerate() {
        if rec.arrival_ns > params.trace_end_ns {
            break;
        }
        col.on_arrival();
        by_flow
            .entry(rec.flow)
            .or_default()
            .push((rec.arrival_ns, i as u64));
    }
    let total = params.chain.total_cost_ns();
    let d = params.cm.dispatch_cost_ns;
    let setup = params.chain.per_new_flow_cost_ns;
    let batch_cap = params.chain.max_batch;
    let mut queued_total = 0u64;
    for (core_id, (flow, arrivals)) in by_flow.iter().enumerate() {
        let mut dq: VecDeque<(Nanos, u64)> = VecDeque::new();
        let mut j = 0usize;
        let mut free: Nanos = 0;
        let mut first = true;
        let mut frozen = false;
        while j < arrivals.len() || !dq.is_empty() {
            if frozen {
                // Core busy past trace end: remaining arrivals only fill
                // the queue (or overflow it).
                if j >= arrivals.len() {
                    break;
                }
                let (t, seq) = arrivals[j];
                j += 1;
                if dq.len() >= params.nic_cap {
                    col.on_drop(DropCause::NicOverflow, seq, t);
                } else {
                    dq.push_back((t, seq));
                }
                continue;
            }
            let start = match dq.front() {
                Some(_) => free,
                None => {
                    if j >= arrivals.len() {
                        break;
                    }
                    free.max(arrivals[j].0)
                }
            };
            while j < arrivals.len() && arrivals[j].0 <= start {
                let (t, seq) = arrivals[j];
                j += 1;
                if dq.len() >= params.nic_cap {
                    col.on_drop(DropCause::NicOverflow, seq, t);
                } else {
                    dq.push_back((t, seq));
                }
            }
            if dq.is_empty() {
                continue;
            }
            let k = dq.len().min(batch_cap);
            let mut cost = (d + total) * k as u64;
            if first {
                cost += setup;
                first = false;
            }
            let done = start + cost;
            if done > params.trace_end_ns {
                frozen = true;
                continue;
            }
            col.mark_active(0, core_id, start, done);
            for _ in 0..k {
                let (t, seq) = dq.pop_front().unwrap();
                col.on_completion(*flow, seq, t, done);
            }
            free = done;
        }
        queued_total += dq.len() as u64;
    }
    col.finish(
        params.mode.name(),
        params.seed,
        params.config_hash,
        queued_total,
    )
}
