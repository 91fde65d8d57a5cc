//! Per-server re-packing of RSS buckets onto the fewest dedicated cores.
//!
//! Buckets carry measured packet rates and active-flow counts. A bucket
//! group fits a core when its aggregate rate stays under the long-term
//! threshold T at the group's aggregate flow count. The production path
//! is a two-phase greedy heuristic (relieve overloaded cores first-fit,
//! then reclaim the least loaded); `milp_exact` solves small instances
//! to provable optimality and exists for validation only.

use std::collections::VecDeque;

use thiserror::Error;

use crate::predictor::RateThresholdTable;
use crate::{mix64, FlowId, Nanos};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerMapperConfig {
    pub decision_interval_ns: Nanos,
    pub rss_update_delay_ns: Nanos,
    /// NIC backlog (packets) beyond which a dedicated core enters boost.
    pub boost_threshold: u64,
    /// Minimum spacing of on-demand remap invocations per server.
    pub on_demand_min_gap_ns: Nanos,
    /// Optional safety margin on T: capacity checks use T * (1 - margin).
    pub capacity_margin: f64,
    pub rss_buckets: usize,
}

impl Default for ServerMapperConfig {
    fn default() -> Self {
        ServerMapperConfig {
            decision_interval_ns: 1_000_000_000,
            rss_update_delay_ns: 2_000_000,
            boost_threshold: 256,
            on_demand_min_gap_ns: 5_000_000,
            capacity_margin: 0.0,
            rss_buckets: 512,
        }
    }
}

/// Deterministic RSS hash: bucket index of a flow.
pub fn bucket_of(flow: FlowId, buckets: usize) -> usize {
    (mix64(flow.0) % buckets as u64) as usize
}

/// Measured per-bucket load over one decision interval.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BucketStats {
    /// BR[j]: packet rate, packets/s.
    pub rate_pps: Vec<f64>,
    /// BF[j]: active flows, averaged over the interval.
    pub flows: Vec<f64>,
}

impl BucketStats {
    pub fn zeros(buckets: usize) -> Self {
        BucketStats {
            rate_pps: vec![0.0; buckets],
            flows: vec![0.0; buckets],
        }
    }

    pub fn len(&self) -> usize {
        self.rate_pps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rate_pps.is_empty()
    }
}

/// Bucket-to-core assignment. Every bucket maps to exactly one core;
/// a core is active iff it holds at least one bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreMapping {
    pub assignment: Vec<usize>,
    pub num_cores: usize,
}

impl CoreMapping {
    /// All buckets on one core.
    pub fn all_on_one(buckets: usize, num_cores: usize) -> Self {
        CoreMapping {
            assignment: vec![0; buckets],
            num_cores,
        }
    }

    /// Buckets striped round-robin over the first `cores` cores.
    pub fn round_robin(buckets: usize, cores: usize, num_cores: usize) -> Self {
        CoreMapping {
            assignment: (0..buckets).map(|j| j % cores.max(1)).collect(),
            num_cores,
        }
    }

    pub fn core_of(&self, bucket: usize) -> usize {
        self.assignment[bucket]
    }

    /// Aggregate (rate, flows) per core under `stats`.
    pub fn core_loads(&self, stats: &BucketStats) -> Vec<(f64, f64)> {
        let mut loads = vec![(0.0, 0.0); self.num_cores];
        for (j, &core) in self.assignment.iter().enumerate() {
            loads[core].0 += stats.rate_pps[j];
            loads[core].1 += stats.flows[j];
        }
        loads
    }

    pub fn active_cores(&self) -> usize {
        let mut seen = vec![false; self.num_cores];
        for &c in &self.assignment {
            seen[c] = true;
        }
        seen.iter().filter(|&&b| b).count()
    }

    /// Check the assignment constraints: totality is structural; verify
    /// bounds and that no active core exceeds its threshold.
    pub fn validate(
        &self,
        stats: &BucketStats,
        table: &RateThresholdTable,
        margin: f64,
    ) -> Result<(), MappingViolation> {
        if self.assignment.len() != stats.len() {
            return Err(MappingViolation::Shape);
        }
        if self.assignment.iter().any(|&c| c >= self.num_cores) {
            return Err(MappingViolation::Shape);
        }
        for (core, (rate, flows)) in self.core_loads(stats).into_iter().enumerate() {
            if !fits(rate, flows, table, margin) {
                return Err(MappingViolation::Overloaded { core, rate, flows });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MappingViolation {
    #[error("mapping shape does not match stats")]
    Shape,
    #[error("core {core} overloaded: {rate} pkts/s at {flows} flows")]
    Overloaded { core: usize, rate: f64, flows: f64 },
}

/// Capacity test for a core load: rate <= T[ceil(flows)] * (1 - margin).
/// Flow counts beyond the trained grid admit only zero rate.
pub fn fits(rate: f64, flows: f64, table: &RateThresholdTable, margin: f64) -> bool {
    let f = flows.ceil().max(0.0) as u64;
    rate <= table.threshold(f) * (1.0 - margin) + 1e-9
}

/// Result of one greedy remap pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RemapOutcome {
    pub mapping: CoreMapping,
    /// Buckets whose core changed.
    pub migrated: Vec<usize>,
    /// True when even all candidate cores cannot absorb the load; the
    /// returned mapping is best-effort.
    pub infeasible: bool,
}

/// Two-phase greedy repack.
///
/// Phase 1 relieves each overloaded core by evicting its largest-rate
/// buckets until the remainder fits, placing evictions first-fit into
/// existing active cores and opening a new core only when none fits.
/// Phase 2 repeatedly tries to empty the least-loaded core into the
/// others, reclaiming it on success, until no core can be reclaimed.
pub fn remap_greedy(
    stats: &BucketStats,
    current: &CoreMapping,
    table: &RateThresholdTable,
    margin: f64,
) -> RemapOutcome {
    let num_cores = current.num_cores;
    let mut assignment = current.assignment.clone();
    let mut loads = current.core_loads(stats);
    let mut infeasible = false;

    let active = |assignment: &Vec<usize>, core: usize| assignment.iter().any(|&c| c == core);

    // Phase 1: relieve overloads.
    let mut evicted: Vec<usize> = Vec::new();
    for core in 0..num_cores {
        if !active(&assignment, core) {
            continue;
        }
        if fits(loads[core].0, loads[core].1, table, margin) {
            continue;
        }
        // Evict the largest-rate buckets first: fastest relief per move.
        let mut members: Vec<usize> = (0..stats.len())
            .filter(|&j| assignment[j] == core)
            .collect();
        members.sort_by(|&a, &b| {
            stats.rate_pps[b]
                .partial_cmp(&stats.rate_pps[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        for j in members {
            if fits(loads[core].0, loads[core].1, table, margin) {
                break;
            }
            loads[core].0 -= stats.rate_pps[j];
            loads[core].1 -= stats.flows[j];
            evicted.push(j);
        }
    }

    // Place evicted buckets, largest rate first, first-fit by core index.
    evicted.sort_by(|&a, &b| {
        stats.rate_pps[b]
            .partial_cmp(&stats.rate_pps[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    for j in evicted {
        let mut placed = false;
        for core in 0..num_cores {
            if !active(&assignment, core) {
                continue;
            }
            if fits(
                loads[core].0 + stats.rate_pps[j],
                loads[core].1 + stats.flows[j],
                table,
                margin,
            ) {
                assignment[j] = core;
                loads[core].0 += stats.rate_pps[j];
                loads[core].1 += stats.flows[j];
                placed = true;
                break;
            }
        }
        if placed {
            continue;
        }
        // Open the lowest-index idle core.
        if let Some(core) =
            (0..num_cores).find(|&c| !active(&assignment, c))
        {
            assignment[j] = core;
            loads[core].0 += stats.rate_pps[j];
            loads[core].1 += stats.flows[j];
        } else {
            // Out of cores: best-effort on the least-loaded core by rate.
            infeasible = true;
            let core = (0..num_cores)
                .min_by(|&a, &b| loads[a].0.partial_cmp(&loads[b].0).unwrap())
                .unwrap();
            assignment[j] = core;
            loads[core].0 += stats.rate_pps[j];
            loads[core].1 += stats.flows[j];
        }
    }

    // Phase 2: reclaim cores, least loaded first.
    loop {
        let mut candidates: Vec<usize> = (0..num_cores)
            .filter(|&c| active(&assignment, c))
            .collect();
        if candidates.len() <= 1 {
            break;
        }
        candidates.sort_by(|&a, &b| {
            loads[a].0.partial_cmp(&loads[b].0).unwrap().then(a.cmp(&b))
        });
        let mut reclaimed = false;
        for &victim in &candidates {
            let mut members: Vec<usize> = (0..stats.len())
                .filter(|&j| assignment[j] == victim)
                .collect();
            members.sort_by(|&a, &b| {
                stats.rate_pps[b]
                    .partial_cmp(&stats.rate_pps[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut trial_loads = loads.clone();
            let mut moves: Vec<(usize, usize)> = Vec::new();
            let mut ok = true;
            for &j in &members {
                let mut placed = false;
                for core in 0..num_cores {
                    if core == victim || !active(&assignment, core) {
                        continue;
                    }
                    if fits(
                        trial_loads[core].0 + stats.rate_pps[j],
                        trial_loads[core].1 + stats.flows[j],
                        table,
                        margin,
                    ) {
                        trial_loads[core].0 += stats.rate_pps[j];
                        trial_loads[core].1 += stats.flows[j];
                        moves.push((j, core));
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    ok = false;
                    break;
                }
            }
            if ok {
                for (j, core) in moves {
                    assignment[j] = core;
                }
                trial_loads[victim] = (0.0, 0.0);
                loads = trial_loads;
                reclaimed = true;
                break;
            }
        }
        if !reclaimed {
            break;
        }
    }

    let migrated: Vec<usize> = (0..stats.len())
        .filter(|&j| assignment[j] != current.assignment[j])
        .collect();
    RemapOutcome {
        mapping: CoreMapping {
            assignment,
            num_cores,
        },
        migrated,
        infeasible,
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MilpError {
    #[error("instance too large for the exact oracle: F={0}, C={1} (limits 12, 6)")]
    TooLarge(usize, usize),
    #[error("no feasible assignment exists with {0} cores")]
    Infeasible(usize),
}

/// Provably minimal active-core count and a witness mapping, by
/// branch-and-bound over bucket-to-group assignments with symmetry
/// breaking. A test oracle for small instances, never a production path.
pub fn milp_exact(
    stats: &BucketStats,
    table: &RateThresholdTable,
    num_cores: usize,
    margin: f64,
) -> Result<(usize, CoreMapping), MilpError> {
    let f = stats.len();
    if f > 12 || num_cores > 6 {
        return Err(MilpError::TooLarge(f, num_cores));
    }

    struct Search<'a> {
        stats: &'a BucketStats,
        table: &'a RateThresholdTable,
        margin: f64,
        num_cores: usize,
        best: Option<(usize, Vec<usize>)>,
    }

    fn dfs(
        s: &mut Search,
        bucket: usize,
        groups: &mut Vec<(f64, f64)>,
        assignment: &mut Vec<usize>,
    ) {
        // Bound: the final group count is at least the current one, so
        // anything not strictly better than the incumbent is pruned.
        if let Some((best_n, _)) = &s.best {
            if groups.len() >= *best_n {
                return;
            }
        }
        if bucket == assignment.len() {
            s.best = Some((groups.len(), assignment.clone()));
            return;
        }
        let (br, bf) = (s.stats.rate_pps[bucket], s.stats.flows[bucket]);
        for g in 0..groups.len() {
            if fits(groups[g].0 + br, groups[g].1 + bf, s.table, s.margin) {
                groups[g].0 += br;
                groups[g].1 += bf;
                assignment[bucket] = g;
                dfs(s, bucket + 1, groups, assignment);
                groups[g].0 -= br;
                groups[g].1 -= bf;
            }
        }
        // Symmetry break: a new group is always "the next" group.
        let opening_helps = s
            .best
            .as_ref()
            .map_or(true, |(b, _)| groups.len() + 1 < *b);
        if groups.len() < s.num_cores && opening_helps && fits(br, bf, s.table, s.margin) {
            groups.push((br, bf));
            assignment[bucket] = groups.len() - 1;
            dfs(s, bucket + 1, groups, assignment);
            groups.pop();
        }
    }

    let mut search = Search {
        stats,
        table,
        margin,
        num_cores,
        best: None,
    };
    let mut assignment = vec![0usize; f];
    if f == 0 {
        return Ok((
            0,
            CoreMapping {
                assignment,
                num_cores,
            },
        ));
    }
    dfs(&mut search, 0, &mut Vec::new(), &mut assignment);
    match search.best {
        Some((n, witness)) => Ok((
            n,
            CoreMapping {
                assignment: witness,
                num_cores,
            },
        )),
        None => Err(MilpError::Infeasible(num_cores)),
    }
}

/// Make-before-break mapping installation: the new table takes effect a
/// fixed delay after the request, and overlapping requests queue behind
/// the pending one.
#[derive(Debug, Clone)]
pub struct MappingInstaller {
    pub current: CoreMapping,
    pending: VecDeque<(Nanos, CoreMapping)>,
}

impl MappingInstaller {
    pub fn new(initial: CoreMapping) -> Self {
        MappingInstaller {
            current: initial,
            pending: VecDeque::new(),
        }
    }

    /// Request an install at `now`; returns the time the mapping becomes
    /// effective. Packets arriving before that follow the old mapping.
    pub fn install(&mut self, mapping: CoreMapping, now: Nanos, delay: Nanos) -> Nanos {
        let base = self
            .pending
            .back()
            .map(|(t, _)| *t)
            .unwrap_or(0)
            .max(now);
        let effective = base + delay;
        self.pending.push_back((effective, mapping));
        effective
    }

    /// Apply any pending mapping whose effective time has arrived.
    /// Returns true if the current mapping changed.
    pub fn advance(&mut self, now: Nanos) -> bool {
        let mut changed = false;
        while let Some((t, _)) = self.pending.front() {
            if *t <= now {
                let (_, m) = self.pending.pop_front().unwrap();
                self.current = m;
                changed = true;
            } else {
                break;
            }
        }
        changed
    }

    pub fn next_effective(&self) -> Option<Nanos> {
        self.pending.front().map(|(t, _)| *t)
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }
}

/// Boost-mode transition for a dedicated core, evaluated each epoch
/// boundary against the NIC backlog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoostDecision {
    Enter,
    Exit,
    Stay,
}

pub fn boost_check(in_boost: bool, nic_backlog: u64, threshold: u64) -> BoostDecision {
    if !in_boost && nic_backlog > threshold {
        BoostDecision::Enter
    } else if in_boost && nic_backlog == 0 {
        BoostDecision::Exit
    } else {
        BoostDecision::Stay
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(entries: &[(u64, f64)]) -> RateThresholdTable {
        let t = RateThresholdTable {
            chain_hash: 0,
            slo_ns: 200_000,
            entries: entries.to_vec(),
        };
        t.validate().unwrap();
        t
    }

    fn flat_table(rate: f64, max_f: u64) -> RateThresholdTable {
        table(&[(max_f, rate)])
    }

    #[test]
    fn trivially_packable_single_core() {
        let t = flat_table(100_000.0, 1000);
        let stats = BucketStats {
            rate_pps: vec![10_000.0, 5_000.0, 1_000.0],
            flows: vec![10.0, 5.0, 1.0],
        };
        let current = CoreMapping::round_robin(3, 3, 4);
        let out = remap_greedy(&stats, &current, &t, 0.0);
        assert!(!out.infeasible);
        assert_eq!(out.mapping.active_cores(), 1);
        out.mapping.validate(&stats, &t, 0.0).unwrap();
    }

    #[test]
    fn phase1_moves_minimal_overflow() {
        // Core 0 holds buckets 0,1,2 and is overloaded by exactly one
        // bucket's worth; core 1 has room. Exactly one bucket moves.
        let t = flat_table(100.0, 1000);
        let stats = BucketStats {
            rate_pps: vec![60.0, 50.0, 10.0, 40.0],
            flows: vec![1.0, 1.0, 1.0, 1.0],
        };
        let current = CoreMapping {
            assignment: vec![0, 0, 0, 1],
            num_cores: 2,
        };
        let out = remap_greedy(&stats, &current, &t, 0.0);
        assert!(!out.infeasible);
        out.mapping.validate(&stats, &t, 0.0).unwrap();
        // Largest-rate bucket 0 (60) moves to core 1 (40+60=100 fits);
        // everything else stays.
        assert_eq!(out.migrated, vec![0]);
        assert_eq!(out.mapping.assignment, vec![1, 0, 0, 1]);
    }

    #[test]
    fn idempotent_on_feasible_compact_mapping() {
        let t = flat_table(100.0, 1000);
        let stats = BucketStats {
            rate_pps: vec![60.0, 50.0, 60.0, 30.0],
            flows: vec![1.0; 4],
        };
        let current = CoreMapping {
            assignment: vec![0, 0, 1, 1],
            num_cores: 4,
        };
        // 110 > 100: first remap fixes it.
        let out = remap_greedy(&stats, &current, &t, 0.0);
        out.mapping.validate(&stats, &t, 0.0).unwrap();
        // A second remap changes nothing.
        let out2 = remap_greedy(&stats, &out.mapping, &t, 0.0);
        assert!(out2.migrated.is_empty());
        assert_eq!(out2.mapping, out.mapping);
    }

    #[test]
    fn phase2_reclaims_emptyable_core() {
        let t = flat_table(100.0, 1000);
        let stats = BucketStats {
            rate_pps: vec![40.0, 40.0, 10.0],
            flows: vec![1.0; 3],
        };
        let current = CoreMapping {
            assignment: vec![0, 1, 2],
            num_cores: 3,
        };
        let out = remap_greedy(&stats, &current, &t, 0.0);
        assert_eq!(out.mapping.active_cores(), 1, "40+40+10 fits one core");
    }

    #[test]
    fn milp_pigeonhole() {
        let t = flat_table(100.0, 1000);
        let stats = BucketStats {
            rate_pps: vec![100.0, 100.0],
            flows: vec![1.0, 1.0],
        };
        let (n, m) = milp_exact(&stats, &t, 4, 0.0).unwrap();
        assert_eq!(n, 2);
        m.validate(&stats, &t, 0.0).unwrap();
    }

    #[test]
    fn milp_zero_rates_still_assigns() {
        let t = flat_table(100.0, 1000);
        let stats = BucketStats {
            rate_pps: vec![0.0; 5],
            flows: vec![0.0; 5],
        };
        let (n, m) = milp_exact(&stats, &t, 3, 0.0).unwrap();
        assert_eq!(n, 1);
        assert!(m.assignment.iter().all(|&c| c == 0));
    }

    #[test]
    fn milp_refuses_large_instances() {
        let t = flat_table(100.0, 1000);
        let stats = BucketStats {
            rate_pps: vec![1.0; 13],
            flows: vec![1.0; 13],
        };
        assert!(matches!(
            milp_exact(&stats, &t, 4, 0.0),
            Err(MilpError::TooLarge(13, 4))
        ));
    }

    /// Full-enumeration oracle on F=6, C=3: check milp_exact against
    /// every one of the 3^6 assignments.
    #[test]
    fn milp_matches_full_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = table(&[(4, 120.0), (16, 80.0), (64, 50.0)]);
        for _ in 0..40 {
            let stats = BucketStats {
                rate_pps: (0..6).map(|_| rng.gen_range(0.0..60.0)).collect(),
                flows: (0..6).map(|_| rng.gen_range(0.0..8.0)).collect(),
            };
            let mut best: Option<usize> = None;
            for code in 0..3usize.pow(6) {
                let mut c = code;
                let mut assignment = [0usize; 6];
                for a in assignment.iter_mut() {
                    *a = c % 3;
                    c /= 3;
                }
                let m = CoreMapping {
                    assignment: assignment.to_vec(),
                    num_cores: 3,
                };
                if m.validate(&stats, &t, 0.0).is_ok() {
                    let n = m.active_cores();
                    best = Some(best.map_or(n, |b: usize| b.min(n)));
                }
            }
            match (milp_exact(&stats, &t, 3, 0.0), best) {
                (Ok((n, m)), Some(b)) => {
                    assert_eq!(n, b);
                    m.validate(&stats, &t, 0.0).unwrap();
                    assert_eq!(m.active_cores(), n);
                }
                (Err(MilpError::Infeasible(_)), None) => {}
                (got, want) => panic!("milp {got:?} vs enumeration {want:?}"),
            }
        }
    }

    #[test]
    fn greedy_never_beats_milp() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let t = table(&[(8, 100.0), (32, 70.0), (128, 40.0)]);
        for _ in 0..100 {
            let f = rng.gen_range(2..=8usize);
            let stats = BucketStats {
                rate_pps: (0..f).map(|_| rng.gen_range(0.0..35.0)).collect(),
                flows: (0..f).map(|_| rng.gen_range(0.0..6.0)).collect(),
            };
            let current = CoreMapping::all_on_one(f, 4);
            let out = remap_greedy(&stats, &current, &t, 0.0);
            if out.infeasible {
                continue;
            }
            out.mapping.validate(&stats, &t, 0.0).unwrap();
            if let Ok((opt, _)) = milp_exact(&stats, &t, 4, 0.0) {
                assert!(
                    opt <= out.mapping.active_cores(),
                    "milp {} > greedy {}",
                    opt,
                    out.mapping.active_cores()
                );
            }
        }
    }

    #[test]
    fn installer_delays_and_queues() {
        let initial = CoreMapping::all_on_one(4, 2);
        let mut inst = MappingInstaller::new(initial.clone());
        let m1 = CoreMapping::round_robin(4, 2, 2);
        let t1 = inst.install(m1.clone(), 1_000_000, 2_000_000);
        assert_eq!(t1, 3_000_000);
        // Overlapping install queues behind the first.
        let m2 = CoreMapping::all_on_one(4, 2);
        let t2 = inst.install(m2.clone(), 1_500_000, 2_000_000);
        assert_eq!(t2, 5_000_000);
        assert!(!inst.advance(2_999_999));
        assert_eq!(inst.current, initial);
        assert!(inst.advance(3_000_000));
        assert_eq!(inst.current, m1);
        assert!(inst.advance(5_000_000));
        assert_eq!(inst.current, m2);
    }

    #[test]
    fn installer_zero_delay_is_immediate() {
        let mut inst = MappingInstaller::new(CoreMapping::all_on_one(2, 1));
        let m = CoreMapping::round_robin(2, 1, 1);
        let t = inst.install(m.clone(), 42, 0);
        assert_eq!(t, 42);
        assert!(inst.advance(42));
        assert_eq!(inst.current, m);
    }

    #[test]
    fn boost_transitions() {
        assert_eq!(boost_check(false, 300, 256), BoostDecision::Enter);
        assert_eq!(boost_check(false, 0, 256), BoostDecision::Stay);
        assert_eq!(boost_check(false, 256, 256), BoostDecision::Stay);
        assert_eq!(boost_check(true, 0, 256), BoostDecision::Exit);
        assert_eq!(boost_check(true, 10, 256), BoostDecision::Stay);
    }

    #[test]
    fn bucket_hash_deterministic_and_spread() {
        let buckets = 512;
        let a = bucket_of(FlowId(12345), buckets);
        assert_eq!(a, bucket_of(FlowId(12345), buckets));
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..4096u64 {
            seen.insert(bucket_of(FlowId(i), buckets));
        }
        assert!(seen.len() > 400, "poor dispersion: {}", seen.len());
    }
}
