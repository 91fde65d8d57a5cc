//! Core capacity predictors.
//!
//! Two predictors drive scaling decisions. The short-term predictor is a
//! Pareto frontier over ⟨active flows, packets⟩ per epoch: a core can
//! drain a backlog within one epoch iff the backlog lies on or under the
//! frontier. One frontier exists per chain split level (level 1 is the
//! dedicated, unsplit core). The long-term predictor is a table T[f] of
//! the maximum sustainable packet rate per active-flow count, used by
//! the server mapper to pack RSS buckets.
//!
//! Training procedures live in [`train`]; the trained tables are
//! immutable afterward and serialize to versioned text files.

pub mod train;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

use crate::FlowId;
use crate::Nanos;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("predictor file line {0}: {1}")]
    Parse(usize, String),
    #[error("predictor was trained for chain {expected:#x}, not {found:#x}")]
    ChainMismatch { expected: u64, found: u64 },
    #[error("frontier invariant violated: {0}")]
    Invalid(String),
    #[error("training produced no SLO-violating epochs at split level {0}")]
    Unconstrained(usize),
    #[error("even the minimum probe rate violates the SLO at f={0}")]
    Infeasible(u64),
}

/// One trained capacity point: with `f` active flows, the core processed
/// at most `p` packets inside an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrontierPoint {
    pub f: u64,
    pub p: u64,
}

/// Envelope of per-epoch core capacity in the ⟨flows, packets⟩ space.
/// `f` strictly increases across points, `p` never increases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapacityFrontier {
    pub epoch_ns: Nanos,
    pub points: Vec<FrontierPoint>,
}

impl CapacityFrontier {
    /// Build from raw (f, p) observations: keep the max p per f, then
    /// enforce a non-increasing envelope by sweeping from high f down,
    /// lifting each p to at least the best capacity seen at higher f.
    pub fn from_observations(epoch_ns: Nanos, obs: &[(u64, u64)]) -> Self {
        let mut best: BTreeMap<u64, u64> = BTreeMap::new();
        for &(f, p) in obs {
            let e = best.entry(f).or_insert(0);
            *e = (*e).max(p);
        }
        let mut points: Vec<FrontierPoint> =
            best.into_iter().map(|(f, p)| FrontierPoint { f, p }).collect();
        let mut running = 0u64;
        for pt in points.iter_mut().rev() {
            running = running.max(pt.p);
            pt.p = running;
        }
        points.retain(|pt| pt.p > 0);
        CapacityFrontier { epoch_ns, points }
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        for w in self.points.windows(2) {
            if w[1].f <= w[0].f {
                return Err(PredictorError::Invalid(format!(
                    "f not strictly increasing at {}",
                    w[1].f
                )));
            }
            if w[1].p > w[0].p {
                return Err(PredictorError::Invalid(format!(
                    "p increases at f={}",
                    w[1].f
                )));
            }
        }
        if self.points.iter().any(|pt| pt.p == 0 || pt.f == 0 && pt.p == 0) {
            return Err(PredictorError::Invalid("zero point".into()));
        }
        Ok(())
    }

    /// Can a core drain a backlog of `f` flows and `p` packets within one
    /// epoch? Lookups for untrained `f` step to the nearest trained
    /// f' >= f (conservative); `f` beyond the grid admits only p = 0.
    pub fn admits(&self, f: u64, p: u64) -> bool {
        if p == 0 {
            return true;
        }
        match self.points.iter().find(|pt| pt.f >= f) {
            Some(pt) => p <= pt.p,
            None => false,
        }
    }

    /// Largest packet budget available at flow count `f` (0 beyond grid).
    pub fn budget(&self, f: u64) -> u64 {
        self.points.iter().find(|pt| pt.f >= f).map_or(0, |pt| pt.p)
    }

    pub fn max_p(&self) -> u64 {
        self.points.first().map_or(0, |pt| pt.p)
    }

    pub fn min_p(&self) -> u64 {
        self.points.last().map_or(0, |pt| pt.p)
    }

    pub fn max_f(&self) -> u64 {
        self.points.last().map_or(0, |pt| pt.f)
    }

    /// Constant-capacity variant used by the static ablations.
    fn constant(&self, p: u64) -> CapacityFrontier {
        CapacityFrontier {
            epoch_ns: self.epoch_ns,
            points: vec![FrontierPoint { f: self.max_f(), p }],
        }
    }
}

/// Frontiers for every profiled split level, keyed by core-group size.
/// Level 1 must always be present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrontierFamily {
    pub chain_hash: u64,
    pub epoch_ns: Nanos,
    pub slo_ns: Nanos,
    pub levels: BTreeMap<usize, CapacityFrontier>,
}

impl FrontierFamily {
    pub fn level(&self, n: usize) -> Option<&CapacityFrontier> {
        self.levels.get(&n)
    }

    pub fn level1(&self) -> &CapacityFrontier {
        self.levels.get(&1).expect("frontier family missing level 1")
    }

    pub fn max_level(&self) -> usize {
        self.levels.keys().copied().max().unwrap_or(1)
    }

    /// Static-safe ablation: every level collapses to its minimum trained
    /// packet budget, ignoring the flow count.
    pub fn static_safe(&self) -> FrontierFamily {
        self.map_levels(|fr| fr.constant(fr.min_p()))
    }

    /// Static-unsafe ablation: every level collapses to its maximum
    /// trained packet budget.
    pub fn static_unsafe(&self) -> FrontierFamily {
        self.map_levels(|fr| fr.constant(fr.max_p()))
    }

    fn map_levels(&self, f: impl Fn(&CapacityFrontier) -> CapacityFrontier) -> FrontierFamily {
        FrontierFamily {
            chain_hash: self.chain_hash,
            epoch_ns: self.epoch_ns,
            slo_ns: self.slo_ns,
            levels: self.levels.iter().map(|(k, v)| (*k, f(v))).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        if !self.levels.contains_key(&1) {
            return Err(PredictorError::Invalid("missing level-1 frontier".into()));
        }
        for fr in self.levels.values() {
            fr.validate()?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), PredictorError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "nfsim-frontier v1")?;
        writeln!(w, "chain_hash={:016x}", self.chain_hash)?;
        writeln!(w, "epoch_ns={}", self.epoch_ns)?;
        writeln!(w, "slo_ns={}", self.slo_ns)?;
        for (level, fr) in &self.levels {
            writeln!(w, "split={level}")?;
            for pt in &fr.points {
                writeln!(w, "{},{}", pt.f, pt.p)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Load and validate. `expected_chain` guards against pairing a
    /// predictor with a chain it was not trained for.
    pub fn load(path: &Path, expected_chain: Option<u64>) -> Result<Self, PredictorError> {
        let file = std::fs::File::open(path)?;
        let mut lines = std::io::BufReader::new(file).lines().enumerate();
        let mut next = |tag: &str| -> Result<(usize, String), PredictorError> {
            lines
                .next()
                .ok_or_else(|| PredictorError::Parse(0, format!("missing {tag}")))
                .and_then(|(i, l)| Ok((i + 1, l?)))
        };
        let (n, magic) = next("magic")?;
        if magic.trim() != "nfsim-frontier v1" {
            return Err(PredictorError::Parse(n, "bad magic".into()));
        }
        let mut header = |key: &str| -> Result<String, PredictorError> {
            let (n, line) = next(key)?;
            line.strip_prefix(&format!("{key}="))
                .map(str::to_string)
                .ok_or_else(|| PredictorError::Parse(n, format!("expected {key}=")))
        };
        let chain_hash = u64::from_str_radix(&header("chain_hash")?, 16)
            .map_err(|e| PredictorError::Parse(2, e.to_string()))?;
        let epoch_ns: Nanos = header("epoch_ns")?
            .parse()
            .map_err(|e: std::num::ParseIntError| PredictorError::Parse(3, e.to_string()))?;
        let slo_ns: Nanos = header("slo_ns")?
            .parse()
            .map_err(|e: std::num::ParseIntError| PredictorError::Parse(4, e.to_string()))?;
        if let Some(expected) = expected_chain {
            if expected != chain_hash {
                return Err(PredictorError::ChainMismatch {
                    expected,
                    found: chain_hash,
                });
            }
        }
        let mut levels = BTreeMap::new();
        let mut current: Option<(usize, Vec<FrontierPoint>)> = None;
        for (i, line) in lines {
            let n = i + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(l) = line.strip_prefix("split=") {
                if let Some((lvl, pts)) = current.take() {
                    levels.insert(lvl, CapacityFrontier { epoch_ns, points: pts });
                }
                let lvl: usize = l
                    .parse()
                    .map_err(|e: std::num::ParseIntError| PredictorError::Parse(n, e.to_string()))?;
                current = Some((lvl, Vec::new()));
            } else {
                let (f, p) = line
                    .split_once(',')
                    .ok_or_else(|| PredictorError::Parse(n, "expected f,p".into()))?;
                let pt = FrontierPoint {
                    f: f.trim()
                        .parse()
                        .map_err(|e: std::num::ParseIntError| PredictorError::Parse(n, e.to_string()))?,
                    p: p.trim()
                        .parse()
                        .map_err(|e: std::num::ParseIntError| PredictorError::Parse(n, e.to_string()))?,
                };
                current
                    .as_mut()
                    .ok_or_else(|| PredictorError::Parse(n, "point before split header".into()))?
                    .1
                    .push(pt);
            }
        }
        if let Some((lvl, pts)) = current.take() {
            levels.insert(lvl, CapacityFrontier { epoch_ns, points: pts });
        }
        let fam = FrontierFamily {
            chain_hash,
            epoch_ns,
            slo_ns,
            levels,
        };
        fam.validate()?;
        Ok(fam)
    }
}

/// Long-term capacity table: T[f] is the largest packet rate (pkts/s) a
/// dedicated core sustains at active-flow count f without violating the
/// SLO. Non-increasing in f.
#[derive(Debug, Clone, PartialEq)]
pub struct RateThresholdTable {
    pub chain_hash: u64,
    pub slo_ns: Nanos,
    /// (flow count, packets/s), flow counts strictly increasing.
    pub entries: Vec<(u64, f64)>,
}

impl RateThresholdTable {
    /// Threshold lookup, stepping to the nearest grid point >= f
    /// (conservative). Beyond the grid nothing is admitted.
    pub fn threshold(&self, f: u64) -> f64 {
        self.entries
            .iter()
            .find(|(grid_f, _)| *grid_f >= f)
            .map_or(0.0, |(_, t)| *t)
    }

    pub fn max_f(&self) -> u64 {
        self.entries.last().map_or(0, |(f, _)| *f)
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        for w in self.entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(PredictorError::Invalid("flow grid not increasing".into()));
            }
            if w[1].1 > w[0].1 + 1e-9 {
                return Err(PredictorError::Invalid(format!(
                    "T increases at f={}",
                    w[1].0
                )));
            }
        }
        if self.entries.iter().any(|(_, t)| *t < 0.0) {
            return Err(PredictorError::Invalid("negative threshold".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), PredictorError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "nfsim-thresholds v1")?;
        writeln!(w, "chain_hash={:016x}", self.chain_hash)?;
        writeln!(w, "slo_ns={}", self.slo_ns)?;
        for (f, t) in &self.entries {
            writeln!(w, "{f},{t}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, expected_chain: Option<u64>) -> Result<Self, PredictorError> {
        let file = std::fs::File::open(path)?;
        let mut lines = std::io::BufReader::new(file).lines().enumerate();
        let mut next = |tag: &str| -> Result<(usize, String), PredictorError> {
            lines
                .next()
                .ok_or_else(|| PredictorError::Parse(0, format!("missing {tag}")))
                .and_then(|(i, l)| Ok((i + 1, l?)))
        };
        let (n, magic) = next("magic")?;
        if magic.trim() != "nfsim-thresholds v1" {
            return Err(PredictorError::Parse(n, "bad magic".into()));
        }
        let (n, ch) = next("chain_hash")?;
        let chain_hash = ch
            .strip_prefix("chain_hash=")
            .ok_or_else(|| PredictorError::Parse(n, "expected chain_hash=".into()))
            .and_then(|v| {
                u64::from_str_radix(v, 16).map_err(|e| PredictorError::Parse(n, e.to_string()))
            })?;
        let (n, sl) = next("slo_ns")?;
        let slo_ns: Nanos = sl
            .strip_prefix("slo_ns=")
            .ok_or_else(|| PredictorError::Parse(n, "expected slo_ns=".into()))
            .and_then(|v| v.parse().map_err(|e: std::num::ParseIntError| {
                PredictorError::Parse(n, e.to_string())
            }))?;
        if let Some(expected) = expected_chain {
            if expected != chain_hash {
                return Err(PredictorError::ChainMismatch {
                    expected,
                    found: chain_hash,
                });
            }
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (f, t) = line
                .split_once(',')
                .ok_or_else(|| PredictorError::Parse(n, "expected f,T".into()))?;
            entries.push((
                f.parse()
                    .map_err(|e: std::num::ParseIntError| PredictorError::Parse(n, e.to_string()))?,
                t.parse()
                    .map_err(|e: std::num::ParseFloatError| PredictorError::Parse(n, e.to_string()))?,
            ));
        }
        let table = RateThresholdTable {
            chain_hash,
            slo_ns,
            entries,
        };
        table.validate()?;
        Ok(table)
    }
}

/// Default flow-count grid for the long-term table: powers of two up to
/// 4096.
pub fn default_flow_grid() -> Vec<u64> {
    (0..=12).map(|i| 1u64 << i).collect()
}

/// One flow's share of a backlog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowBacklog {
    pub flow: FlowId,
    pub packets: u64,
}

/// A per-core share of a partitioned backlog.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BacklogShare {
    pub flows: Vec<FlowId>,
    pub packets: u64,
}

impl BacklogShare {
    pub fn flow_count(&self) -> u64 {
        self.flows.len() as u64
    }
}

/// Result of splitting a backlog across the dedicated core and
/// auxiliary cores. `shares[0]` is the dedicated core's retained share
/// (possibly empty). Whale flows — single flows whose own backlog
/// exceeds the unsplit frontier — are flagged for split planning rather
/// than included in a share, so flows and packets are conserved across
/// `shares` plus `whales`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BacklogPartition {
    pub shares: Vec<BacklogShare>,
    pub whales: Vec<FlowBacklog>,
}

impl BacklogPartition {
    pub fn aux_shares(&self) -> usize {
        self.shares.len().saturating_sub(1)
    }
}

/// Greedily partition a backlog into per-core shares that each satisfy
/// the level-1 frontier. Flows are examined in ascending backlog size;
/// the dedicated core retains greedily, overflow goes first-fit into
/// already-opened auxiliary shares, and a new share opens only when
/// nothing fits.
pub fn partition_backlog(
    frontier: &CapacityFrontier,
    backlog: &[FlowBacklog],
) -> BacklogPartition {
    let mut sorted: Vec<FlowBacklog> = backlog.to_vec();
    sorted.sort_by_key(|b| (b.packets, b.flow));

    let mut shares: Vec<BacklogShare> = vec![BacklogShare::default()];
    let mut whales = Vec::new();
    for fb in sorted {
        if !frontier.admits(1, fb.packets) {
            whales.push(fb);
            continue;
        }
        let mut placed = false;
        for share in shares.iter_mut() {
            if frontier.admits(share.flow_count() + 1, share.packets + fb.packets) {
                share.flows.push(fb.flow);
                share.packets += fb.packets;
                placed = true;
                break;
            }
        }
        if !placed {
            shares.push(BacklogShare {
                flows: vec![fb.flow],
                packets: fb.packets,
            });
        }
    }
    BacklogPartition { shares, whales }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frontier(points: &[(u64, u64)]) -> CapacityFrontier {
        let fr = CapacityFrontier {
            epoch_ns: 100_000,
            points: points.iter().map(|&(f, p)| FrontierPoint { f, p }).collect(),
        };
        fr.validate().unwrap();
        fr
    }

    #[test]
    fn admits_paper_example() {
        // A core trained to <55, 64> cannot process a backlog of <55, 220>.
        let fr = frontier(&[(55, 64)]);
        assert!(!fr.admits(55, 220));
        assert!(fr.admits(55, 64));
    }

    #[test]
    fn admits_edges() {
        let fr = frontier(&[(1, 160), (32, 96), (64, 32)]);
        assert!(fr.admits(0, 0));
        for pt in &fr.points {
            assert!(fr.admits(pt.f, pt.p));
        }
        // Untrained f steps up to the nearest trained point.
        assert!(fr.admits(10, 96));
        assert!(!fr.admits(10, 97));
        // Beyond the grid only an empty backlog is admitted.
        assert!(!fr.admits(65, 1));
        assert!(fr.admits(65, 0));
    }

    #[test]
    fn admits_monotone() {
        let fr = frontier(&[(1, 160), (32, 96), (64, 32)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let f = rng.gen_range(0..80u64);
            let p = rng.gen_range(0..200u64);
            if fr.admits(f, p) {
                assert!(fr.admits(f.saturating_sub(rng.gen_range(0..=f)), p));
                assert!(fr.admits(f, p.saturating_sub(rng.gen_range(0..=p))));
            }
        }
    }

    #[test]
    fn envelope_construction() {
        // Raw observations with noise; envelope takes per-f maxima and is
        // lifted to be non-increasing from the right.
        let fr = CapacityFrontier::from_observations(
            100_000,
            &[(5, 40), (5, 64), (1, 50), (9, 70), (12, 32)],
        );
        // f=1 lifts to at least the f=9 capacity (70), f=5 likewise.
        assert_eq!(
            fr.points,
            vec![
                FrontierPoint { f: 1, p: 70 },
                FrontierPoint { f: 5, p: 70 },
                FrontierPoint { f: 9, p: 70 },
                FrontierPoint { f: 12, p: 32 },
            ]
        );
        fr.validate().unwrap();
    }

    #[test]
    fn static_variants() {
        let fam = FrontierFamily {
            chain_hash: 1,
            epoch_ns: 100_000,
            slo_ns: 200_000,
            levels: [(1usize, frontier(&[(1, 160), (64, 32)]))].into_iter().collect(),
        };
        assert_eq!(fam.static_safe().level1().budget(1), 32);
        assert_eq!(fam.static_unsafe().level1().budget(64), 160);
    }

    #[test]
    fn partition_three_groups() {
        // 55 flows, 220 packets, against a frontier where no two shares
        // can cover the whole backlog: exactly three shares emerge.
        let fr = frontier(&[(26, 96), (55, 64)]);
        let backlog: Vec<FlowBacklog> = (0..55)
            .map(|i| FlowBacklog {
                flow: FlowId(i),
                packets: 4,
            })
            .collect();
        let part = partition_backlog(&fr, &backlog);
        assert_eq!(part.whales.len(), 0);
        assert_eq!(part.shares.len(), 3);
        let fsum: u64 = part.shares.iter().map(|s| s.flow_count()).sum();
        let psum: u64 = part.shares.iter().map(|s| s.packets).sum();
        assert_eq!((fsum, psum), (55, 220));
        for s in &part.shares {
            assert!(fr.admits(s.flow_count(), s.packets));
        }
    }

    #[test]
    fn partition_admitted_is_single_share() {
        let fr = frontier(&[(26, 96), (55, 64)]);
        let backlog = vec![
            FlowBacklog { flow: FlowId(1), packets: 10 },
            FlowBacklog { flow: FlowId(2), packets: 20 },
        ];
        let part = partition_backlog(&fr, &backlog);
        assert_eq!(part.shares.len(), 1);
        assert!(part.whales.is_empty());
    }

    #[test]
    fn partition_flags_whales() {
        let fr = frontier(&[(26, 96)]);
        let backlog = vec![
            FlowBacklog { flow: FlowId(1), packets: 500 },
            FlowBacklog { flow: FlowId(2), packets: 20 },
        ];
        let part = partition_backlog(&fr, &backlog);
        assert_eq!(part.whales, vec![FlowBacklog { flow: FlowId(1), packets: 500 }]);
        let total: u64 = part.shares.iter().map(|s| s.packets).sum::<u64>()
            + part.whales.iter().map(|w| w.packets).sum::<u64>();
        assert_eq!(total, 520);
    }

    /// Exhaustive set-partition oracle: minimal number of frontier-
    /// admissible groups covering all flows.
    fn minimal_partitions(fr: &CapacityFrontier, backlog: &[FlowBacklog]) -> Option<usize> {
        fn rec(
            fr: &CapacityFrontier,
            rest: &[FlowBacklog],
            groups: &mut Vec<(u64, u64)>,
            best: &mut Option<usize>,
        ) {
            if let Some(b) = *best {
                if groups.len() >= b {
                    return;
                }
            }
            let Some((first, tail)) = rest.split_first() else {
                let n = groups.len();
                if best.map_or(true, |b| n < b) {
                    *best = Some(n);
                }
                return;
            };
            for i in 0..groups.len() {
                let (gf, gp) = groups[i];
                if fr.admits(gf + 1, gp + first.packets) {
                    groups[i] = (gf + 1, gp + first.packets);
                    rec(fr, tail, groups, best);
                    groups[i] = (gf, gp);
                }
            }
            if fr.admits(1, first.packets) {
                groups.push((1, first.packets));
                rec(fr, tail, groups, best);
                groups.pop();
            }
        }
        let mut best = None;
        rec(fr, backlog, &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn partition_near_optimal_on_small_instances() {
        let fr = frontier(&[(3, 60), (6, 40), (10, 25)]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.gen_range(1..=10);
            let backlog: Vec<FlowBacklog> = (0..n)
                .map(|i| FlowBacklog {
                    flow: FlowId(i),
                    packets: rng.gen_range(1..=25u64),
                })
                .collect();
            let part = partition_backlog(&fr, &backlog);
            for s in &part.shares[1..] {
                assert!(fr.admits(s.flow_count(), s.packets));
            }
            if part.shares[0].packets > 0 {
                assert!(fr.admits(part.shares[0].flow_count(), part.shares[0].packets));
            }
            assert!(part.whales.is_empty());
            let optimal = minimal_partitions(&fr, &backlog).expect("all flows admissible alone");
            let used = part
                .shares
                .iter()
                .filter(|s| !s.flows.is_empty())
                .count();
            assert!(
                used <= optimal + 1,
                "greedy used {used}, optimal {optimal}, backlog {backlog:?}"
            );
        }
    }

    #[test]
    fn threshold_lookup_conservative() {
        let t = RateThresholdTable {
            chain_hash: 0,
            slo_ns: 200_000,
            entries: vec![(1, 100_000.0), (8, 80_000.0), (64, 40_000.0)],
        };
        t.validate().unwrap();
        assert_eq!(t.threshold(1), 100_000.0);
        assert_eq!(t.threshold(2), 80_000.0);
        assert_eq!(t.threshold(64), 40_000.0);
        assert_eq!(t.threshold(65), 0.0);
    }

    #[test]
    fn frontier_file_round_trip() {
        let fam = FrontierFamily {
            chain_hash: 0xabcd,
            epoch_ns: 100_000,
            slo_ns: 200_000,
            levels: [
                (1usize, frontier(&[(1, 160), (64, 32)])),
                (2usize, frontier(&[(1, 320), (64, 64)])),
            ]
            .into_iter()
            .collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fr.txt");
        fam.save(&path).unwrap();
        let back = FrontierFamily::load(&path, Some(0xabcd)).unwrap();
        assert_eq!(fam, back);
        match FrontierFamily::load(&path, Some(0x1234)) {
            Err(PredictorError::ChainMismatch { .. }) => {}
            other => panic!("expected chain mismatch, got {other:?}"),
        }
    }

    #[test]
    fn threshold_file_round_trip() {
        let t = RateThresholdTable {
            chain_hash: 0xfeed,
            slo_ns: 200_000,
            entries: vec![(1, 99_500.5), (16, 60_000.0)],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        t.save(&path).unwrap();
        let back = RateThresholdTable::load(&path, Some(0xfeed)).unwrap();
        assert_eq!(t, back);
        assert!(RateThresholdTable::load(&path, Some(1)).is_err());
    }
}
