//! Experiment configuration: one TOML file with a section per module,
//! applied on top of documented defaults. The config hash recorded in
//! every report is the FNV of the canonical serialized form, so a
//! report plus its seed reproduces the run exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainSpec, Stage, DEFAULT_MAX_BATCH};
use crate::server_mapper::ServerMapperConfig;
use crate::traffic::WorkloadSpec;
use crate::{fnv1a, Nanos};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Ablation and motivation modes a run can execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// All three mappers, boost mode on.
    Full,
    /// Every flow on its own core; no mappers at all.
    PerFlowPerCore,
    /// Static flow hashing over the initial cores; no adaptation.
    HashOnly,
    /// Core-mapper migration and chain splitting disabled.
    NoCoreMapper,
    /// Frontier collapsed to its minimum trained packet budget.
    StaticSafe,
    /// Frontier collapsed to its maximum trained packet budget.
    StaticUnsafe,
    /// Boost mode disabled.
    NoBoost,
    /// Boost replaced by on-demand RSS remaps, rate-limited.
    OnDemandRemap,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::PerFlowPerCore => "per_flow_per_core",
            Mode::HashOnly => "hash_only",
            Mode::NoCoreMapper => "no_core_mapper",
            Mode::StaticSafe => "static_safe",
            Mode::StaticUnsafe => "static_unsafe",
            Mode::NoBoost => "no_boost",
            Mode::OnDemandRemap => "on_demand_remap",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Some(match s {
            "full" => Mode::Full,
            "per_flow_per_core" => Mode::PerFlowPerCore,
            "hash_only" => Mode::HashOnly,
            "no_core_mapper" => Mode::NoCoreMapper,
            "static_safe" => Mode::StaticSafe,
            "static_unsafe" => Mode::StaticUnsafe,
            "no_boost" => Mode::NoBoost,
            "on_demand_remap" => Mode::OnDemandRemap,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub name: String,
    pub cost_ns: Nanos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub stages: Vec<StageConfig>,
    /// Defaults to 3x the total per-packet cost.
    pub per_new_flow_cost_ns: Option<Nanos>,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
}

fn default_max_batch() -> usize {
    DEFAULT_MAX_BATCH
}

impl ChainConfig {
    pub fn to_spec(&self) -> ChainSpec {
        let stages: Vec<Stage> = self
            .stages
            .iter()
            .map(|s| Stage {
                name: s.name.clone(),
                cost_ns: s.cost_ns,
            })
            .collect();
        let total: Nanos = stages.iter().map(|s| s.cost_ns).sum();
        ChainSpec {
            stages,
            per_new_flow_cost_ns: self.per_new_flow_cost_ns.unwrap_or(3 * total),
            max_batch: self.max_batch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RackConfig {
    pub servers: usize,
    pub cores_per_server: usize,
    /// Auxiliary cores reserved per server.
    pub aux_pool: usize,
    /// Dedicated cores active at t=0 (buckets striped round-robin).
    pub initial_cores: usize,
}

impl Default for RackConfig {
    fn default() -> Self {
        RackConfig {
            servers: 1,
            cores_per_server: 32,
            aux_pool: 8,
            initial_cores: 1,
        }
    }
}

impl RackConfig {
    pub fn max_dedicated(&self) -> usize {
        self.cores_per_server - self.aux_pool
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoreMapperSection {
    pub max_split: usize,
    pub plan_cost_ns: Nanos,
    /// Cost of moving one packet from the NIC queue into a software
    /// queue. Paid on every pull; boost mode is this and nothing else.
    pub dispatch_cost_ns: Nanos,
}

impl Default for CoreMapperSection {
    fn default() -> Self {
        CoreMapperSection {
            max_split: 4,
            plan_cost_ns: 3_000,
            dispatch_cost_ns: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerMapperSection {
    pub rss_buckets: usize,
    pub decision_interval_ns: Nanos,
    pub rss_update_delay_ns: Nanos,
    pub boost_threshold: u64,
    pub on_demand_min_gap_ns: Nanos,
    pub capacity_margin: f64,
}

impl Default for ServerMapperSection {
    fn default() -> Self {
        let d = ServerMapperConfig::default();
        ServerMapperSection {
            rss_buckets: d.rss_buckets,
            decision_interval_ns: d.decision_interval_ns,
            rss_update_delay_ns: d.rss_update_delay_ns,
            boost_threshold: d.boost_threshold,
            on_demand_min_gap_ns: d.on_demand_min_gap_ns,
            capacity_margin: d.capacity_margin,
        }
    }
}

impl ServerMapperSection {
    pub fn to_config(&self) -> ServerMapperConfig {
        ServerMapperConfig {
            decision_interval_ns: self.decision_interval_ns,
            rss_update_delay_ns: self.rss_update_delay_ns,
            boost_threshold: self.boost_threshold,
            on_demand_min_gap_ns: self.on_demand_min_gap_ns,
            capacity_margin: self.capacity_margin,
            rss_buckets: self.rss_buckets,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngressSection {
    pub prefix_len: u32,
    /// 0 means "derive": cores_per_server - aux_pool.
    pub tau: u32,
}

impl Default for IngressSection {
    fn default() -> Self {
        IngressSection {
            prefix_len: 16,
            tau: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSection {
    pub nic_queue_cap: usize,
    pub software_queue_cap: usize,
    /// SLO sweep list, nanoseconds.
    pub slo_ns: Vec<Nanos>,
    /// Mode sweep list.
    pub modes: Vec<Mode>,
    pub frontier_file: Option<PathBuf>,
    pub thresholds_file: Option<PathBuf>,
    /// Replace the trained frontier with the analytically safe oracle.
    pub oracle_frontier: bool,
    /// Emit per-packet latency samples in reports.
    pub verbose_samples: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            nic_queue_cap: 4096,
            software_queue_cap: 1024,
            slo_ns: vec![200_000],
            modes: vec![Mode::Full],
            frontier_file: None,
            thresholds_file: None,
            oracle_frontier: false,
            verbose_samples: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    /// Flow-count grid for the long-term table.
    pub flow_grid: Vec<u64>,
    pub long_probe_duration_ns: Nanos,
    /// Concurrent-flow lifetime in the long-term probe; flow churn is
    /// what makes per-flow setup cost visible at steady state.
    pub long_flow_lifetime_ns: Nanos,
    /// Binary search resolution: accept within 1% by default.
    pub search_resolution: f64,
    /// Simulated seconds of workload per short-term training run.
    pub short_duration_ns: Nanos,
    /// Highest split level to profile (clamped to chain stages).
    pub max_split: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            flow_grid: crate::predictor::default_flow_grid(),
            long_probe_duration_ns: 30 * crate::NS_PER_SEC,
            long_flow_lifetime_ns: 100_000_000,
            search_resolution: 0.01,
            short_duration_ns: 2 * crate::NS_PER_SEC,
            max_split: 4,
        }
    }
}

/// Everything a run needs, as written by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub chain: ChainConfig,
    /// Synthetic workload; mutually exclusive with `trace_path`.
    pub workload: Option<WorkloadSpec>,
    pub trace_path: Option<PathBuf>,
    #[serde(default)]
    pub rack: RackConfig,
    #[serde(default)]
    pub core_mapper: CoreMapperSection,
    #[serde(default)]
    pub server_mapper: ServerMapperSection,
    #[serde(default)]
    pub ingress: IngressSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub train: TrainSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let chain = self.chain.to_spec();
        chain
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.workload.is_none() && self.trace_path.is_none() {
            return Err(ConfigError::Invalid(
                "either [workload] or trace_path is required".into(),
            ));
        }
        if let Some(w) = &self.workload {
            w.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if let Some(p) = &self.trace_path {
            if !p.exists() {
                return Err(ConfigError::Invalid(format!(
                    "trace file {} does not exist",
                    p.display()
                )));
            }
        }
        if self.sim.slo_ns.iter().any(|&s| s == 0) {
            return Err(ConfigError::Invalid("slo values must be positive".into()));
        }
        if self.rack.aux_pool >= self.rack.cores_per_server {
            return Err(ConfigError::Invalid(
                "aux_pool must leave at least one dedicated core".into(),
            ));
        }
        if self.rack.servers == 0 || self.rack.initial_cores == 0 {
            return Err(ConfigError::Invalid("rack must have servers and cores".into()));
        }
        if self.rack.initial_cores > self.rack.max_dedicated() {
            return Err(ConfigError::Invalid(
                "initial_cores exceeds dedicated capacity".into(),
            ));
        }
        Ok(())
    }

    pub fn tau(&self) -> u32 {
        if self.ingress.tau > 0 {
            self.ingress.tau
        } else {
            self.rack.max_dedicated() as u32
        }
    }

    /// Stable hash of the full configuration.
    pub fn hash(&self) -> u64 {
        let text = toml::to_string(self).expect("config serializes");
        fnv1a(text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::PacketCountDist;

    fn minimal() -> ExperimentConfig {
        ExperimentConfig {
            seed: 1,
            chain: ChainConfig {
                stages: vec![StageConfig {
                    name: "nf".into(),
                    cost_ns: 10_000,
                }],
                per_new_flow_cost_ns: None,
                max_batch: 32,
            },
            workload: Some(WorkloadSpec {
                flow_rate: 100.0,
                packets_per_flow: PacketCountDist::Fixed { count: 10 },
                pacing_pps: 1_000.0,
                whales: vec![],
                minnow_storms: vec![],
                shape_flows: true,
                duration_ns: 1_000_000_000,
                seed: 1,
                addr_pool: 1 << 16,
            }),
            trace_path: None,
            rack: Default::default(),
            core_mapper: Default::default(),
            server_mapper: Default::default(),
            ingress: Default::default(),
            sim: Default::default(),
            train: Default::default(),
        }
    }

    #[test]
    fn defaults_apply_and_hash_is_stable() {
        let cfg = minimal();
        cfg.validate().unwrap();
        assert_eq!(cfg.chain.to_spec().per_new_flow_cost_ns, 30_000);
        assert_eq!(cfg.tau(), 24);
        assert_eq!(cfg.hash(), minimal().hash());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = minimal();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn rejects_missing_traffic_source() {
        let mut cfg = minimal();
        cfg.workload = None;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn parses_sparse_file() {
        let text = r#"
            seed = 9
            [chain]
            stages = [{ name = "acl", cost_ns = 5000 }]
            [workload]
            flow_rate = 10.0
            pacing_pps = 100.0
            shape_flows = true
            duration_ns = 1000000
            seed = 9
            [workload.packets_per_flow]
            kind = "fixed"
            count = 3
        "#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.sim.slo_ns, vec![200_000]);
        assert_eq!(cfg.rack.cores_per_server, 32);
    }
}
