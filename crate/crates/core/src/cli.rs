//! Experiment harness: predictor training runs, experiment sweeps,
//! trace statistics, and the exact packing oracle, all driven by one
//! TOML config. Reports are JSON Lines (one summary record per sweep
//! cell, optional per-packet samples) plus a human-readable table.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::ChainSpec;
use crate::config::{ExperimentConfig, Mode};
use crate::core_mapper::epoch_length_ns;
use crate::predictor::train::{
    oracle_family, probe_frontier, train_long_term, train_short_term, LongTermTrainConfig,
};
use crate::predictor::{FrontierFamily, PredictorError, RateThresholdTable};
use crate::server_mapper::{milp_exact, BucketStats, MilpError};
use crate::sim::metrics::{Metrics, RunSummary};
use crate::sim::{self, SimParams};
use crate::traffic::{self, PacketRecord, TraceStats};
use crate::{Nanos, NS_PER_SEC};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("{0}")]
    Trace(#[from] traffic::TraceError),
    #[error("{0}")]
    Workload(#[from] traffic::WorkloadError),
    #[error("{0}")]
    Predictor(#[from] PredictorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Oracle(#[from] MilpError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Documented exit code per error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Io(_) | CliError::Trace(_) | CliError::Workload(_) => 2,
            CliError::Predictor(_) => 3,
            CliError::Oracle(_) => 4,
        }
    }
}

/// Load the packet trace named by the config (synthetic or file-based)
/// together with the simulation horizon.
pub fn load_trace(cfg: &ExperimentConfig) -> Result<(Vec<PacketRecord>, Nanos), CliError> {
    if let Some(w) = &cfg.workload {
        let trace = traffic::generate(w)?;
        Ok((trace, w.duration_ns))
    } else {
        let path = cfg
            .trace_path
            .as_ref()
            .ok_or_else(|| CliError::Usage("config names no traffic source".into()))?;
        let trace = traffic::parse_trace(path)?;
        let end = trace.last().map(|r| r.arrival_ns).unwrap_or(0);
        Ok((trace, end))
    }
}

/// Assemble kernel parameters for one sweep cell.
pub fn sim_params(
    cfg: &ExperimentConfig,
    slo_ns: Nanos,
    mode: Mode,
    frontier: FrontierFamily,
    thresholds: RateThresholdTable,
    trace_end_ns: Nanos,
) -> SimParams {
    SimParams {
        chain: cfg.chain.to_spec(),
        mode,
        slo_ns,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        rack: cfg.rack,
        cm: cfg.core_mapper,
        sm: cfg.server_mapper,
        prefix_len: cfg.ingress.prefix_len,
        tau: cfg.tau(),
        nic_cap: cfg.sim.nic_queue_cap,
        sw_cap: cfg.sim.software_queue_cap,
        frontier,
        thresholds,
        trace_end_ns,
        training: false,
        training_level: 1,
        collect_samples: cfg.sim.verbose_samples,
    }
}

fn slo_path(template: &Path, slo_ns: Nanos) -> PathBuf {
    let s = template.to_string_lossy().replace("{slo}", &slo_ns.to_string());
    PathBuf::from(s)
}

/// Resolve the predictors for a run at `slo_ns`: trained files when the
/// config names them (checked against the chain hash and SLO), the
/// analytic oracle when requested, and saturation-probe defaults
/// otherwise.
pub fn resolve_predictors(
    cfg: &ExperimentConfig,
    slo_ns: Nanos,
) -> Result<(FrontierFamily, RateThresholdTable), CliError> {
    let chain = cfg.chain.to_spec();
    let epoch_ns = epoch_length_ns(slo_ns);
    let frontier = if cfg.sim.oracle_frontier {
        oracle_family(
            &chain,
            slo_ns,
            cfg.core_mapper.plan_cost_ns,
            cfg.core_mapper.dispatch_cost_ns,
            cfg.core_mapper.max_split,
            0.85,
        )
    } else if let Some(path) = &cfg.sim.frontier_file {
        let fam = FrontierFamily::load(&slo_path(path, slo_ns), Some(chain.hash()))?;
        if fam.slo_ns != slo_ns {
            return Err(CliError::Usage(format!(
                "frontier file is for SLO {} ns, run wants {} ns",
                fam.slo_ns, slo_ns
            )));
        }
        fam
    } else {
        let mut levels = std::collections::BTreeMap::new();
        let max = cfg.core_mapper.max_split.min(chain.stages.len()).max(1);
        for level in 1..=max {
            levels.insert(
                level,
                probe_frontier(
                    &chain,
                    level,
                    epoch_ns,
                    cfg.core_mapper.dispatch_cost_ns,
                    cfg.core_mapper.plan_cost_ns,
                ),
            );
        }
        FrontierFamily {
            chain_hash: chain.hash(),
            epoch_ns,
            slo_ns,
            levels,
        }
    };

    let thresholds = if let Some(path) = &cfg.sim.thresholds_file {
        let t = RateThresholdTable::load(&slo_path(path, slo_ns), Some(chain.hash()))?;
        if t.slo_ns != slo_ns {
            return Err(CliError::Usage(format!(
                "thresholds file is for SLO {} ns, run wants {} ns",
                t.slo_ns, slo_ns
            )));
        }
        t
    } else {
        probe_thresholds(&chain, cfg, slo_ns)
    };
    Ok((frontier, thresholds))
}

/// Probe-derived rate table: per-epoch saturation capacity converted to
/// a rate, with 10% headroom. A functional stand-in when no trained
/// table is supplied.
pub fn probe_thresholds(
    chain: &ChainSpec,
    cfg: &ExperimentConfig,
    slo_ns: Nanos,
) -> RateThresholdTable {
    let epoch_ns = epoch_length_ns(slo_ns);
    let mut entries = Vec::new();
    let mut prev = f64::INFINITY;
    for &f in &cfg.train.flow_grid {
        if f == 0 {
            continue;
        }
        let p = crate::sim::probe::saturation_capacity(
            chain,
            1,
            epoch_ns,
            cfg.core_mapper.dispatch_cost_ns,
            cfg.core_mapper.plan_cost_ns,
            f,
        );
        let t = (0.9 * p as f64 * NS_PER_SEC as f64 / epoch_ns as f64).min(prev);
        prev = t;
        entries.push((f, t));
    }
    RateThresholdTable {
        chain_hash: chain.hash(),
        slo_ns,
        entries,
    }
}

/// Outcome of `cmd_train`: the files written, per SLO.
#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub slo_ns: Nanos,
    pub frontier_file: PathBuf,
    pub thresholds_file: PathBuf,
    pub frontier_levels: usize,
    pub threshold_entries: usize,
}

/// Train both predictors for every SLO in the sweep and write them as
/// versioned text files under `out_dir`.
pub fn cmd_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<TrainReport>, CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let chain = cfg.chain.to_spec();
    let workload = cfg
        .workload
        .clone()
        .ok_or_else(|| CliError::Usage("training needs a [workload] section".into()))?;
    let mut reports = Vec::new();
    for &slo_ns in &cfg.sim.slo_ns {
        // Short-term frontiers ride on a full-system run with migration
        // disabled; the base params carry placeholder predictors.
        let placeholder = oracle_family(
            &chain,
            slo_ns,
            cfg.core_mapper.plan_cost_ns,
            cfg.core_mapper.dispatch_cost_ns,
            cfg.core_mapper.max_split,
            0.85,
        );
        let thresholds0 = probe_thresholds(&chain, cfg, slo_ns);
        let base = sim_params(
            cfg,
            slo_ns,
            Mode::Full,
            placeholder,
            thresholds0,
            workload.duration_ns,
        );
        let outcome = train_short_term(&base, &workload, cfg.train.max_split)?;
        let lt_cfg = LongTermTrainConfig {
            slo_ns,
            duration_ns: cfg.train.long_probe_duration_ns,
            flow_lifetime_ns: cfg.train.long_flow_lifetime_ns,
            resolution: cfg.train.search_resolution,
            dispatch_cost_ns: cfg.core_mapper.dispatch_cost_ns,
            plan_cost_ns: cfg.core_mapper.plan_cost_ns,
            seed: cfg.seed,
        };
        let table = train_long_term(&chain, &cfg.train.flow_grid, &lt_cfg)?;
        let frontier_file = out_dir.join(format!("frontier_slo{slo_ns}.txt"));
        let thresholds_file = out_dir.join(format!("thresholds_slo{slo_ns}.txt"));
        outcome.family.save(&frontier_file)?;
        table.save(&thresholds_file)?;
        reports.push(TrainReport {
            slo_ns,
            frontier_file,
            thresholds_file,
            frontier_levels: outcome.family.levels.len(),
            threshold_entries: table.entries.len(),
        });
    }
    Ok(reports)
}

/// One line of the JSONL report stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReportLine {
    Summary(RunSummary),
    Sample {
        mode: String,
        slo_ns: Nanos,
        flow: u64,
        arrival_ns: Nanos,
        latency_ns: Nanos,
    },
}

/// Run the (SLO x mode) sweep. Per-cell failures are reported and do
/// not abort the sweep. Returns the summaries in sweep order.
pub fn cmd_run(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<RunSummary>, CliError> {
    cfg.validate()?;
    if cfg.sim.slo_ns.is_empty() || cfg.sim.modes.is_empty() {
        return Err(CliError::Usage("sweep lists must be non-empty".into()));
    }
    let (trace, trace_end) = load_trace(cfg)?;
    let mut writer: Option<Box<dyn Write>> = match out {
        Some(p) => Some(Box::new(std::io::BufWriter::new(std::fs::File::create(p)?))),
        None => None,
    };
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    println!(
        "{:>10} {:>18} {:>10} {:>10} {:>10} {:>10}",
        "SLO [us]", "Mode", "p50 [us]", "p99 [us]", "Avg Cores", "Loss Rate"
    );
    for &slo_ns in &cfg.sim.slo_ns {
        let resolved = match resolve_predictors(cfg, slo_ns) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("slo {slo_ns}: {e}"));
                continue;
            }
        };
        for &mode in &cfg.sim.modes {
            let params = sim_params(
                cfg,
                slo_ns,
                mode,
                resolved.0.clone(),
                resolved.1.clone(),
                trace_end,
            );
            let metrics = sim::run(&params, &trace);
            print_row(&metrics.summary);
            if let Some(w) = &mut writer {
                writeln!(
                    w,
                    "{}",
                    serde_json::to_string(&ReportLine::Summary(metrics.summary.clone()))
                        .expect("summary serializes")
                )?;
                if let Some(samples) = &metrics.samples {
                    for s in samples {
                        writeln!(
                            w,
                            "{}",
                            serde_json::to_string(&ReportLine::Sample {
                                mode: mode.name().to_string(),
                                slo_ns,
                                flow: s.flow,
                                arrival_ns: s.arrival_ns,
                                latency_ns: s.latency_ns,
                            })
                            .expect("sample serializes")
                        )?;
                    }
                }
            }
            summaries.push(metrics.summary);
        }
    }
    if let Some(w) = &mut writer {
        w.flush()?;
    }
    for f in &failures {
        eprintln!("cell failed: {f}");
    }
    if summaries.is_empty() {
        return Err(CliError::Usage("every sweep cell failed".into()));
    }
    Ok(summaries)
}

fn print_row(s: &RunSummary) {
    println!(
        "{:>10.0} {:>18} {:>10.1} {:>10.1} {:>10.2} {:>10.4}",
        s.slo_ns as f64 / 1_000.0,
        s.mode,
        s.p50_ns as f64 / 1_000.0,
        s.p99_ns as f64 / 1_000.0,
        s.avg_cores,
        s.loss_rate
    );
}

/// Compute trace statistics for the `stats` subcommand.
pub fn cmd_stats(path: &Path, window_ns: Nanos) -> Result<TraceStats, CliError> {
    let trace = traffic::parse_trace(path)?;
    Ok(traffic::compute_stats(&trace, window_ns))
}

/// A small packing instance for the `oracle` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleInstance {
    /// (flow count, packets/s) rows of the threshold table.
    pub thresholds: Vec<(u64, f64)>,
    pub slo_ns: Nanos,
    /// (rate_pps, flows) per bucket.
    pub buckets: Vec<(f64, f64)>,
    pub cores: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub min_cores: usize,
    pub assignment: Vec<usize>,
}

pub fn cmd_oracle(path: &Path) -> Result<OracleReport, CliError> {
    let text = std::fs::read_to_string(path)?;
    let inst: OracleInstance = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("bad instance file: {e}")))?;
    let table = RateThresholdTable {
        chain_hash: 0,
        slo_ns: inst.slo_ns,
        entries: inst.thresholds,
    };
    table.validate()?;
    let stats = BucketStats {
        rate_pps: inst.buckets.iter().map(|b| b.0).collect(),
        flows: inst.buckets.iter().map(|b| b.1).collect(),
    };
    let (min_cores, mapping) = milp_exact(&stats, &table, inst.cores, 0.0)?;
    Ok(OracleReport {
        min_cores,
        assignment: mapping.assignment,
    })
}

/// Recompute a percentile offline from the sample lines of a report, as
/// an independent check of the summary values.
pub fn offline_percentile(
    lines: &[ReportLine],
    mode: &str,
    slo_ns: Nanos,
    q: f64,
) -> Option<Nanos> {
    let mut v: Vec<Nanos> = lines
        .iter()
        .filter_map(|l| match l {
            ReportLine::Sample {
                mode: m,
                slo_ns: s,
                latency_ns,
                ..
            } if m == mode && *s == slo_ns => Some(*latency_ns),
            _ => None,
        })
        .collect();
    if v.is_empty() {
        return None;
    }
    Some(crate::percentile(&mut v, q))
}

/// Export one `Metrics` as a pretty table row plus raw access for tests.
pub fn metrics_row(m: &Metrics) -> String {
    format!(
        "{} slo={} p50={} p99={} cores={:.2} loss={:.4}",
        m.summary.mode,
        m.summary.slo_ns,
        m.summary.p50_ns,
        m.summary.p99_ns,
        m.summary.avg_cores,
        m.summary.loss_rate
    )
}
