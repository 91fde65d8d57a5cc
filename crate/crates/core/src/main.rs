use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nfsim::cli::{self, CliError};
use nfsim::config::ExperimentConfig;
use nfsim::traffic::DEFAULT_STATS_WINDOW_NS;

#[derive(Parser)]
#[command(
    name = "nfsim",
    about = "Packet-level simulator for NFV auto-scaling under tail-latency SLOs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. --set sim.slo_ns=[100000] or
    /// --set seed=7. Repeatable; values are TOML fragments.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the capacity frontier and rate-threshold predictors.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory for the predictor files.
        #[arg(long, default_value = "predictors")]
        out_dir: PathBuf,
    },
    /// Run the (SLO x mode) experiment sweep.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// JSONL report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print statistics of a trace file.
    Stats {
        /// CSV trace path.
        #[arg(long)]
        trace: PathBuf,
        /// Sliding window for rate statistics, nanoseconds.
        #[arg(long, default_value_t = DEFAULT_STATS_WINDOW_NS)]
        window_ns: u64,
    },
    /// Solve a small bucket-packing instance exactly.
    Oracle {
        /// JSON instance file.
        #[arg(long)]
        instance: PathBuf,
    },
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut value: toml::Value = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("config parse: {e}")))?;
    for set in &args.sets {
        let (key, raw) = set
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set wants KEY=VALUE, got `{set}`")))?;
        apply_override(&mut value, key.trim(), raw.trim())?;
    }
    let cfg: ExperimentConfig = value
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn apply_override(root: &mut toml::Value, dotted: &str, raw: &str) -> Result<(), CliError> {
    let parsed: toml::Value = format!("v = {raw}")
        .parse::<toml::Value>()
        .ok()
        .and_then(|mut t| t.as_table_mut().and_then(|t| t.remove("v")))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("`{dotted}`: `{part}` is not a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Ok(())
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { config, out_dir } => {
            let cfg = load_config(&config)?;
            let reports = cli::cmd_train(&cfg, &out_dir)?;
            for r in &reports {
                println!(
                    "slo {} ns: frontier {} ({} levels), thresholds {} ({} entries)",
                    r.slo_ns,
                    r.frontier_file.display(),
                    r.frontier_levels,
                    r.thresholds_file.display(),
                    r.threshold_entries
                );
            }
            Ok(())
        }
        Command::Run { config, out } => {
            let cfg = load_config(&config)?;
            cli::cmd_run(&cfg, out.as_deref())?;
            Ok(())
        }
        Command::Stats { trace, window_ns } => {
            let stats = cli::cmd_stats(&trace, window_ns)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&stats).expect("stats serialize")
            );
            Ok(())
        }
        Command::Oracle { instance } => {
            let report = cli::cmd_oracle(&instance)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serialize")
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
