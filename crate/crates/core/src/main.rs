//! Experiment CLI: generate topologies, run seeded experiment matrices,
//! and summarize run logs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bimodal_sim::config::{derive_seed, ExperimentConfig};
use bimodal_sim::engine::RunLog;
use bimodal_sim::experiment;
use bimodal_sim::metrics;
use bimodal_sim::topology::Network;

#[derive(Parser)]
#[command(name = "bimodal-sim", version, about = "Simulator for stream processing over bi-modal networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a platform topology file.
    GenerateTopology {
        /// Config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override any config key, e.g. --set topology.n_links=125
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Run seed; the topology stream is derived from it.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured experiment matrix and write CSV outputs.
    Run {
        /// Config file (or a previously written manifest).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory for metrics.csv, runs.csv, manifest.txt.
        #[arg(long, default_value = "results")]
        out_dir: PathBuf,
    },
    /// Recompute the metrics report from a run log CSV.
    Summarize {
        /// Run log produced with experiment.emit_runlog = true.
        runlog: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>, overrides: &[String]) -> Result<ExperimentConfig, String> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_file(p).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    for kv in overrides {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| format!("--set expects key=value, got '{kv}'"))?;
        cfg.set(key.trim(), value.trim()).map_err(|e| e.to_string())?;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn run() -> Result<(), String> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenerateTopology { config, set, seed, out } => {
            let cfg = load_config(&config, &set)?;
            let net = Network::generate(&cfg.sim.topology, derive_seed(seed, "topology"))
                .map_err(|e| e.to_string())?;
            if net.sparse {
                eprintln!(
                    "note: {} links cannot span {} nodes; the remainder are public-only",
                    cfg.sim.topology.n_links, cfg.sim.topology.n_nodes
                );
            }
            std::fs::write(&out, net.to_text()).map_err(|e| e.to_string())?;
            println!("wrote {} ({} nodes, {} links)", out.display(), net.nodes.len(), net.links.len());
        }
        Command::Run { config, set, out_dir } => {
            let cfg = load_config(&config, &set)?;
            let outcomes = experiment::run_experiments(&cfg, &out_dir).map_err(|e| e.to_string())?;
            println!(
                "completed {} runs; outputs in {}",
                outcomes.len(),
                out_dir.display()
            );
            for o in &outcomes {
                println!(
                    "  {} rep={} acceptance={:.3} throughput={:.1} MB/h",
                    o.group(),
                    o.rep,
                    o.report.acceptance_ratio,
                    o.report.throughput_mb_per_hour
                );
            }
        }
        Command::Summarize { runlog } => {
            let text = std::fs::read_to_string(&runlog).map_err(|e| e.to_string())?;
            let log = RunLog::from_csv(&text);
            let report = metrics::summarize(&log).map_err(|e| e.to_string())?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
