//! Experiment driver: runs the configured matrix of sweep points, platform
//! modes, scheduling variants, and repetitions with paired seeds, and emits
//! the metrics CSV plus a manifest that reruns byte-identically.
//!
//! Pairing contract: at a given sweep point and repetition, every mode and
//! scheduling variant consumes the exact same topology and workload trace
//! (same run seed; generation does not depend on the mode).

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::config::{derive_seed, ExperimentConfig, PlatformMode};
use crate::engine::{self, RunLog, RunOptions};
use crate::metrics::{aggregate, MetricsReport};
use crate::topology::Network;
use crate::workload::{generate_trace, trace_hash, TraceEntry};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Run(#[from] engine::RunError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Topology(#[from] crate::topology::TopologyError),
    #[error(transparent)]
    Workload(#[from] crate::workload::WorkloadError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One completed run of the matrix.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Sweep label, e.g. "topology.n_links=50" or "default".
    pub point: String,
    pub sweep_value: Option<f64>,
    pub mode: PlatformMode,
    pub dynamic: bool,
    pub rep: u32,
    pub seed: u64,
    pub trace_hash: u64,
    pub report: MetricsReport,
}

impl RunOutcome {
    /// Group key for aggregation across repetitions.
    pub fn group(&self) -> String {
        format!(
            "{};mode={};dynamic={}",
            self.point,
            self.mode.as_str(),
            self.dynamic
        )
    }
}

fn execute<F>(cfg: &ExperimentConfig, mut sink: F) -> Result<Vec<RunOutcome>, ExperimentError>
where
    F: FnMut(&RunOutcome, &RunLog) -> Result<(), ExperimentError>,
{
    cfg.validate()?;
    let points: Vec<Option<f64>> = if cfg.sweep_values.is_empty() {
        vec![None]
    } else {
        cfg.sweep_values.iter().copied().map(Some).collect()
    };
    let mut outcomes = Vec::new();
    for value in &points {
        let mut point_cfg = cfg.clone();
        let point = match value {
            Some(v) => {
                point_cfg.set(&cfg.sweep_key, &v.to_string())?;
                format!("{}={}", cfg.sweep_key, v)
            }
            None => "default".to_string(),
        };
        point_cfg.validate()?;
        for rep in 0..cfg.repetitions {
            let seed = cfg.base_seed + rep as u64;
            // Same platform and workload for every mode at this point/rep.
            let network = Network::generate(&point_cfg.sim.topology, derive_seed(seed, "topology"))?;
            let trace: Vec<TraceEntry> =
                generate_trace(&point_cfg.sim.workload, &network, derive_seed(seed, "workload"))?;
            let hash = trace_hash(&trace);
            for &mode in &cfg.modes {
                for &dynamic in &cfg.dynamic_variants {
                    let mut sim = point_cfg.sim.clone();
                    sim.mode = mode;
                    sim.dynamic_scheduling = dynamic;
                    let (log, report) = engine::run_with_options(
                        &sim,
                        network.clone(),
                        &trace,
                        seed,
                        RunOptions {
                            log_rates: false,
                            emit_plan: cfg.emit_plan,
                        },
                    )?;
                    let outcome = RunOutcome {
                        point: point.clone(),
                        sweep_value: *value,
                        mode,
                        dynamic,
                        rep,
                        seed,
                        trace_hash: hash,
                        report,
                    };
                    sink(&outcome, &log)?;
                    outcomes.push(outcome);
                }
            }
        }
    }
    Ok(outcomes)
}

/// Runs the whole matrix in memory (tests, acceptance suite).
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<Vec<RunOutcome>, ExperimentError> {
    execute(cfg, |_, _| Ok(()))
}

/// Aggregated CSV: one row per (experiment point, field), mean and 95% CI.
pub fn metrics_csv(outcomes: &[RunOutcome]) -> String {
    let mut csv = String::from("point,field,mean,ci95\n");
    let mut groups: Vec<String> = outcomes.iter().map(|o| o.group()).collect();
    groups.dedup();
    for group in groups {
        let reports: Vec<MetricsReport> = outcomes
            .iter()
            .filter(|o| o.group() == group)
            .map(|o| o.report.clone())
            .collect();
        if reports.len() >= 2 {
            for row in aggregate(&reports).expect("len checked") {
                let _ = writeln!(csv, "{group},{},{},{}", row.field, row.mean, row.ci95);
            }
        } else {
            for field in MetricsReport::FIELDS {
                let _ = writeln!(csv, "{group},{field},{},0", reports[0].field(field));
            }
        }
    }
    csv
}

/// Raw per-run CSV.
pub fn runs_csv(outcomes: &[RunOutcome]) -> String {
    let mut csv = String::from("point,mode,dynamic,rep,seed,trace_hash,field,value\n");
    for o in outcomes {
        for field in MetricsReport::FIELDS {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{:016x},{},{}",
                o.point,
                o.mode.as_str(),
                o.dynamic,
                o.rep,
                o.seed,
                o.trace_hash,
                field,
                o.report.field(field)
            );
        }
    }
    csv
}

/// The manifest doubles as a rerunnable config: comment lines carry the
/// provenance, the rest is the exact configuration.
pub fn manifest_text(cfg: &ExperimentConfig, outcomes: &[RunOutcome]) -> String {
    let mut out = String::from("# bimodal-sim experiment manifest\n");
    let mut seen = std::collections::BTreeSet::new();
    for o in outcomes {
        if seen.insert((o.point.clone(), o.rep)) {
            let _ = writeln!(
                out,
                "# trace point={} rep={} seed={} hash={:016x}",
                o.point, o.rep, o.seed, o.trace_hash
            );
        }
    }
    out.push_str(&cfg.to_text());
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    std::fs::write(path, contents).map_err(|source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Runs the matrix and writes metrics.csv, runs.csv, the manifest, and the
/// optional run logs / plan CSVs into `out_dir`.
pub fn run_experiments(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<RunOutcome>, ExperimentError> {
    std::fs::create_dir_all(out_dir).map_err(|source| ExperimentError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let emit_runlog = cfg.emit_runlog;
    let emit_plan = cfg.emit_plan;
    let outcomes = execute(cfg, |outcome, log| {
        if emit_runlog {
            let name = format!(
                "runlog-{}-{}-dyn{}-rep{}.csv",
                outcome.point.replace(['.', '='], "_"),
                outcome.mode.as_str(),
                outcome.dynamic,
                outcome.rep
            );
            write_file(&out_dir.join(name), &log.to_csv())?;
        }
        if emit_plan {
            let name = format!(
                "plan-{}-{}-dyn{}-rep{}.csv",
                outcome.point.replace(['.', '='], "_"),
                outcome.mode.as_str(),
                outcome.dynamic,
                outcome.rep
            );
            let mut csv = String::from("t,node,task,hop,kind,rate_bps\n");
            for r in &log.records {
                if let engine::LogRecord::Plan { t, node, task, hop, kind, rate_bps } = r {
                    let _ = writeln!(csv, "{t},{node},{task},{hop},{kind},{rate_bps}");
                }
            }
            write_file(&out_dir.join(name), &csv)?;
        }
        Ok(())
    })?;
    write_file(&out_dir.join("metrics.csv"), &metrics_csv(&outcomes))?;
    write_file(&out_dir.join("runs.csv"), &runs_csv(&outcomes))?;
    write_file(&out_dir.join("manifest.txt"), &manifest_text(cfg, &outcomes))?;
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.set("topology.n_nodes", "20").unwrap();
        cfg.set("topology.n_links", "24").unwrap();
        cfg.set("topology.n_service_types", "6").unwrap();
        cfg.set("workload.n_tasks", "15").unwrap();
        cfg.set("workload.chain_len", "3").unwrap();
        cfg.set("workload.mean_volume_mb", "10").unwrap();
        cfg
    }

    // Identical traces across the three modes at a fixed point/rep.
    #[test]
    fn paired_modes_share_traces() {
        let mut cfg = tiny_cfg();
        cfg.set("experiment.modes", "dedicated-only,public-only,bimodal").unwrap();
        let outcomes = run_matrix(&cfg).unwrap();
        assert_eq!(outcomes.len(), 3);
        let hashes: Vec<u64> = outcomes.iter().map(|o| o.trace_hash).collect();
        assert!(hashes.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn repetitions_feed_aggregation() {
        let mut cfg = tiny_cfg();
        cfg.set("experiment.repetitions", "2").unwrap();
        let outcomes = run_matrix(&cfg).unwrap();
        assert_eq!(outcomes.len(), 2);
        let csv = metrics_csv(&outcomes);
        let acceptance_rows: Vec<&str> = csv
            .lines()
            .filter(|l| l.contains(",acceptance_ratio,"))
            .collect();
        assert_eq!(acceptance_rows.len(), 1);
    }

    #[test]
    fn sweep_points_get_their_own_rows() {
        let mut cfg = tiny_cfg();
        cfg.set("experiment.sweep_key", "workload.arrival_rate_per_hour").unwrap();
        cfg.set("experiment.sweep_values", "30,60").unwrap();
        let outcomes = run_matrix(&cfg).unwrap();
        assert_eq!(outcomes.len(), 2);
        assert_ne!(outcomes[0].point, outcomes[1].point);
    }

    #[test]
    fn manifest_reruns_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        run_experiments(&cfg, dir.path()).unwrap();
        let metrics_a = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();

        let reparsed = ExperimentConfig::from_text(&manifest).unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        run_experiments(&reparsed, dir_b.path()).unwrap();
        let metrics_b = std::fs::read_to_string(dir_b.path().join("metrics.csv")).unwrap();
        assert_eq!(metrics_a, metrics_b);
    }
}
