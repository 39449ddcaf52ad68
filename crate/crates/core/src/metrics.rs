//! Evaluation quantities computed from a run log: acceptance, throughput,
//! utilizations, SLA deviation, and execution elongation, plus cross-run
//! aggregation with confidence intervals.
//!
//! Server utilization measures delivered processing work against total
//! capacity over the horizon, so it depends only on which tasks ran, not on
//! how link scheduling stretched them. Link utilization is the
//! time-weighted allocation integral.

use std::fmt::Write as _;

use thiserror::Error;

use crate::engine::{LogRecord, RunLog};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("malformed log: {0}")]
    MalformedLog(String),
    #[error("need at least 2 reports to aggregate, got {0}")]
    InsufficientSamples(usize),
}

/// Per-run aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub tasks_submitted: u64,
    pub tasks_accepted: u64,
    pub tasks_completed: u64,
    pub acceptance_ratio: f64,
    /// Delivered MB of completed tasks per hour of run makespan.
    pub throughput_mb_per_hour: f64,
    pub server_utilization: f64,
    pub dedicated_link_utilization: f64,
    pub uplink_utilization: f64,
    pub mean_sla_deviation: f64,
    pub mean_execution_elongation: f64,
    pub makespan_secs: f64,
    /// Accepted tasks that never completed (should be zero; runs drain).
    pub incomplete_tasks: u64,
}

impl MetricsReport {
    /// Named numeric fields, the unit for aggregation and CSV emission.
    pub const FIELDS: [&'static str; 10] = [
        "acceptance_ratio",
        "throughput_mb_per_hour",
        "server_utilization",
        "dedicated_link_utilization",
        "uplink_utilization",
        "mean_sla_deviation",
        "mean_execution_elongation",
        "tasks_submitted",
        "tasks_accepted",
        "makespan_secs",
    ];

    pub fn field(&self, name: &str) -> f64 {
        match name {
            "acceptance_ratio" => self.acceptance_ratio,
            "throughput_mb_per_hour" => self.throughput_mb_per_hour,
            "server_utilization" => self.server_utilization,
            "dedicated_link_utilization" => self.dedicated_link_utilization,
            "uplink_utilization" => self.uplink_utilization,
            "mean_sla_deviation" => self.mean_sla_deviation,
            "mean_execution_elongation" => self.mean_execution_elongation,
            "tasks_submitted" => self.tasks_submitted as f64,
            "tasks_accepted" => self.tasks_accepted as f64,
            "makespan_secs" => self.makespan_secs,
            _ => f64::NAN,
        }
    }

    /// Flat key-value block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "tasks_submitted = {}", self.tasks_submitted);
        let _ = writeln!(out, "tasks_accepted = {}", self.tasks_accepted);
        let _ = writeln!(out, "tasks_completed = {}", self.tasks_completed);
        let _ = writeln!(out, "incomplete_tasks = {}", self.incomplete_tasks);
        let _ = writeln!(out, "acceptance_ratio = {}", self.acceptance_ratio);
        let _ = writeln!(out, "throughput_mb_per_hour = {}", self.throughput_mb_per_hour);
        let _ = writeln!(out, "server_utilization = {}", self.server_utilization);
        let _ = writeln!(out, "dedicated_link_utilization = {}", self.dedicated_link_utilization);
        let _ = writeln!(out, "uplink_utilization = {}", self.uplink_utilization);
        let _ = writeln!(out, "mean_sla_deviation = {}", self.mean_sla_deviation);
        let _ = writeln!(out, "mean_execution_elongation = {}", self.mean_execution_elongation);
        let _ = writeln!(out, "makespan_secs = {}", self.makespan_secs);
        out
    }
}

/// Pure function of the log; rerunning it on the same records reproduces
/// the same report.
pub fn summarize(log: &RunLog) -> Result<MetricsReport, MetricsError> {
    let mut total_cpu = 0u64;
    let mut total_link = 0u64;
    let mut total_uplink = 0u64;
    let mut horizon_cfg = 0.0f64;
    let mut end_t: Option<f64> = None;

    let mut submitted = 0u64;
    let mut accepted = 0u64;
    let mut completed = 0u64;
    let mut cpu_work_sum = 0.0f64;
    let mut delivered_mb_sum = 0.0f64;
    let mut deviation_sum = 0.0f64;
    let mut elongation_sum = 0.0f64;

    // Allocation step functions.
    let mut link_integral = 0.0f64;
    let mut uplink_integral = 0.0f64;
    let mut last_alloc_t = 0.0f64;
    let mut cur_link = 0u64;
    let mut cur_uplink = 0u64;

    for record in &log.records {
        match record {
            LogRecord::Meta { key, value } => match key.as_str() {
                "total_cpu" => total_cpu = value.parse().unwrap_or(0),
                "total_link_bps" => total_link = value.parse().unwrap_or(0),
                "total_uplink_bps" => total_uplink = value.parse().unwrap_or(0),
                "horizon_secs" => horizon_cfg = value.parse().unwrap_or(0.0),
                _ => {}
            },
            LogRecord::Submitted { .. } => submitted += 1,
            LogRecord::Accepted { cpu_work, .. } => {
                accepted += 1;
                cpu_work_sum += cpu_work;
            }
            LogRecord::Completed { delivered_mb, elongation, deviation, .. } => {
                completed += 1;
                delivered_mb_sum += delivered_mb;
                deviation_sum += deviation;
                elongation_sum += elongation;
            }
            LogRecord::Alloc { t, link_bps, uplink_bps, .. } => {
                link_integral += cur_link as f64 * (t - last_alloc_t);
                uplink_integral += cur_uplink as f64 * (t - last_alloc_t);
                last_alloc_t = *t;
                cur_link = *link_bps;
                cur_uplink = *uplink_bps;
            }
            LogRecord::End { t } => {
                end_t = Some(*t);
            }
            _ => {}
        }
    }
    let makespan = end_t.ok_or_else(|| MetricsError::MalformedLog("missing end record".into()))?;
    link_integral += cur_link as f64 * (makespan - last_alloc_t);
    uplink_integral += cur_uplink as f64 * (makespan - last_alloc_t);

    let horizon = if horizon_cfg > 0.0 { horizon_cfg } else { makespan };
    let div = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };

    Ok(MetricsReport {
        tasks_submitted: submitted,
        tasks_accepted: accepted,
        tasks_completed: completed,
        acceptance_ratio: div(accepted as f64, submitted as f64),
        throughput_mb_per_hour: div(delivered_mb_sum, makespan / 3600.0),
        server_utilization: div(cpu_work_sum, total_cpu as f64 * horizon),
        dedicated_link_utilization: div(link_integral, total_link as f64 * horizon),
        uplink_utilization: div(uplink_integral, total_uplink as f64 * horizon),
        mean_sla_deviation: div(deviation_sum, completed as f64),
        mean_execution_elongation: div(elongation_sum, completed as f64),
        makespan_secs: makespan,
        incomplete_tasks: accepted - completed,
    })
}

/// Mean and 95% normal-approximation half-width of one field.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateField {
    pub field: String,
    pub mean: f64,
    pub ci95: f64,
}

/// Per-field aggregation over repeated runs. Values are summed in sorted
/// order, so the result does not depend on report ordering.
pub fn aggregate(reports: &[MetricsReport]) -> Result<Vec<AggregateField>, MetricsError> {
    if reports.len() < 2 {
        return Err(MetricsError::InsufficientSamples(reports.len()));
    }
    let n = reports.len() as f64;
    let mut out = Vec::new();
    for field in MetricsReport::FIELDS {
        let mut values: Vec<f64> = reports.iter().map(|r| r.field(field)).collect();
        values.sort_by(f64::total_cmp);
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let ci95 = 1.96 * (var / n).sqrt();
        out.push(AggregateField {
            field: field.to_string(),
            mean,
            ci95,
        });
    }
    Ok(out)
}
