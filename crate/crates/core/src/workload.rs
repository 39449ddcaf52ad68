//! Task traces and the per-task rate/budget arithmetic the SLA implies:
//! Poisson arrivals, linear service chains, shrinkage-driven rate chains,
//! and revenue apportionment into processing and transport budgets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::topology::{mbps_to_bps, Bps, Network, NodeId, ServiceId};

pub const BYTES_PER_MBIT: f64 = 1e6 / 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub u32);

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("degenerate shrinkage factor in component {0}")]
    DegenerateShrinkage(usize),
    #[error("service {0:?} is hosted nowhere; trace cannot be satisfied")]
    UnhostedService(ServiceId),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A stream processing task: an ordered service chain plus the SLA terms.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: TaskId,
    pub services: Vec<ServiceId>,
    pub source_node: NodeId,
    pub delivery_node: NodeId,
    /// Target delivery rate B, Mbps.
    pub target_rate_mbps: f64,
    /// Volume emitted at the source, MB.
    pub data_volume_mb: f64,
    /// Price per byte delivered.
    pub price_per_byte: f64,
    /// SLA monitoring window, seconds.
    pub window_secs: f64,
    /// Output/input rate ratio per component.
    pub shrinkage: Vec<f64>,
    /// CPU units per Mbps of input per component.
    pub cpu_factors: Vec<f64>,
}

impl TaskSpec {
    pub fn chain_len(&self) -> usize {
        self.services.len()
    }

    /// Revenue rate while delivering at the target rate, currency/second.
    pub fn revenue_rate(&self) -> f64 {
        self.price_per_byte * self.target_rate_mbps * BYTES_PER_MBIT
    }

    /// Total volume arriving at the delivery node, MB.
    pub fn delivered_volume_mb(&self) -> f64 {
        self.data_volume_mb * self.shrinkage.iter().product::<f64>()
    }
}

/// Per-component input/output rates implied by the shrinkage chain.
#[derive(Debug, Clone, PartialEq)]
pub struct RateChain {
    pub source_rate_mbps: f64,
    pub input_mbps: Vec<f64>,
    pub output_mbps: Vec<f64>,
    /// Rates of the service hops in data order: hop 0 leaves the source,
    /// hop i feeds component i, the last hop enters the delivery node.
    /// Quantized to the ledger unit so every module claims identical amounts.
    pub hop_rate_bps: Vec<Bps>,
}

impl RateChain {
    pub fn hop_count(&self) -> usize {
        self.hop_rate_bps.len()
    }

    pub fn hop_rate_mbps(&self, hop: usize) -> f64 {
        self.hop_rate_bps[hop] as f64 / 1e6
    }
}

/// Derives the rate chain backwards from the delivery rate: the output of
/// the last component equals B and each component scales input by its
/// shrinkage factor.
pub fn rate_chain(task: &TaskSpec) -> Result<RateChain, WorkloadError> {
    let n = task.services.len();
    if n == 0 {
        return Err(WorkloadError::InvalidParameters("empty service chain".into()));
    }
    for (i, &s) in task.shrinkage.iter().enumerate() {
        if s <= 0.0 {
            return Err(WorkloadError::DegenerateShrinkage(i));
        }
    }
    let total_shrink: f64 = task.shrinkage.iter().product();
    let source = task.target_rate_mbps / total_shrink;
    let mut input = Vec::with_capacity(n);
    let mut output = Vec::with_capacity(n);
    let mut rate = source;
    for &s in &task.shrinkage {
        input.push(rate);
        rate *= s;
        output.push(rate);
    }
    let mut hops = Vec::with_capacity(n + 1);
    hops.push(mbps_to_bps(source));
    for &out in &output {
        hops.push(mbps_to_bps(out));
    }
    Ok(RateChain {
        source_rate_mbps: source,
        input_mbps: input,
        output_mbps: output,
        hop_rate_bps: hops,
    })
}

/// Revenue apportioned across components and hops, currency/second.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetVector {
    /// Per-component processing budget.
    pub processing: Vec<f64>,
    /// Per-service-hop transport budget (chain_len + 1 hops).
    pub transport: Vec<f64>,
}

impl BudgetVector {
    pub fn total(&self) -> f64 {
        self.processing.iter().sum::<f64>() + self.transport.iter().sum::<f64>()
    }
}

/// Splits the revenue rate p*B: a transport fraction shared equally across
/// hops, the rest across components proportional to their CPU work.
pub fn apportion_budget(task: &TaskSpec, transport_fraction: f64) -> Result<BudgetVector, WorkloadError> {
    let chain = rate_chain(task)?;
    let revenue = task.revenue_rate();
    let transport_total = revenue * transport_fraction;
    let n_hops = task.services.len() + 1;
    let transport = vec![transport_total / n_hops as f64; n_hops];

    let work: Vec<f64> = task
        .cpu_factors
        .iter()
        .zip(&chain.input_mbps)
        .map(|(c, r)| c * r)
        .collect();
    let total_work: f64 = work.iter().sum();
    let processing_total = revenue - transport_total;
    let processing = if total_work > 0.0 {
        work.iter().map(|w| processing_total * w / total_work).collect()
    } else {
        vec![processing_total / task.services.len() as f64; task.services.len()]
    };
    Ok(BudgetVector { processing, transport })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceParams {
    pub n_tasks: u32,
    pub arrival_rate_per_hour: f64,
    pub chain_len: u32,
    pub target_rate_mbps: f64,
    pub mean_volume_mb: f64,
    pub price_per_byte: f64,
    pub window_secs: f64,
}

impl Default for TraceParams {
    fn default() -> Self {
        TraceParams {
            n_tasks: 500,
            arrival_rate_per_hour: 60.0,
            chain_len: 10,
            target_rate_mbps: 1.0,
            mean_volume_mb: 100.0,
            price_per_byte: 1e-6,
            window_secs: 10.0,
        }
    }
}

/// One submitted task with its arrival instant, seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub arrival_secs: f64,
    pub spec: TaskSpec,
}

/// Poisson arrivals of uniformly drawn chains between uniformly drawn
/// source/delivery nodes. Factors come from the network's service catalog so
/// the same service type behaves identically across tasks.
pub fn generate_trace(
    params: &TraceParams,
    network: &Network,
    seed: u64,
) -> Result<Vec<TraceEntry>, WorkloadError> {
    if params.n_tasks == 0 || params.chain_len == 0 {
        return Err(WorkloadError::InvalidParameters(
            "need at least one task and a nonempty chain".into(),
        ));
    }
    if params.arrival_rate_per_hour <= 0.0 {
        return Err(WorkloadError::InvalidParameters("arrival rate must be positive".into()));
    }
    let n_types = network.services.len() as u16;
    let hosted_somewhere: Vec<bool> = (0..n_types)
        .map(|t| !network.service_providers(ServiceId(t)).is_empty())
        .collect();
    if !hosted_somewhere.iter().any(|&h| h) {
        return Err(WorkloadError::UnhostedService(ServiceId(0)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inter = Exp::new(params.arrival_rate_per_hour / 3600.0)
        .map_err(|e| WorkloadError::InvalidParameters(e.to_string()))?;
    let volume = Exp::new(1.0 / params.mean_volume_mb)
        .map_err(|e| WorkloadError::InvalidParameters(e.to_string()))?;
    let n_nodes = network.nodes.len() as u32;

    let mut entries = Vec::with_capacity(params.n_tasks as usize);
    let mut t = 0.0f64;
    for id in 0..params.n_tasks {
        t += inter.sample(&mut rng);
        // Chains only reference hosted types; unhosted draws are redrawn.
        let mut services = Vec::with_capacity(params.chain_len as usize);
        for _ in 0..params.chain_len {
            let mut attempts = 0;
            let svc = loop {
                let cand = rng.gen_range(0..n_types);
                if hosted_somewhere[cand as usize] {
                    break ServiceId(cand);
                }
                attempts += 1;
                if attempts > 10_000 {
                    return Err(WorkloadError::UnhostedService(ServiceId(cand)));
                }
            };
            services.push(svc);
        }
        let shrinkage: Vec<f64> = services
            .iter()
            .map(|s| network.services[s.0 as usize].shrinkage)
            .collect();
        let cpu_factors: Vec<f64> = services
            .iter()
            .map(|s| network.services[s.0 as usize].cpu_factor)
            .collect();
        let source = NodeId(rng.gen_range(0..n_nodes));
        let delivery = NodeId(rng.gen_range(0..n_nodes));
        let vol = volume.sample(&mut rng).max(1e-3);
        entries.push(TraceEntry {
            arrival_secs: t,
            spec: TaskSpec {
                id: TaskId(id),
                services,
                source_node: source,
                delivery_node: delivery,
                target_rate_mbps: params.target_rate_mbps,
                data_volume_mb: vol,
                price_per_byte: params.price_per_byte,
                window_secs: params.window_secs,
                shrinkage,
                cpu_factors,
            },
        });
    }
    Ok(entries)
}

/// One task per line so traces can be diffed and replayed across platform
/// configurations.
pub fn trace_to_text(trace: &[TraceEntry]) -> String {
    let mut out = String::from("# bimodal-sim trace v1\n");
    for e in trace {
        let svc: Vec<String> = e.spec.services.iter().map(|s| s.0.to_string()).collect();
        let shr: Vec<String> = e.spec.shrinkage.iter().map(|v| v.to_string()).collect();
        let cpu: Vec<String> = e.spec.cpu_factors.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!(
            "task {} {} {} {} {} {} {} {} {} {} {}\n",
            e.spec.id.0,
            e.arrival_secs,
            e.spec.source_node.0,
            e.spec.delivery_node.0,
            e.spec.target_rate_mbps,
            e.spec.data_volume_mb,
            e.spec.price_per_byte,
            e.spec.window_secs,
            svc.join(","),
            shr.join(","),
            cpu.join(","),
        ));
    }
    out
}

pub fn trace_from_text(text: &str) -> Result<Vec<TraceEntry>, WorkloadError> {
    let mut entries = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| WorkloadError::Parse { line: ln + 1, msg: msg.into() };
        let mut parts = line.split_whitespace();
        if parts.next() != Some("task") {
            return Err(err("expected 'task' record"));
        }
        let mut field = || parts.next().ok_or_else(|| err("missing field"));
        let id: u32 = field()?.parse().map_err(|_| err("bad id"))?;
        let arrival: f64 = field()?.parse().map_err(|_| err("bad arrival"))?;
        let src: u32 = field()?.parse().map_err(|_| err("bad source"))?;
        let dst: u32 = field()?.parse().map_err(|_| err("bad delivery"))?;
        let rate: f64 = field()?.parse().map_err(|_| err("bad rate"))?;
        let vol: f64 = field()?.parse().map_err(|_| err("bad volume"))?;
        let price: f64 = field()?.parse().map_err(|_| err("bad price"))?;
        let window: f64 = field()?.parse().map_err(|_| err("bad window"))?;
        let services: Vec<ServiceId> = field()?
            .split(',')
            .map(|t| t.parse::<u16>().map(ServiceId))
            .collect::<Result<_, _>>()
            .map_err(|_| err("bad service list"))?;
        let shrinkage: Vec<f64> = field()?
            .split(',')
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| err("bad shrinkage list"))?;
        let cpu_factors: Vec<f64> = field()?
            .split(',')
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| err("bad cpu list"))?;
        entries.push(TraceEntry {
            arrival_secs: arrival,
            spec: TaskSpec {
                id: TaskId(id),
                services,
                source_node: NodeId(src),
                delivery_node: NodeId(dst),
                target_rate_mbps: rate,
                data_volume_mb: vol,
                price_per_byte: price,
                window_secs: window,
                shrinkage,
                cpu_factors,
            },
        });
    }
    Ok(entries)
}

/// FNV-1a over the serialized trace; used by experiment manifests to prove
/// paired runs consumed identical workloads.
pub fn trace_hash(trace: &[TraceEntry]) -> u64 {
    let text = trace_to_text(trace);
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in text.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::GenParams;

    fn test_task(shrinkage: Vec<f64>, cpu: Vec<f64>, rate: f64) -> TaskSpec {
        let n = shrinkage.len();
        TaskSpec {
            id: TaskId(0),
            services: (0..n as u16).map(ServiceId).collect(),
            source_node: NodeId(0),
            delivery_node: NodeId(1),
            target_rate_mbps: rate,
            data_volume_mb: 100.0,
            price_per_byte: 1e-6,
            window_secs: 10.0,
            shrinkage,
            cpu_factors: cpu,
        }
    }

    #[test]
    fn rate_chain_half_then_double() {
        let task = test_task(vec![0.5, 2.0], vec![1.0, 1.0], 1.0);
        let chain = rate_chain(&task).unwrap();
        assert!((chain.source_rate_mbps - 1.0).abs() < 1e-12);
        assert_eq!(chain.input_mbps, vec![1.0, 0.5]);
        assert_eq!(chain.output_mbps, vec![0.5, 1.0]);
    }

    #[test]
    fn rate_chain_identity() {
        let task = test_task(vec![1.0; 4], vec![1.0; 4], 1.0);
        let chain = rate_chain(&task).unwrap();
        for r in chain.input_mbps.iter().chain(&chain.output_mbps) {
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_chain_doubling() {
        let task = test_task(vec![2.0, 2.0, 2.0], vec![1.0; 3], 8.0);
        let chain = rate_chain(&task).unwrap();
        assert!((chain.source_rate_mbps - 1.0).abs() < 1e-12);
        assert_eq!(chain.output_mbps, vec![2.0, 4.0, 8.0]);
    }

    #[test]
    fn rate_chain_rejects_zero_shrinkage() {
        let task = test_task(vec![1.0, 0.0], vec![1.0, 1.0], 1.0);
        assert!(matches!(rate_chain(&task), Err(WorkloadError::DegenerateShrinkage(1))));
    }

    #[test]
    fn budget_symmetric_components() {
        let task = test_task(vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0], 1.0);
        let b = apportion_budget(&task, 0.0).unwrap();
        assert!(b.transport.iter().all(|&t| t == 0.0));
        let first = b.processing[0];
        assert!(b.processing.iter().all(|&p| (p - first).abs() < 1e-15));
    }

    #[test]
    fn budget_single_component_takes_everything() {
        let task = test_task(vec![1.0], vec![1.0], 1.0);
        let b = apportion_budget(&task, 0.0).unwrap();
        assert!((b.total() - task.revenue_rate()).abs() < 1e-12);
        assert_eq!(b.processing.len(), 1);
    }

    // c = [1, 3] at equal input rates with transport fraction 0.2:
    // hand computation gives processing 0.25/0.75 of 80% of revenue.
    #[test]
    fn budget_one_three_split_hand_checked() {
        let task = test_task(vec![1.0, 1.0], vec![1.0, 3.0], 1.0);
        let revenue = task.revenue_rate();
        let b = apportion_budget(&task, 0.2).unwrap();
        let expected0 = 0.8 * revenue * 0.25;
        let expected1 = 0.8 * revenue * 0.75;
        assert!((b.processing[0] - expected0).abs() < 1e-9 * revenue);
        assert!((b.processing[1] - expected1).abs() < 1e-9 * revenue);
        assert_eq!(b.transport.len(), 3);
        assert!((b.transport[0] - 0.2 * revenue / 3.0).abs() < 1e-9 * revenue);
        assert!((b.total() - revenue).abs() < 1e-9 * revenue);
    }

    #[test]
    fn trace_matches_paper_defaults() {
        let net = Network::generate(&GenParams::default(), 1).unwrap();
        let trace = generate_trace(&TraceParams::default(), &net, 10).unwrap();
        assert_eq!(trace.len(), 500);
        assert!(trace.windows(2).all(|w| w[0].arrival_secs <= w[1].arrival_secs));
        for e in &trace {
            assert_eq!(e.spec.services.len(), 10);
            assert!(e.spec.data_volume_mb > 0.0);
        }
    }

    #[test]
    fn single_task_trace() {
        let net = Network::generate(&GenParams::default(), 1).unwrap();
        let params = TraceParams {
            n_tasks: 1,
            ..TraceParams::default()
        };
        let trace = generate_trace(&params, &net, 4).unwrap();
        assert_eq!(trace.len(), 1);
        assert!(trace[0].arrival_secs >= 0.0);
    }

    // 10000 tasks at 60/hr should make the sample mean inter-arrival land
    // within 5% of 60 seconds.
    #[test]
    fn poisson_interarrival_mean() {
        let net = Network::generate(&GenParams::default(), 1).unwrap();
        let params = TraceParams {
            n_tasks: 10_000,
            ..TraceParams::default()
        };
        let trace = generate_trace(&params, &net, 123).unwrap();
        let mean = trace.last().unwrap().arrival_secs / trace.len() as f64;
        assert!((mean - 60.0).abs() < 3.0, "mean inter-arrival {mean}");
    }

    #[test]
    fn trace_round_trips_and_hashes_deterministically() {
        let net = Network::generate(&GenParams::default(), 1).unwrap();
        let params = TraceParams {
            n_tasks: 20,
            ..TraceParams::default()
        };
        let a = generate_trace(&params, &net, 8).unwrap();
        let b = generate_trace(&params, &net, 8).unwrap();
        assert_eq!(trace_hash(&a), trace_hash(&b));

        let parsed = trace_from_text(&trace_to_text(&a)).unwrap();
        assert_eq!(trace_to_text(&parsed), trace_to_text(&a));

        let c = generate_trace(&params, &net, 9).unwrap();
        assert_ne!(trace_hash(&a), trace_hash(&c));
    }
}
