//! Deterministic discrete-event core: timed map messages, reservation
//! probes with rollback, fluid-flow streaming with public-rate
//! perturbation, periodic link re-scheduling, SLA window accounting, and
//! the run log every metric is computed from.
//!
//! All randomness comes from seeded per-concern streams (topology,
//! workload, perturbation), so identical configs and seeds reproduce the
//! run log byte for byte.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::config::{derive_seed, SimConfig};
use crate::mapping::{self, FeasibleMap, HopKind, HopVia, MapContext, MapperState, PartialMap};
use crate::metrics::{self, MetricsReport};
use crate::reservation::{self, ClaimLedger, ReservationProbe};
use crate::scheduler::{self, Assignment, Flow, SchedParams};
use crate::topology::{Bps, LinkId, Network, NodeId, ResourceRef, TopologyError};
use crate::workload::{
    self, apportion_budget, rate_chain, BudgetVector, RateChain, TaskId, TaskSpec, TraceEntry,
    WorkloadError,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config invalid: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("conservation audit failed at t={t}: {msg}")]
    AuditViolation { t: f64, msg: String },
}

/// Multiplicative public-rate factor: 2^X with X ~ Normal(0, sigma).
pub fn perturb_factor<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 1.0;
    }
    let x: f64 = rng.sample(StandardNormal);
    (x * sigma).exp2()
}

/// Per-window deviation increment (B - Bhat)/B.
pub fn window_increment(target_bps: f64, window_bytes: f64, elapsed_secs: f64, clamp: bool) -> f64 {
    if elapsed_secs <= 0.0 || target_bps <= 0.0 {
        return 0.0;
    }
    let observed_bps = window_bytes * 8.0 / elapsed_secs;
    let inc = (target_bps - observed_bps) / target_bps;
    if clamp {
        inc.max(0.0)
    } else {
        inc
    }
}

// ---------------------------------------------------------------------------
// Run log
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum LogRecord {
    Meta { key: String, value: String },
    Submitted { t: f64, task: u32 },
    Rejected { t: f64, task: u32, reason: String },
    Mapped { t: f64, task: u32, feasible: u64, messages: u64, capped: bool },
    Accepted {
        t: f64,
        task: u32,
        cpu_work: f64,
        ded_hops: u32,
        pub_hops: u32,
        attempts: u32,
        delivered_volume_mb: f64,
    },
    Window { t: f64, task: u32, increment: f64 },
    Completed { t: f64, task: u32, delivered_mb: f64, elongation: f64, deviation: f64 },
    Alloc { t: f64, link_bps: u64, cpu: u64, uplink_bps: u64 },
    Plan { t: f64, node: u32, task: u32, hop: u16, kind: String, rate_bps: u64 },
    Rate { t: f64, task: u32, rate_bps: f64 },
    End { t: f64 },
}

impl LogRecord {
    pub fn to_csv_line(&self) -> String {
        match self {
            LogRecord::Meta { key, value } => format!("meta,{key},{value}"),
            LogRecord::Submitted { t, task } => format!("submitted,{t},{task}"),
            LogRecord::Rejected { t, task, reason } => format!("rejected,{t},{task},{reason}"),
            LogRecord::Mapped { t, task, feasible, messages, capped } => {
                format!("mapped,{t},{task},{feasible},{messages},{capped}")
            }
            LogRecord::Accepted { t, task, cpu_work, ded_hops, pub_hops, attempts, delivered_volume_mb } => {
                format!("accepted,{t},{task},{cpu_work},{ded_hops},{pub_hops},{attempts},{delivered_volume_mb}")
            }
            LogRecord::Window { t, task, increment } => format!("window,{t},{task},{increment}"),
            LogRecord::Completed { t, task, delivered_mb, elongation, deviation } => {
                format!("completed,{t},{task},{delivered_mb},{elongation},{deviation}")
            }
            LogRecord::Alloc { t, link_bps, cpu, uplink_bps } => {
                format!("alloc,{t},{link_bps},{cpu},{uplink_bps}")
            }
            LogRecord::Plan { t, node, task, hop, kind, rate_bps } => {
                format!("plan,{t},{node},{task},{hop},{kind},{rate_bps}")
            }
            LogRecord::Rate { t, task, rate_bps } => format!("rate,{t},{task},{rate_bps}"),
            LogRecord::End { t } => format!("end,{t}"),
        }
    }

    pub fn parse_line(line: &str) -> Option<LogRecord> {
        let mut p = line.splitn(8, ',');
        let kind = p.next()?;
        let mut f = || p.next();
        Some(match kind {
            "meta" => LogRecord::Meta { key: f()?.to_string(), value: f()?.to_string() },
            "submitted" => LogRecord::Submitted { t: f()?.parse().ok()?, task: f()?.parse().ok()? },
            "rejected" => LogRecord::Rejected {
                t: f()?.parse().ok()?,
                task: f()?.parse().ok()?,
                reason: f()?.to_string(),
            },
            "mapped" => LogRecord::Mapped {
                t: f()?.parse().ok()?,
                task: f()?.parse().ok()?,
                feasible: f()?.parse().ok()?,
                messages: f()?.parse().ok()?,
                capped: f()?.parse().ok()?,
            },
            "accepted" => LogRecord::Accepted {
                t: f()?.parse().ok()?,
                task: f()?.parse().ok()?,
                cpu_work: f()?.parse().ok()?,
                ded_hops: f()?.parse().ok()?,
                pub_hops: f()?.parse().ok()?,
                attempts: f()?.parse().ok()?,
                delivered_volume_mb: f()?.parse().ok()?,
            },
            "window" => LogRecord::Window {
                t: f()?.parse().ok()?,
                task: f()?.parse().ok()?,
                increment: f()?.parse().ok()?,
            },
            "completed" => LogRecord::Completed {
                t: f()?.parse().ok()?,
                task: f()?.parse().ok()?,
                delivered_mb: f()?.parse().ok()?,
                elongation: f()?.parse().ok()?,
                deviation: f()?.parse().ok()?,
            },
            "alloc" => LogRecord::Alloc {
                t: f()?.parse().ok()?,
                link_bps: f()?.parse().ok()?,
                cpu: f()?.parse().ok()?,
                uplink_bps: f()?.parse().ok()?,
            },
            "plan" => LogRecord::Plan {
                t: f()?.parse().ok()?,
                node: f()?.parse().ok()?,
                task: f()?.parse().ok()?,
                hop: f()?.parse().ok()?,
                kind: f()?.to_string(),
                rate_bps: f()?.parse().ok()?,
            },
            "rate" => LogRecord::Rate {
                t: f()?.parse().ok()?,
                task: f()?.parse().ok()?,
                rate_bps: f()?.parse().ok()?,
            },
            "end" => LogRecord::End { t: f()?.parse().ok()? },
            _ => return None,
        })
    }
}

/// Complete, replayable record of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(out, "{}", r.to_csv_line());
        }
        out
    }

    pub fn from_csv(text: &str) -> RunLog {
        RunLog {
            records: text.lines().filter_map(LogRecord::parse_line).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Events
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum EventKind {
    Arrival(TaskId),
    MapMsg { task: TaskId, dest: NodeId, msg: PartialMap },
    SelectMap(TaskId),
    ProbeStep(TaskId),
    RollbackStep { task: TaskId, k: usize },
    Confirm(TaskId),
    EpochTick(u64),
    PerturbTick(u64),
    CompletionCheck { task: TaskId, gen: u64 },
    WindowClose { task: TaskId },
    PathConfirm { task: TaskId, hop: u16 },
}

struct Event {
    t: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t && self.seq == other.seq
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // Reversed so the max-heap pops the earliest (t, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then_with(|| other.seq.cmp(&self.seq))
    }
}

// ---------------------------------------------------------------------------
// Task runtime
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TaskState {
    Pending,
    Mapping,
    Probing,
    RollingBack,
    Confirming,
    Streaming,
    Completed,
    Rejected,
}

struct MapSession {
    states: Vec<MapperState>,
    feasible: Vec<FeasibleMap>,
    retry: VecDeque<FeasibleMap>,
    outstanding: u64,
    emitted: u64,
    capped: bool,
    attempts: u32,
    probe: Option<ReservationProbe>,
}

struct FlowRuntime {
    service_hop: u16,
    from: NodeId,
    to: NodeId,
    nominal_bps: Bps,
    assignment: Assignment,
    /// Perturbation factor of the public carrier, 1.0 on dedicated.
    perturb: f64,
    budget_per_byte: f64,
    hop_budget_per_sec: f64,
    pending_path: Option<(Vec<LinkId>, Bps)>,
}

struct Stream {
    start: f64,
    volume_bytes: f64,
    delivered_bytes: f64,
    last_advance: f64,
    rate_bps: f64,
    flows: Vec<FlowRuntime>,
    window_open_t: f64,
    window_open_bytes: f64,
    deviation_sum: f64,
    completion_gen: u64,
}

struct TaskRuntime {
    spec: TaskSpec,
    chain: RateChain,
    budgets: BudgetVector,
    state: TaskState,
    session: Option<MapSession>,
    stream: Option<Stream>,
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

struct Engine {
    cfg: SimConfig,
    net: Network,
    now: f64,
    seq: u64,
    queue: BinaryHeap<Event>,
    ledger: ClaimLedger,
    tasks: Vec<TaskRuntime>,
    perturb_rng: ChaCha8Rng,
    log: RunLog,
    /// Flows indexed by their upstream (sending) node.
    flows_by_node: BTreeMap<NodeId, BTreeSet<(TaskId, u16)>>,
    live_tasks: u64,
    pending_arrivals: u64,
    epoch_ticking: bool,
    perturb_ticking: bool,
    last_alloc_logged: (u64, u64, u64),
    audit_error: Option<String>,
    log_rates: bool,
    emit_plan: bool,
    events_processed: u64,
}

impl Engine {
    fn push(&mut self, t: f64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Event { t, seq: self.seq, kind });
    }

    fn sched_params(&self) -> SchedParams {
        SchedParams {
            epoch_secs: self.cfg.epoch_secs,
            deficit_clamp_multiple: self.cfg.deficit_clamp_multiple,
            public_boost_multiple: self.cfg.public_boost_multiple,
            rate_floor_bps: (self.cfg.rate_floor_mbps * 1e6).round() as u64,
            rho_per_byte: self.cfg.rho_per_byte,
            mode: self.cfg.mode,
            max_path_hops: 8,
        }
    }

    fn next_perturb_time(&self) -> f64 {
        let k = (self.now / self.cfg.perturb_tick_secs).floor() as u64 + 1;
        k as f64 * self.cfg.perturb_tick_secs
    }

    fn ensure_ticking(&mut self) {
        if self.live_tasks == 0 {
            return;
        }
        if self.cfg.dynamic_scheduling && !self.epoch_ticking {
            self.epoch_ticking = true;
            let k = (self.now / self.cfg.epoch_secs).floor() as u64 + 1;
            self.push(k as f64 * self.cfg.epoch_secs, EventKind::EpochTick(k));
        }
        let perturbs_possible = self.cfg.perturb_sigma > 0.0 && self.cfg.mode.allows_public();
        if perturbs_possible && !self.perturb_ticking {
            self.perturb_ticking = true;
            let k = (self.now / self.cfg.perturb_tick_secs).floor() as u64 + 1;
            self.push(k as f64 * self.cfg.perturb_tick_secs, EventKind::PerturbTick(k));
        }
    }

    fn log_alloc_if_changed(&mut self) {
        let cur = (
            self.ledger.agg_link_bps,
            self.ledger.agg_cpu,
            self.ledger.agg_uplink_bps,
        );
        if cur != self.last_alloc_logged {
            self.last_alloc_logged = cur;
            self.log.records.push(LogRecord::Alloc {
                t: self.now,
                link_bps: cur.0,
                cpu: cur.1,
                uplink_bps: cur.2,
            });
        }
    }

    fn audit_touched(&mut self) {
        if !self.cfg.audit || self.audit_error.is_some() {
            return;
        }
        let touched = self.ledger.take_touched();
        for res in touched {
            if let Err(msg) = self.ledger.audit_resource(&self.net, res) {
                self.audit_error = Some(msg);
                return;
            }
        }
    }

    fn audit_full(&mut self) {
        if !self.cfg.audit || self.audit_error.is_some() {
            return;
        }
        if let Err(msg) = self.ledger.audit_all(&self.net) {
            self.audit_error = Some(msg);
        }
    }

    // -- mapping --------------------------------------------------------

    fn handle_arrival(&mut self, task_id: TaskId) {
        self.live_tasks += 1;
        self.pending_arrivals -= 1;
        self.ensure_ticking();
        self.log.records.push(LogRecord::Submitted { t: self.now, task: task_id.0 });
        let n_nodes = self.net.nodes.len();
        let chain_len = self.tasks[task_id.0 as usize].spec.chain_len();
        self.tasks[task_id.0 as usize].session = Some(MapSession {
            states: (0..n_nodes).map(|_| MapperState::new(chain_len)).collect(),
            feasible: Vec::new(),
            retry: VecDeque::new(),
            outstanding: 0,
            emitted: 0,
            capped: false,
            attempts: 0,
            probe: None,
        });
        self.tasks[task_id.0 as usize].state = TaskState::Mapping;
        let portal = self.tasks[task_id.0 as usize].spec.delivery_node;
        self.deliver_map_msg(task_id, portal, PartialMap::initial(task_id));
        self.check_map_quiescence(task_id);
    }

    /// Admission plus ProcessMap plus emission scheduling.
    fn deliver_map_msg(&mut self, task_id: TaskId, dest: NodeId, msg: PartialMap) {
        let admitted = {
            let session = self.tasks[task_id.0 as usize].session.as_mut().expect("session");
            if self.cfg.least_cost_filter {
                mapping::least_cost_admit(&mut session.states[dest.0 as usize], &msg)
            } else {
                true
            }
        };
        if !admitted {
            return;
        }
        let (feasible, emissions) = {
            let task = &self.tasks[task_id.0 as usize];
            let ctx = MapContext::new(
                &self.net,
                &task.spec,
                &task.chain,
                &task.budgets,
                self.cfg.rho_per_byte,
                self.cfg.mode,
            );
            let outcome = mapping::process_map(dest, &msg, &ctx);
            let emissions: Vec<(NodeId, PartialMap, f64)> = outcome
                .emissions
                .into_iter()
                .map(|(v, m)| {
                    let delay_ms = match m.last_hop_info() {
                        Some((HopVia::Link(l), _)) => self.net.link(l).delay_ms,
                        Some((HopVia::Public, from)) => self.net.node(from).uplink_delay_ms,
                        None => 0.0,
                    };
                    (v, m, delay_ms)
                })
                .collect();
            (outcome.feasible, emissions)
        };
        let now = self.now;
        let cap = self.cfg.message_cap;
        let mut to_schedule = Vec::new();
        {
            let session = self.tasks[task_id.0 as usize].session.as_mut().unwrap();
            session.feasible.extend(feasible);
            for (v, m, delay_ms) in emissions {
                if session.emitted >= cap {
                    session.capped = true;
                    break;
                }
                session.emitted += 1;
                session.outstanding += 1;
                to_schedule.push((now + delay_ms / 1e3, v, m));
            }
        }
        for (t, v, m) in to_schedule {
            self.push(t, EventKind::MapMsg { task: task_id, dest: v, msg: m });
        }
    }

    fn check_map_quiescence(&mut self, task_id: TaskId) {
        let ready = {
            let task = &self.tasks[task_id.0 as usize];
            task.state == TaskState::Mapping
                && task.session.as_ref().map(|s| s.outstanding == 0).unwrap_or(false)
        };
        if ready {
            self.push(self.now, EventKind::SelectMap(task_id));
        }
    }

    fn handle_map_msg(&mut self, task_id: TaskId, dest: NodeId, msg: PartialMap) {
        self.tasks[task_id.0 as usize]
            .session
            .as_mut()
            .expect("session")
            .outstanding -= 1;
        self.deliver_map_msg(task_id, dest, msg);
        self.check_map_quiescence(task_id);
    }

    fn handle_select_map(&mut self, task_id: TaskId) {
        if self.tasks[task_id.0 as usize].state != TaskState::Mapping {
            return;
        }
        let (feasible, emitted, capped) = {
            let session = self.tasks[task_id.0 as usize].session.as_mut().unwrap();
            (
                std::mem::take(&mut session.feasible),
                session.emitted,
                session.capped,
            )
        };
        self.log.records.push(LogRecord::Mapped {
            t: self.now,
            task: task_id.0,
            feasible: feasible.len() as u64,
            messages: emitted,
            capped,
        });
        match mapping::select_best(feasible, self.cfg.tie_threshold) {
            None => self.reject_task(task_id, "no-feasible-map"),
            Some((best, rest)) => {
                {
                    let task = &mut self.tasks[task_id.0 as usize];
                    let probe = ReservationProbe::new(&task.spec, &task.chain, best, &self.net);
                    let session = task.session.as_mut().unwrap();
                    session.retry = rest.into();
                    session.probe = Some(probe);
                    session.attempts = 1;
                    task.state = TaskState::Probing;
                }
                self.push(self.now, EventKind::ProbeStep(task_id));
            }
        }
    }

    fn reject_task(&mut self, task_id: TaskId, reason: &str) {
        {
            let task = &mut self.tasks[task_id.0 as usize];
            task.state = TaskState::Rejected;
            task.session = None;
        }
        self.log.records.push(LogRecord::Rejected {
            t: self.now,
            task: task_id.0,
            reason: reason.to_string(),
        });
        self.live_tasks -= 1;
    }

    // -- reservation ------------------------------------------------------

    fn handle_probe_step(&mut self, task_id: TaskId) {
        if self.tasks[task_id.0 as usize].state != TaskState::Probing {
            return;
        }
        enum Next {
            Confirm(f64),
            Step(f64),
            Rollback(usize, f64),
            NextMap,
        }
        let next = {
            let task = &mut self.tasks[task_id.0 as usize];
            let probe = task.session.as_mut().unwrap().probe.as_mut().unwrap();
            match reservation::try_reserve(probe, &mut self.net, &mut self.ledger) {
                Ok(()) => {
                    if probe.finished() {
                        Next::Confirm(probe.total_path_delay_ms())
                    } else {
                        Next::Step(probe.hop_delay_ms(probe.position - 1))
                    }
                }
                Err(_) => {
                    let held = probe.position;
                    if held == 0 {
                        Next::NextMap
                    } else {
                        Next::Rollback(held - 1, probe.hop_delay_ms(held - 1))
                    }
                }
            }
        };
        match next {
            Next::Confirm(delay_ms) => {
                self.tasks[task_id.0 as usize].state = TaskState::Confirming;
                self.push(self.now + delay_ms / 1e3, EventKind::Confirm(task_id));
            }
            Next::Step(delay_ms) => {
                self.push(self.now + delay_ms / 1e3, EventKind::ProbeStep(task_id));
            }
            Next::Rollback(k, delay_ms) => {
                self.tasks[task_id.0 as usize].state = TaskState::RollingBack;
                self.push(self.now + delay_ms / 1e3, EventKind::RollbackStep { task: task_id, k });
            }
            Next::NextMap => self.try_next_map(task_id),
        }
    }

    fn handle_rollback_step(&mut self, task_id: TaskId, k: usize) {
        let next_delay = {
            let task = &mut self.tasks[task_id.0 as usize];
            let probe = task.session.as_mut().unwrap().probe.as_mut().unwrap();
            reservation::release_visit(probe, k, &mut self.net, &mut self.ledger).expect("rollback");
            if k == 0 {
                probe.position = 0;
                None
            } else {
                Some(probe.hop_delay_ms(k - 1))
            }
        };
        match next_delay {
            None => self.try_next_map(task_id),
            Some(delay_ms) => {
                self.push(self.now + delay_ms / 1e3, EventKind::RollbackStep { task: task_id, k: k - 1 });
            }
        }
    }

    fn try_next_map(&mut self, task_id: TaskId) {
        let popped = {
            let task = &mut self.tasks[task_id.0 as usize];
            let session = task.session.as_mut().unwrap();
            session.retry.pop_front().map(|map| {
                session.attempts += 1;
                let probe = ReservationProbe::new(&task.spec, &task.chain, map, &self.net);
                session.probe = Some(probe);
                task.state = TaskState::Probing;
            })
        };
        match popped {
            None => self.reject_task(task_id, "probes-exhausted"),
            Some(()) => self.push(self.now, EventKind::ProbeStep(task_id)),
        }
    }

    fn handle_confirm(&mut self, task_id: TaskId) {
        if self.tasks[task_id.0 as usize].state != TaskState::Confirming {
            return;
        }
        let now = self.now;
        let (window_secs, accepted_record, flow_keys) = {
            let task = &mut self.tasks[task_id.0 as usize];
            let session = task.session.take().unwrap();
            let attempts = session.attempts;
            let active = reservation::commit(session.probe.unwrap(), &self.net);

            let n = task.spec.chain_len();
            let mut flows = Vec::new();
            for alloc in &active.allocations {
                let assignment = match alloc.kind {
                    HopKind::DirectDedicated => {
                        let link = match alloc.resources[0] {
                            ResourceRef::Link(l) => l,
                            _ => unreachable!("direct hop claims a link"),
                        };
                        Assignment::Direct { splits: vec![(link, alloc.rate_bps)] }
                    }
                    HopKind::ForwardingDedicated => Assignment::MultiHop {
                        path: alloc
                            .resources
                            .iter()
                            .map(|r| match r {
                                ResourceRef::Link(l) => *l,
                                _ => unreachable!("forwarding hop claims links"),
                            })
                            .collect(),
                        rate_bps: alloc.rate_bps,
                    },
                    HopKind::Public => Assignment::Public { rate_bps: alloc.rate_bps, boost_bps: 0 },
                };
                let h = alloc.service_hop as usize;
                let comp = if h == 0 { 0 } else { h - 1 };
                let hop_bytes_per_sec = task.chain.hop_rate_bps[h] as f64 / 8.0;
                flows.push(FlowRuntime {
                    service_hop: alloc.service_hop,
                    from: alloc.from,
                    to: alloc.to,
                    nominal_bps: alloc.rate_bps,
                    assignment,
                    perturb: 1.0,
                    budget_per_byte: task.budgets.processing[comp] / hop_bytes_per_sec.max(1e-9),
                    hop_budget_per_sec: task.budgets.transport[h],
                    pending_path: None,
                });
            }
            let total_cpu_micros: u64 = (0..n)
                .map(|i| crate::topology::cpu_demand(task.spec.cpu_factors[i], task.chain.input_mbps[i]))
                .sum();
            let ideal_secs = task.spec.delivered_volume_mb() * 8.0 / task.spec.target_rate_mbps;
            let cpu_work = total_cpu_micros as f64 * ideal_secs;
            let cost = active.map.cost;
            let flow_keys: Vec<(NodeId, u16)> =
                flows.iter().map(|f| (f.from, f.service_hop)).collect();
            task.stream = Some(Stream {
                start: now,
                volume_bytes: task.spec.delivered_volume_mb() * 1e6,
                delivered_bytes: 0.0,
                last_advance: now,
                rate_bps: 0.0,
                flows,
                window_open_t: now,
                window_open_bytes: 0.0,
                deviation_sum: 0.0,
                completion_gen: 0,
            });
            task.state = TaskState::Streaming;
            (
                task.spec.window_secs,
                LogRecord::Accepted {
                    t: now,
                    task: task_id.0,
                    cpu_work,
                    ded_hops: cost.dedicated_hops,
                    pub_hops: cost.public_hops,
                    attempts,
                    delivered_volume_mb: task.spec.delivered_volume_mb(),
                },
                flow_keys,
            )
        };
        self.log.records.push(accepted_record);
        for (from, hop) in flow_keys {
            self.flows_by_node.entry(from).or_default().insert((task_id, hop));
        }
        self.recompute_rate_and_project(task_id);
        self.push(now + window_secs, EventKind::WindowClose { task: task_id });
    }

    // -- streaming ---------------------------------------------------------

    fn advance_stream(&mut self, task_id: TaskId) {
        let now = self.now;
        let mut rate_record = None;
        {
            let task = &mut self.tasks[task_id.0 as usize];
            let Some(stream) = task.stream.as_mut() else { return };
            let dt = now - stream.last_advance;
            if dt > 0.0 {
                stream.delivered_bytes =
                    (stream.delivered_bytes + stream.rate_bps / 8.0 * dt).min(stream.volume_bytes);
                stream.last_advance = now;
                if self.log_rates {
                    rate_record = Some(stream.rate_bps);
                }
            }
        }
        if let Some(rate_bps) = rate_record {
            self.log.records.push(LogRecord::Rate { t: now, task: task_id.0, rate_bps });
        }
    }

    /// End-to-end delivery rate: the target scaled by the worst hop's
    /// effective share, never above the source emission schedule.
    fn effective_rate_bps(spec: &TaskSpec, stream: &Stream) -> f64 {
        let target = spec.target_rate_mbps * 1e6;
        let mut frac: f64 = 1.0;
        for f in &stream.flows {
            let carried = f.assignment.rate_bps() as f64 * f.perturb;
            frac = frac.min(carried / f.nominal_bps.max(1) as f64);
        }
        target * frac.clamp(0.0, 1.0)
    }

    fn recompute_rate_and_project(&mut self, task_id: TaskId) {
        self.advance_stream(task_id);
        let (check_t, gen, has_public) = {
            let task = &mut self.tasks[task_id.0 as usize];
            let Some(stream) = task.stream.as_mut() else { return };
            stream.rate_bps = Engine::effective_rate_bps(&task.spec, stream);
            stream.completion_gen += 1;
            let gen = stream.completion_gen;
            let remaining = stream.volume_bytes - stream.delivered_bytes;
            let has_public = stream
                .flows
                .iter()
                .any(|f| matches!(f.assignment, Assignment::Public { .. }));
            if remaining <= 0.5 {
                (Some(stream.last_advance), gen, has_public)
            } else if stream.rate_bps <= 0.0 {
                (None, gen, has_public)
            } else {
                (
                    Some(stream.last_advance + remaining * 8.0 / stream.rate_bps),
                    gen,
                    has_public,
                )
            }
        };
        let Some(t) = check_t else { return };
        // Public hops are re-perturbed at the next tick, which reprojects;
        // only schedule a check that lands before it.
        if has_public && self.perturb_ticking && t > self.next_perturb_time() + 1e-9 {
            return;
        }
        self.push(t, EventKind::CompletionCheck { task: task_id, gen });
    }

    fn handle_completion_check(&mut self, task_id: TaskId, gen: u64) {
        {
            let task = &self.tasks[task_id.0 as usize];
            if task.state != TaskState::Streaming {
                return;
            }
            if task.stream.as_ref().unwrap().completion_gen != gen {
                return;
            }
        }
        self.advance_stream(task_id);
        let done = {
            let stream = self.tasks[task_id.0 as usize].stream.as_ref().unwrap();
            stream.volume_bytes - stream.delivered_bytes <= 0.5
        };
        if done {
            self.complete_task(task_id);
        } else {
            self.recompute_rate_and_project(task_id);
        }
    }

    fn complete_task(&mut self, task_id: TaskId) {
        let now = self.now;
        let clamp = self.cfg.clamp_negative_deviation;
        let (records, flow_keys) = {
            let task = &mut self.tasks[task_id.0 as usize];
            let target_bps = task.spec.target_rate_mbps * 1e6;
            let stream = task.stream.as_mut().unwrap();
            stream.delivered_bytes = stream.volume_bytes;

            let mut records = Vec::new();
            let elapsed = now - stream.window_open_t;
            if elapsed > 1e-9 {
                let bytes = stream.delivered_bytes - stream.window_open_bytes;
                let inc = window_increment(target_bps, bytes, elapsed, clamp);
                stream.deviation_sum += inc;
                records.push(LogRecord::Window { t: now, task: task_id.0, increment: inc });
            }
            let ideal_secs = stream.volume_bytes * 8.0 / target_bps;
            let elongation = if ideal_secs > 0.0 { (now - stream.start) / ideal_secs } else { 1.0 };
            records.push(LogRecord::Completed {
                t: now,
                task: task_id.0,
                delivered_mb: stream.delivered_bytes / 1e6,
                elongation,
                deviation: stream.deviation_sum,
            });
            let flow_keys: Vec<(NodeId, u16)> =
                stream.flows.iter().map(|f| (f.from, f.service_hop)).collect();
            task.state = TaskState::Completed;
            task.stream = None;
            (records, flow_keys)
        };
        for (from, hop) in flow_keys {
            if let Some(set) = self.flows_by_node.get_mut(&from) {
                set.remove(&(task_id, hop));
            }
        }
        self.ledger
            .release_task(&mut self.net, task_id)
            .expect("release on completion");
        self.live_tasks -= 1;
        self.log.records.extend(records);
        self.audit_full();
    }

    fn handle_window_close(&mut self, task_id: TaskId) {
        if self.tasks[task_id.0 as usize].state != TaskState::Streaming {
            return;
        }
        self.advance_stream(task_id);
        let now = self.now;
        let clamp = self.cfg.clamp_negative_deviation;
        let (record, window_secs) = {
            let task = &mut self.tasks[task_id.0 as usize];
            let target_bps = task.spec.target_rate_mbps * 1e6;
            let stream = task.stream.as_mut().unwrap();
            let elapsed = now - stream.window_open_t;
            let bytes = stream.delivered_bytes - stream.window_open_bytes;
            let inc = window_increment(target_bps, bytes, elapsed, clamp);
            stream.deviation_sum += inc;
            stream.window_open_t = now;
            stream.window_open_bytes = stream.delivered_bytes;
            (
                LogRecord::Window { t: now, task: task_id.0, increment: inc },
                task.spec.window_secs,
            )
        };
        self.log.records.push(record);
        self.push(now + window_secs, EventKind::WindowClose { task: task_id });
    }

    // -- perturbation -------------------------------------------------------

    fn handle_perturb_tick(&mut self, k: u64) {
        if self.live_tasks == 0 {
            self.perturb_ticking = false;
            return;
        }
        let sigma = self.cfg.perturb_sigma;
        let mut touched: Vec<TaskId> = Vec::new();
        for (id, task) in self.tasks.iter_mut().enumerate() {
            if task.state != TaskState::Streaming {
                continue;
            }
            let stream = task.stream.as_mut().unwrap();
            let mut any = false;
            for f in stream.flows.iter_mut() {
                if matches!(f.assignment, Assignment::Public { .. }) {
                    f.perturb = perturb_factor(&mut self.perturb_rng, sigma);
                    any = true;
                }
            }
            if any {
                touched.push(TaskId(id as u32));
            }
        }
        for id in touched {
            self.recompute_rate_and_project(id);
        }
        let next = (k + 1) as f64 * self.cfg.perturb_tick_secs;
        self.push(next, EventKind::PerturbTick(k + 1));
    }

    // -- dynamic scheduling ----------------------------------------------------

    fn handle_epoch_tick(&mut self, k: u64) {
        if self.live_tasks == 0 {
            self.epoch_ticking = false;
            return;
        }
        let params = self.sched_params();
        let nodes: Vec<NodeId> = self
            .flows_by_node
            .iter()
            .filter(|(_, set)| !set.is_empty())
            .map(|(&n, _)| n)
            .collect();
        for node in nodes {
            let keys: Vec<(TaskId, u16)> = self
                .flows_by_node
                .get(&node)
                .map(|s| s.iter().copied().collect())
                .unwrap_or_default();
            if keys.is_empty() {
                continue;
            }
            let mut flows: Vec<Flow> = Vec::with_capacity(keys.len());
            for &(tid, hop) in &keys {
                let task = &self.tasks[tid.0 as usize];
                let Some(stream) = task.stream.as_ref() else { continue };
                let Some(f) = stream.flows.iter().find(|f| f.service_hop == hop) else { continue };
                // Hop-scaled deficit against the delivery schedule.
                let target_bps = task.spec.target_rate_mbps * 1e6;
                let expected =
                    (target_bps / 8.0 * (self.now - stream.start)).min(stream.volume_bytes);
                let advanced = (stream.delivered_bytes
                    + stream.rate_bps / 8.0 * (self.now - stream.last_advance))
                    .min(stream.volume_bytes);
                let behind = (expected - advanced).max(0.0);
                let deficit = behind * f.nominal_bps as f64 / target_bps.max(1.0);
                flows.push(Flow {
                    task: tid,
                    service_hop: hop,
                    from: f.from,
                    to: f.to,
                    target_rate_bps: f.nominal_bps,
                    deficit_bytes: deficit,
                    budget_per_byte: f.budget_per_byte,
                    hop_budget_per_sec: f.hop_budget_per_sec,
                    assignment: f.assignment.clone(),
                    pending_confirm: f.pending_path.is_some(),
                });
            }
            if flows.is_empty() {
                continue;
            }
            let plan =
                scheduler::reschedule_node(node, &mut flows, &mut self.net, &mut self.ledger, &params);

            let mut touched_tasks: BTreeSet<TaskId> = BTreeSet::new();
            let mut confirms: Vec<(f64, TaskId, u16)> = Vec::new();
            for (flow, entry) in flows.iter().zip(&plan.entries) {
                let probe_delay = entry.probe_launched.as_ref().map(|(path, _)| {
                    2.0 * path.iter().map(|&l| self.net.link(l).delay_ms).sum::<f64>()
                });
                let task = &mut self.tasks[flow.task.0 as usize];
                let Some(stream) = task.stream.as_mut() else { continue };
                let Some(f) = stream.flows.iter_mut().find(|f| f.service_hop == flow.service_hop)
                else {
                    continue;
                };
                if f.pending_path.is_some() {
                    continue;
                }
                f.assignment = flow.assignment.clone();
                if !matches!(f.assignment, Assignment::Public { .. }) {
                    f.perturb = 1.0;
                }
                if let Some((path, rate)) = &entry.probe_launched {
                    f.pending_path = Some((path.clone(), *rate));
                    confirms.push((probe_delay.unwrap(), flow.task, flow.service_hop));
                }
                touched_tasks.insert(flow.task);
            }
            for (delay_ms, tid, hop) in confirms {
                self.push(self.now + delay_ms / 1e3, EventKind::PathConfirm { task: tid, hop });
            }
            if self.emit_plan {
                for entry in &plan.entries {
                    self.log.records.push(LogRecord::Plan {
                        t: self.now,
                        node: node.0,
                        task: entry.task.0,
                        hop: entry.service_hop,
                        kind: entry.assignment.kind_str().to_string(),
                        rate_bps: entry.assignment.rate_bps(),
                    });
                }
            }
            for tid in touched_tasks {
                self.recompute_rate_and_project(tid);
            }
            self.audit_touched();
        }
        let next = (k + 1) as f64 * self.cfg.epoch_secs;
        self.push(next, EventKind::EpochTick(k + 1));
    }

    fn handle_path_confirm(&mut self, task_id: TaskId, hop: u16) {
        if self.tasks[task_id.0 as usize].state != TaskState::Streaming {
            return;
        }
        let release_uplink = {
            let task = &mut self.tasks[task_id.0 as usize];
            let stream = task.stream.as_mut().unwrap();
            let Some(f) = stream.flows.iter_mut().find(|f| f.service_hop == hop) else {
                return;
            };
            let Some((path, rate)) = f.pending_path.take() else { return };
            let released = match f.assignment {
                // Only the reserved claim is ledgered; the boost is not.
                Assignment::Public { rate_bps, .. } if rate_bps > 0 => Some((f.from, rate_bps)),
                _ => None,
            };
            f.assignment = Assignment::MultiHop { path, rate_bps: rate };
            f.perturb = 1.0;
            released
        };
        if let Some((node, rate_bps)) = release_uplink {
            self.ledger
                .release(&mut self.net, task_id, ResourceRef::Uplink(node), rate_bps)
                .expect("temp public release");
        }
        self.recompute_rate_and_project(task_id);
    }

    // -- main loop ----------------------------------------------------------

    fn run_loop(&mut self) -> Result<(), RunError> {
        while let Some(ev) = self.queue.pop() {
            debug_assert!(ev.t >= self.now - 1e-9, "causality violation");
            self.now = ev.t;
            match ev.kind {
                EventKind::Arrival(task) => self.handle_arrival(task),
                EventKind::MapMsg { task, dest, msg } => self.handle_map_msg(task, dest, msg),
                EventKind::SelectMap(task) => self.handle_select_map(task),
                EventKind::ProbeStep(task) => self.handle_probe_step(task),
                EventKind::RollbackStep { task, k } => self.handle_rollback_step(task, k),
                EventKind::Confirm(task) => self.handle_confirm(task),
                EventKind::EpochTick(k) => self.handle_epoch_tick(k),
                EventKind::PerturbTick(k) => self.handle_perturb_tick(k),
                EventKind::CompletionCheck { task, gen } => self.handle_completion_check(task, gen),
                EventKind::WindowClose { task } => self.handle_window_close(task),
                EventKind::PathConfirm { task, hop } => self.handle_path_confirm(task, hop),
            }
            self.events_processed += 1;
            self.audit_touched();
            if self.events_processed % 4096 == 0 {
                self.audit_full();
            }
            self.log_alloc_if_changed();
            if let Some(msg) = self.audit_error.take() {
                return Err(RunError::AuditViolation { t: self.now, msg });
            }
            // Every task resolved: whatever remains queued is stale
            // (superseded projections, ticks) and must not stretch the run.
            if self.live_tasks == 0 && self.pending_arrivals == 0 {
                break;
            }
        }
        Ok(())
    }
}

/// Extra engine switches used by tests and the experiment driver.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub log_rates: bool,
    pub emit_plan: bool,
}

/// Runs one simulation on a pre-generated pristine network and trace.
pub fn run_with(
    cfg: &SimConfig,
    network: Network,
    trace: &[TraceEntry],
    seed: u64,
) -> Result<(RunLog, MetricsReport), RunError> {
    run_with_options(cfg, network, trace, seed, RunOptions::default())
}

pub fn run_with_options(
    cfg: &SimConfig,
    network: Network,
    trace: &[TraceEntry],
    seed: u64,
    options: RunOptions,
) -> Result<(RunLog, MetricsReport), RunError> {
    let mut log = RunLog::default();
    for (k, v) in [
        ("seed", seed.to_string()),
        ("mode", cfg.mode.as_str().to_string()),
        ("dynamic", cfg.dynamic_scheduling.to_string()),
        ("total_cpu", network.total_cpu_capacity().to_string()),
        ("total_link_bps", network.total_link_capacity().to_string()),
        ("total_uplink_bps", network.total_uplink_capacity().to_string()),
        ("horizon_secs", cfg.measure_horizon_secs.to_string()),
    ] {
        log.records.push(LogRecord::Meta { key: k.into(), value: v });
    }

    let mut tasks = Vec::with_capacity(trace.len());
    for entry in trace {
        let chain = rate_chain(&entry.spec)?;
        let budgets = apportion_budget(&entry.spec, cfg.transport_fraction)?;
        tasks.push(TaskRuntime {
            spec: entry.spec.clone(),
            chain,
            budgets,
            state: TaskState::Pending,
            session: None,
            stream: None,
        });
    }

    let mut ledger = ClaimLedger::new();
    ledger.set_collect_touched(cfg.audit);
    let mut engine = Engine {
        cfg: cfg.clone(),
        net: network,
        now: 0.0,
        seq: 0,
        queue: BinaryHeap::new(),
        ledger,
        tasks,
        perturb_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, "perturb")),
        log,
        flows_by_node: BTreeMap::new(),
        live_tasks: 0,
        pending_arrivals: trace.len() as u64,
        epoch_ticking: false,
        perturb_ticking: false,
        last_alloc_logged: (0, 0, 0),
        audit_error: None,
        log_rates: options.log_rates,
        emit_plan: options.emit_plan,
        events_processed: 0,
    };
    for (i, entry) in trace.iter().enumerate() {
        engine.push(entry.arrival_secs, EventKind::Arrival(TaskId(i as u32)));
    }
    engine.run_loop()?;
    engine.audit_full();
    if let Some(msg) = engine.audit_error.take() {
        return Err(RunError::AuditViolation { t: engine.now, msg });
    }
    engine.log.records.push(LogRecord::End { t: engine.now });
    let report = metrics::summarize(&engine.log).expect("own log is well-formed");
    Ok((engine.log, report))
}

/// Generates the platform and workload from per-concern seed streams and
/// runs the full trace.
pub fn run(cfg: &SimConfig, seed: u64) -> Result<(RunLog, MetricsReport), RunError> {
    cfg.validate()?;
    let network = Network::generate(&cfg.topology, derive_seed(seed, "topology"))?;
    let trace = workload::generate_trace(&cfg.workload, &network, derive_seed(seed, "workload"))?;
    run_with(cfg, network, &trace, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::topology::{mbps_to_bps, DedicatedLink, ServerNode, ServiceClass, ServiceId};
    use std::collections::BTreeSet;

    fn small_cfg() -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.topology.n_nodes = 30;
        cfg.topology.n_links = 35;
        cfg.topology.n_service_types = 8;
        cfg.workload.n_tasks = 40;
        cfg.workload.chain_len = 4;
        cfg.workload.mean_volume_mb = 20.0;
        cfg
    }

    #[test]
    fn identical_seeds_identical_logs() {
        let cfg = small_cfg();
        let (log_a, _) = run(&cfg, 7).unwrap();
        let (log_b, _) = run(&cfg, 7).unwrap();
        assert_eq!(log_a.to_csv(), log_b.to_csv());
        let (log_c, _) = run(&cfg, 8).unwrap();
        assert_ne!(log_a.to_csv(), log_c.to_csv());
    }

    #[test]
    fn empty_trace_yields_zero_metrics() {
        let cfg = SimConfig::default();
        let net = Network::generate(&cfg.topology, 1).unwrap();
        let (_, report) = run_with(&cfg, net, &[], 1).unwrap();
        assert_eq!(report.tasks_submitted, 0);
        assert_eq!(report.acceptance_ratio, 0.0);
        assert_eq!(report.throughput_mb_per_hour, 0.0);
        assert_eq!(report.server_utilization, 0.0);
    }

    #[test]
    fn sigma_zero_factor_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(perturb_factor(&mut rng, 0.0), 1.0);
        }
    }

    // 1e5 draws at sigma = 1: about 95% of factors inside [1/4, 4] and the
    // median within 2% of 1.
    #[test]
    fn perturbation_statistics_match_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut within = 0u32;
        let mut factors: Vec<f64> = Vec::with_capacity(n);
        for _ in 0..n {
            let f = perturb_factor(&mut rng, 1.0);
            if (0.25..=4.0).contains(&f) {
                within += 1;
            }
            factors.push(f);
        }
        let frac = within as f64 / n as f64;
        assert!((frac - 0.9545).abs() < 0.01, "fraction {frac}");
        factors.sort_by(f64::total_cmp);
        let median = factors[n / 2];
        assert!((median - 1.0).abs() < 0.02, "median {median}");
    }

    #[test]
    fn window_increment_arithmetic() {
        // Full compliance over a 10 s window at 1 Mbps.
        assert_eq!(window_increment(1e6, 1e6 / 8.0 * 10.0, 10.0, true), 0.0);
        // Bhat = 0.75 Mbps against 1 Mbps over four windows sums to 1.0.
        let inc = window_increment(1e6, 0.75e6 / 8.0 * 10.0, 10.0, true);
        assert!((4.0 * inc - 1.0).abs() < 1e-12);
        // Over-delivery clamps at zero; unclamped it goes negative.
        assert_eq!(window_increment(1e6, 2e6 / 8.0 * 10.0, 10.0, true), 0.0);
        assert!(window_increment(1e6, 2e6 / 8.0 * 10.0, 10.0, false) < 0.0);
        assert_eq!(window_increment(1e6, 0.0, 0.0, true), 0.0);
    }

    /// Hand-built 2-node platform: source 0 hosts the only component,
    /// delivery at 1 over a single ample link.
    fn two_node_setup() -> (Network, Vec<TraceEntry>) {
        let services = vec![ServiceClass { shrinkage: 1.0, cpu_factor: 1.0 }];
        let nodes = (0..2)
            .map(|id| ServerNode {
                id: NodeId(id),
                cpu_capacity: 10_000_000,
                cpu_allocated: 0,
                hosted_services: if id == 0 {
                    [ServiceId(0)].into_iter().collect()
                } else {
                    BTreeSet::new()
                },
                uplink_bw: mbps_to_bps(2.0),
                uplink_allocated: 0,
                uplink_delay_ms: 20.0,
            })
            .collect();
        let links = vec![DedicatedLink {
            id: LinkId(0),
            a: NodeId(0),
            b: NodeId(1),
            bandwidth: mbps_to_bps(10.0),
            allocated: 0,
            delay_ms: 2.0,
        }];
        let net = Network::from_parts(nodes, links, services);
        let spec = TaskSpec {
            id: TaskId(0),
            services: vec![ServiceId(0)],
            source_node: NodeId(0),
            delivery_node: NodeId(1),
            target_rate_mbps: 1.0,
            data_volume_mb: 1.0,
            price_per_byte: 1e-6,
            window_secs: 10.0,
            shrinkage: vec![1.0],
            cpu_factors: vec![1.0],
        };
        (net, vec![TraceEntry { arrival_secs: 0.0, spec }])
    }

    // An all-dedicated 1 Mbps flow moving 1 MB takes exactly 8 seconds:
    // elongation 1.0, deviation 0.
    #[test]
    fn all_dedicated_task_delivers_exactly() {
        let (net, trace) = two_node_setup();
        let cfg = SimConfig::default();
        let (log, report) = run_with(&cfg, net, &trace, 5).unwrap();
        let completed: Vec<_> = log
            .records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Completed { delivered_mb, elongation, deviation, .. } => {
                    Some((*delivered_mb, *elongation, *deviation))
                }
                _ => None,
            })
            .collect();
        assert_eq!(completed.len(), 1);
        let (mb, elong, dev) = completed[0];
        assert!((mb - 1.0).abs() < 1e-9, "delivered {mb}");
        assert!((elong - 1.0).abs() < 1e-3, "elongation {elong}");
        assert_eq!(dev, 0.0);
        assert_eq!(report.tasks_accepted, 1);
        assert!((report.mean_execution_elongation - 1.0).abs() < 1e-3);
    }

    // Delivered bytes equal trapezoidal integration of the logged rate
    // series (fluid model between events).
    #[test]
    fn delivered_bytes_match_rate_series_integration() {
        let mut cfg = small_cfg();
        cfg.workload.n_tasks = 12;
        cfg.workload.mean_volume_mb = 10.0;
        let net = Network::generate(&cfg.topology, derive_seed(9, "topology")).unwrap();
        let trace =
            workload::generate_trace(&cfg.workload, &net, derive_seed(9, "workload")).unwrap();
        let (log, _) = run_with_options(
            &cfg,
            net,
            &trace,
            9,
            RunOptions { log_rates: true, emit_plan: false },
        )
        .unwrap();

        let mut last_t: std::collections::BTreeMap<u32, f64> = Default::default();
        let mut integral: std::collections::BTreeMap<u32, f64> = Default::default();
        let mut start: std::collections::BTreeMap<u32, f64> = Default::default();
        let mut delivered: std::collections::BTreeMap<u32, f64> = Default::default();
        for r in &log.records {
            match r {
                LogRecord::Accepted { t, task, .. } => {
                    start.insert(*task, *t);
                    last_t.insert(*task, *t);
                }
                LogRecord::Rate { t, task, rate_bps } => {
                    let prev = last_t.get(task).copied().unwrap_or(*t);
                    // The logged rate covered (prev, t].
                    *integral.entry(*task).or_default() += rate_bps / 8.0 * (t - prev);
                    last_t.insert(*task, *t);
                }
                LogRecord::Completed { task, delivered_mb, .. } => {
                    delivered.insert(*task, delivered_mb * 1e6);
                }
                _ => {}
            }
        }
        assert!(!delivered.is_empty());
        for (task, bytes) in &delivered {
            let replayed = integral.get(task).copied().unwrap_or(0.0);
            let rel = (replayed - bytes).abs() / bytes.max(1.0);
            assert!(rel < 1e-6, "task {task}: integral {replayed} vs delivered {bytes}");
        }
    }

    #[test]
    fn deviation_matches_offline_window_replay() {
        let mut cfg = small_cfg();
        cfg.workload.n_tasks = 25;
        let (log, report) = run(&cfg, 3).unwrap();
        let mut sums: std::collections::BTreeMap<u32, f64> = Default::default();
        let mut completed: std::collections::BTreeMap<u32, f64> = Default::default();
        for r in &log.records {
            match r {
                LogRecord::Window { task, increment, .. } => *sums.entry(*task).or_default() += increment,
                LogRecord::Completed { task, deviation, .. } => {
                    completed.insert(*task, *deviation);
                }
                _ => {}
            }
        }
        assert!(!completed.is_empty());
        for (task, dev) in &completed {
            let replayed = sums.get(task).copied().unwrap_or(0.0);
            assert!(
                (replayed - dev).abs() < 1e-9,
                "task {task}: replay {replayed} vs logged {dev}"
            );
        }
        assert!(report.mean_sla_deviation >= 0.0);
    }

    #[test]
    fn runlog_round_trips_through_csv() {
        let cfg = small_cfg();
        let (log, _) = run(&cfg, 11).unwrap();
        let csv = log.to_csv();
        let parsed = RunLog::from_csv(&csv);
        assert_eq!(parsed.to_csv(), csv);
        let report_a = metrics::summarize(&log).unwrap();
        let report_b = metrics::summarize(&parsed).unwrap();
        assert_eq!(report_a.to_text(), report_b.to_text());
    }
}
