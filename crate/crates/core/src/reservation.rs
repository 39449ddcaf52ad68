//! Source-to-delivery reservation: a probe walks the selected map claiming
//! per-node CPU and outgoing-hop bandwidth atomically at each visit, rolls
//! back in reverse on any shortfall, and commits into flow allocations once
//! it reaches the delivery node.
//!
//! Every claim flows through [`ClaimLedger`] so the per-resource sum of
//! live task claims can be audited against the allocation counters after
//! any event.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::mapping::{FeasibleMap, HopKind, HopVia};
use crate::topology::{Bps, CpuMicros, Network, NodeId, ResourceRef, TopologyError};
use crate::workload::{RateChain, TaskId, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    InsufficientCpu,
    InsufficientBandwidth,
}

#[derive(Debug, Error)]
pub enum ReservationError {
    #[error("ledger under-release for task {0:?} on {1:?}")]
    LedgerUnderflow(TaskId, ResourceRef),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Task-attributed claim bookkeeping mirrored against the network counters.
#[derive(Debug, Default, Clone)]
pub struct ClaimLedger {
    by_resource: BTreeMap<ResourceRef, BTreeMap<TaskId, u64>>,
    totals: BTreeMap<ResourceRef, u64>,
    /// Platform-wide allocation sums by resource class, for utilization logs.
    pub agg_link_bps: u64,
    pub agg_cpu: u64,
    pub agg_uplink_bps: u64,
    collect_touched: bool,
    touched: Vec<ResourceRef>,
}

impl ClaimLedger {
    pub fn new() -> ClaimLedger {
        ClaimLedger::default()
    }

    /// Record touched resources so the engine can audit after every event.
    pub fn set_collect_touched(&mut self, on: bool) {
        self.collect_touched = on;
    }

    pub fn take_touched(&mut self) -> Vec<ResourceRef> {
        std::mem::take(&mut self.touched)
    }

    pub fn reserve(
        &mut self,
        net: &mut Network,
        task: TaskId,
        res: ResourceRef,
        amount: u64,
    ) -> Result<(), TopologyError> {
        if amount == 0 {
            return Ok(());
        }
        net.reserve(res, amount)?;
        *self.by_resource.entry(res).or_default().entry(task).or_default() += amount;
        *self.totals.entry(res).or_default() += amount;
        match res {
            ResourceRef::Link(_) => self.agg_link_bps += amount,
            ResourceRef::NodeCpu(_) => self.agg_cpu += amount,
            ResourceRef::Uplink(_) => self.agg_uplink_bps += amount,
        }
        if self.collect_touched {
            self.touched.push(res);
        }
        Ok(())
    }

    pub fn release(
        &mut self,
        net: &mut Network,
        task: TaskId,
        res: ResourceRef,
        amount: u64,
    ) -> Result<(), ReservationError> {
        if amount == 0 {
            return Ok(());
        }
        let per_task = self
            .by_resource
            .get_mut(&res)
            .ok_or(ReservationError::LedgerUnderflow(task, res))?;
        let held = per_task
            .get_mut(&task)
            .ok_or(ReservationError::LedgerUnderflow(task, res))?;
        if *held < amount {
            return Err(ReservationError::LedgerUnderflow(task, res));
        }
        net.release(res, amount)?;
        *held -= amount;
        if *held == 0 {
            per_task.remove(&task);
        }
        *self.totals.get_mut(&res).unwrap() -= amount;
        match res {
            ResourceRef::Link(_) => self.agg_link_bps -= amount,
            ResourceRef::NodeCpu(_) => self.agg_cpu -= amount,
            ResourceRef::Uplink(_) => self.agg_uplink_bps -= amount,
        }
        if self.collect_touched {
            self.touched.push(res);
        }
        Ok(())
    }

    pub fn held(&self, task: TaskId, res: ResourceRef) -> u64 {
        self.by_resource
            .get(&res)
            .and_then(|m| m.get(&task))
            .copied()
            .unwrap_or(0)
    }

    /// Releases everything a task still holds; used at task completion.
    pub fn release_task(&mut self, net: &mut Network, task: TaskId) -> Result<(), ReservationError> {
        let resources: Vec<(ResourceRef, u64)> = self
            .by_resource
            .iter()
            .filter_map(|(res, m)| m.get(&task).map(|&amt| (*res, amt)))
            .collect();
        for (res, amt) in resources {
            self.release(net, task, res, amt)?;
        }
        Ok(())
    }

    /// Checks one resource: ledger total equals the allocation counter.
    pub fn audit_resource(&self, net: &Network, res: ResourceRef) -> Result<(), String> {
        let expected = self.totals.get(&res).copied().unwrap_or(0);
        let actual = net.allocated(res).map_err(|e| e.to_string())?;
        if expected != actual {
            return Err(format!(
                "conservation violation on {res:?}: ledger {expected} vs allocated {actual}"
            ));
        }
        Ok(())
    }

    /// Full sweep over every resource in the platform.
    pub fn audit_all(&self, net: &Network) -> Result<(), String> {
        for link in &net.links {
            self.audit_resource(net, ResourceRef::Link(link.id))?;
        }
        for node in &net.nodes {
            self.audit_resource(net, ResourceRef::NodeCpu(node.id))?;
            self.audit_resource(net, ResourceRef::Uplink(node.id))?;
        }
        Ok(())
    }
}

/// Bandwidth claim leaving a visit, with the physical travel delay to the
/// next visit.
#[derive(Debug, Clone, Copy)]
pub struct OutHop {
    pub resource: ResourceRef,
    pub rate_bps: Bps,
    pub delay_ms: f64,
    pub service_hop: u16,
}

/// Everything one node must grant atomically when the probe arrives.
#[derive(Debug, Clone)]
pub struct Visit {
    pub node: NodeId,
    pub cpu_claims: Vec<(u16, CpuMicros)>,
    pub out: Option<OutHop>,
}

/// A reservation probe walking the map from the data source toward the
/// delivery node. `position` indexes the next visit to reserve; everything
/// before it is held.
#[derive(Debug, Clone)]
pub struct ReservationProbe {
    pub task: TaskId,
    pub map: FeasibleMap,
    pub visits: Vec<Visit>,
    pub position: usize,
}

impl ReservationProbe {
    /// Flattens the map into the data-order visit sequence.
    pub fn new(task: &TaskSpec, chain: &RateChain, map: FeasibleMap, net: &Network) -> ReservationProbe {
        let n = task.chain_len();
        let mut visits: Vec<Visit> = vec![Visit {
            node: task.source_node,
            cpu_claims: Vec::new(),
            out: None,
        }];
        let route_of = |hop: usize| map.service_hops.iter().find(|r| r.hop == hop as u16);
        let walk_route = |visits: &mut Vec<Visit>, hop: usize| {
            if let Some(route) = route_of(hop) {
                for phys in &route.path {
                    let last = visits.last_mut().unwrap();
                    debug_assert_eq!(last.node, phys.from);
                    let (resource, delay) = match phys.via {
                        HopVia::Link(l) => (ResourceRef::Link(l), net.link(l).delay_ms),
                        HopVia::Public => (
                            ResourceRef::Uplink(phys.from),
                            net.node(phys.from).uplink_delay_ms,
                        ),
                    };
                    last.out = Some(OutHop {
                        resource,
                        rate_bps: route.rate_bps,
                        delay_ms: delay,
                        service_hop: hop as u16,
                    });
                    visits.push(Visit {
                        node: phys.to,
                        cpu_claims: Vec::new(),
                        out: None,
                    });
                }
            }
        };
        for comp in 0..n {
            walk_route(&mut visits, comp);
            let demand = crate::topology::cpu_demand(task.cpu_factors[comp], chain.input_mbps[comp]);
            let visit = visits.last_mut().unwrap();
            debug_assert_eq!(visit.node, map.node_of(comp as u16));
            visit.cpu_claims.push((comp as u16, demand));
        }
        walk_route(&mut visits, n);
        debug_assert_eq!(visits.last().unwrap().node, task.delivery_node);
        ReservationProbe {
            task: task.id,
            map,
            visits,
            position: 0,
        }
    }

    pub fn finished(&self) -> bool {
        self.position >= self.visits.len()
    }

    /// Delay from visit `k` to the next one, ms.
    pub fn hop_delay_ms(&self, k: usize) -> f64 {
        self.visits[k].out.map(|o| o.delay_ms).unwrap_or(0.0)
    }

    /// Total one-way travel time along the map, ms.
    pub fn total_path_delay_ms(&self) -> f64 {
        self.visits.iter().filter_map(|v| v.out.map(|o| o.delay_ms)).sum()
    }

    /// Claims of all visits up to but excluding `position`.
    fn visit_claims(visit: &Visit) -> Vec<(ResourceRef, u64)> {
        let mut claims: Vec<(ResourceRef, u64)> = Vec::new();
        let cpu_total: CpuMicros = visit.cpu_claims.iter().map(|(_, d)| d).sum();
        if cpu_total > 0 {
            claims.push((ResourceRef::NodeCpu(visit.node), cpu_total));
        }
        if let Some(out) = visit.out {
            claims.push((out.resource, out.rate_bps));
        }
        claims
    }
}

/// Attempts the current visit's claims atomically; on success residuals
/// drop by exactly the claims and the probe advances, on any shortfall
/// nothing changes.
pub fn try_reserve(
    probe: &mut ReservationProbe,
    net: &mut Network,
    ledger: &mut ClaimLedger,
) -> Result<(), RejectReason> {
    let visit = &probe.visits[probe.position];
    let claims = ReservationProbe::visit_claims(visit);
    for &(res, amount) in &claims {
        let residual = net.residual(res).unwrap_or(0);
        if amount > residual {
            return Err(match res {
                ResourceRef::NodeCpu(_) => RejectReason::InsufficientCpu,
                _ => RejectReason::InsufficientBandwidth,
            });
        }
    }
    for &(res, amount) in &claims {
        ledger
            .reserve(net, probe.task, res, amount)
            .expect("checked residual");
    }
    probe.position += 1;
    Ok(())
}

/// Releases the claims of one already-reserved visit (a rollback step).
pub fn release_visit(
    probe: &ReservationProbe,
    k: usize,
    net: &mut Network,
    ledger: &mut ClaimLedger,
) -> Result<(), ReservationError> {
    debug_assert!(k < probe.position);
    for (res, amount) in ReservationProbe::visit_claims(&probe.visits[k]) {
        ledger.release(net, probe.task, res, amount)?;
    }
    Ok(())
}

/// Undoes every held claim in reverse visit order.
pub fn rollback(
    probe: &mut ReservationProbe,
    net: &mut Network,
    ledger: &mut ClaimLedger,
) -> Result<(), ReservationError> {
    for k in (0..probe.position).rev() {
        release_visit(probe, k, net, ledger)?;
    }
    probe.position = 0;
    Ok(())
}

/// One service hop's committed bandwidth assignment.
#[derive(Debug, Clone)]
pub struct FlowAllocation {
    pub service_hop: u16,
    pub kind: HopKind,
    /// Upstream processing site (data sender side of the hop).
    pub from: NodeId,
    /// Downstream processing site.
    pub to: NodeId,
    pub rate_bps: Bps,
    /// Claimed resources along the route, data order.
    pub resources: Vec<ResourceRef>,
    pub path_delay_ms: f64,
}

/// An admitted task holding resources until release.
#[derive(Debug, Clone)]
pub struct ActiveTask {
    pub task: TaskId,
    pub map: FeasibleMap,
    pub allocations: Vec<FlowAllocation>,
}

/// Converts a fully reserved probe into per-hop flow allocations.
pub fn commit(probe: ReservationProbe, net: &Network) -> ActiveTask {
    assert!(probe.finished(), "commit requires a fully reserved probe");
    let mut allocations = Vec::new();
    for route in &probe.map.service_hops {
        let mut resources = Vec::new();
        let mut delay = 0.0;
        for phys in &route.path {
            match phys.via {
                HopVia::Link(l) => {
                    resources.push(ResourceRef::Link(l));
                    delay += net.link(l).delay_ms;
                }
                HopVia::Public => {
                    resources.push(ResourceRef::Uplink(phys.from));
                    delay += net.node(phys.from).uplink_delay_ms;
                }
            }
        }
        allocations.push(FlowAllocation {
            service_hop: route.hop,
            kind: route.kind,
            from: route.path.first().unwrap().from,
            to: route.path.last().unwrap().to,
            rate_bps: route.rate_bps,
            resources,
            path_delay_ms: delay,
        });
    }
    ActiveTask {
        task: probe.task,
        map: probe.map,
        allocations,
    }
}

/// Returns every resource the task still holds.
pub fn release(
    active: &ActiveTask,
    net: &mut Network,
    ledger: &mut ClaimLedger,
) -> Result<(), ReservationError> {
    ledger.release_task(net, active.task)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PlatformMode;
    use crate::mapping::{enumerate_feasible_bruteforce, MapContext};
    use crate::topology::{mbps_to_bps, DedicatedLink, LinkId, ServerNode, ServiceClass, ServiceId};
    use crate::workload::{apportion_budget, rate_chain};
    use std::collections::BTreeSet;

    fn line_network(cpu_units: f64, link_mbps: f64) -> Network {
        // 0 -- 1 -- 2, node 1 hosts service 0.
        let services = vec![ServiceClass {
            shrinkage: 1.0,
            cpu_factor: 1.0,
        }];
        let nodes = (0..3)
            .map(|id| ServerNode {
                id: NodeId(id),
                cpu_capacity: (cpu_units * 1e6) as u64,
                cpu_allocated: 0,
                hosted_services: if id == 1 {
                    [ServiceId(0)].into_iter().collect()
                } else {
                    BTreeSet::new()
                },
                uplink_bw: mbps_to_bps(2.0),
                uplink_allocated: 0,
                uplink_delay_ms: 20.0,
            })
            .collect();
        let links = vec![
            DedicatedLink {
                id: LinkId(0),
                a: NodeId(0),
                b: NodeId(1),
                bandwidth: mbps_to_bps(link_mbps),
                allocated: 0,
                delay_ms: 3.0,
            },
            DedicatedLink {
                id: LinkId(1),
                a: NodeId(1),
                b: NodeId(2),
                bandwidth: mbps_to_bps(link_mbps),
                allocated: 0,
                delay_ms: 4.0,
            },
        ];
        Network::from_parts(nodes, links, services)
    }

    fn one_comp_task(rate: f64) -> TaskSpec {
        TaskSpec {
            id: TaskId(0),
            services: vec![ServiceId(0)],
            source_node: NodeId(0),
            delivery_node: NodeId(2),
            target_rate_mbps: rate,
            data_volume_mb: 10.0,
            price_per_byte: 1e-6,
            window_secs: 10.0,
            shrinkage: vec![1.0],
            cpu_factors: vec![1.0],
        }
    }

    fn probe_for(net: &Network, task: &TaskSpec) -> ReservationProbe {
        let chain = rate_chain(task).unwrap();
        let budgets = apportion_budget(task, 0.2).unwrap();
        let ctx = MapContext::new(net, task, &chain, &budgets, 1e-9, PlatformMode::DedicatedOnly);
        let maps = enumerate_feasible_bruteforce(&ctx).unwrap();
        assert!(!maps.is_empty());
        // The minimal map: two direct hops through node 1, no forwarding.
        let map = maps
            .into_iter()
            .find(|m| m.service_hops.iter().map(|r| r.path.len()).sum::<usize>() == 2)
            .expect("two-hop map");
        ReservationProbe::new(task, &chain, map, net)
    }

    #[test]
    fn ample_residuals_reserve_exact_amounts() {
        let mut net = line_network(10.0, 10.0);
        let task = one_comp_task(1.0);
        let mut ledger = ClaimLedger::new();
        let mut probe = probe_for(&net, &task);
        while !probe.finished() {
            try_reserve(&mut probe, &mut net, &mut ledger).unwrap();
        }
        assert_eq!(net.allocated(ResourceRef::Link(LinkId(0))).unwrap(), mbps_to_bps(1.0));
        assert_eq!(net.allocated(ResourceRef::Link(LinkId(1))).unwrap(), mbps_to_bps(1.0));
        assert_eq!(net.allocated(ResourceRef::NodeCpu(NodeId(1))).unwrap(), 1_000_000);
        ledger.audit_all(&net).unwrap();
    }

    #[test]
    fn cpu_shortfall_rejects_without_mutation() {
        // Map against ample capacity, then shrink it below the demand by
        // one micro-unit before the probe lands (stale mapping knowledge).
        let mut net = line_network(10.0, 10.0);
        let task = one_comp_task(1.0);
        let mut ledger = ClaimLedger::new();
        let mut probe = probe_for(&net, &task);
        net.nodes[1].cpu_capacity = 999_999;
        // Source visit carries only the outgoing link claim.
        try_reserve(&mut probe, &mut net, &mut ledger).unwrap();
        let before_link1 = net.allocated(ResourceRef::Link(LinkId(1))).unwrap();
        let err = try_reserve(&mut probe, &mut net, &mut ledger).unwrap_err();
        assert_eq!(err, RejectReason::InsufficientCpu);
        assert_eq!(net.allocated(ResourceRef::NodeCpu(NodeId(1))).unwrap(), 0);
        assert_eq!(net.allocated(ResourceRef::Link(LinkId(1))).unwrap(), before_link1);
    }

    #[test]
    fn rollback_of_empty_prefix_is_noop() {
        let mut net = line_network(10.0, 10.0);
        let task = one_comp_task(1.0);
        let mut ledger = ClaimLedger::new();
        let snapshot = net.to_text();
        let mut probe = probe_for(&net, &task);
        rollback(&mut probe, &mut net, &mut ledger).unwrap();
        assert_eq!(net.to_text(), snapshot);
    }

    #[test]
    fn reserve_then_rollback_restores_residuals() {
        let mut net = line_network(10.0, 10.0);
        let task = one_comp_task(1.0);
        let mut ledger = ClaimLedger::new();
        let before: Vec<u64> = [
            ResourceRef::Link(LinkId(0)),
            ResourceRef::Link(LinkId(1)),
            ResourceRef::NodeCpu(NodeId(1)),
        ]
        .iter()
        .map(|r| net.residual(*r).unwrap())
        .collect();
        let mut probe = probe_for(&net, &task);
        while !probe.finished() {
            try_reserve(&mut probe, &mut net, &mut ledger).unwrap();
        }
        rollback(&mut probe, &mut net, &mut ledger).unwrap();
        let after: Vec<u64> = [
            ResourceRef::Link(LinkId(0)),
            ResourceRef::Link(LinkId(1)),
            ResourceRef::NodeCpu(NodeId(1)),
        ]
        .iter()
        .map(|r| net.residual(*r).unwrap())
        .collect();
        assert_eq!(before, after);
        ledger.audit_all(&net).unwrap();
    }

    #[test]
    fn contending_probes_one_commits_one_rolls_back() {
        // Link capacity fits exactly one 1 Mbps flow.
        for order in [[0u32, 1], [1, 0]] {
            let mut net = line_network(10.0, 1.0);
            let mut ledger = ClaimLedger::new();
            let mut task_a = one_comp_task(1.0);
            task_a.id = TaskId(order[0]);
            let mut task_b = one_comp_task(1.0);
            task_b.id = TaskId(order[1]);

            let mut probe_a = probe_for(&net, &task_a);
            let mut probe_b = probe_for(&net, &task_b);
            // Interleave: A reserves the first visit, then B tries it.
            try_reserve(&mut probe_a, &mut net, &mut ledger).unwrap();
            let b_result = try_reserve(&mut probe_b, &mut net, &mut ledger);
            assert_eq!(b_result.unwrap_err(), RejectReason::InsufficientBandwidth);
            rollback(&mut probe_b, &mut net, &mut ledger).unwrap();
            while !probe_a.finished() {
                try_reserve(&mut probe_a, &mut net, &mut ledger).unwrap();
            }
            // Shared link residual reflects only A's claim.
            assert_eq!(net.residual(ResourceRef::Link(LinkId(0))).unwrap(), 0);
            ledger.audit_all(&net).unwrap();
        }
    }

    #[test]
    fn interleaved_rollback_leaves_other_task_claims() {
        let mut net = line_network(10.0, 3.0);
        let mut ledger = ClaimLedger::new();
        let task_a = one_comp_task(1.0);
        let mut task_b = one_comp_task(2.0);
        task_b.id = TaskId(1);

        let mut probe_a = probe_for(&net, &task_a);
        let mut probe_b = probe_for(&net, &task_b);
        while !probe_a.finished() {
            try_reserve(&mut probe_a, &mut net, &mut ledger).unwrap();
        }
        while !probe_b.finished() {
            try_reserve(&mut probe_b, &mut net, &mut ledger).unwrap();
        }
        rollback(&mut probe_b, &mut net, &mut ledger).unwrap();
        let link = ResourceRef::Link(LinkId(0));
        assert_eq!(
            net.residual(link).unwrap(),
            net.capacity(link).unwrap() - mbps_to_bps(1.0)
        );
        ledger.audit_all(&net).unwrap();
    }

    #[test]
    fn commit_then_release_restores_everything() {
        let mut net = line_network(10.0, 10.0);
        let task = one_comp_task(1.0);
        let mut ledger = ClaimLedger::new();
        let snapshot = net.to_text();
        let mut probe = probe_for(&net, &task);
        while !probe.finished() {
            try_reserve(&mut probe, &mut net, &mut ledger).unwrap();
        }
        let active = commit(probe, &net);
        assert_eq!(active.allocations.len(), 2);
        assert!(active.allocations.iter().all(|a| a.kind == HopKind::DirectDedicated));
        release(&active, &mut net, &mut ledger).unwrap();
        assert_eq!(net.to_text(), snapshot);
        ledger.audit_all(&net).unwrap();
    }
}
