//! Periodic per-node link re-allocation: competing flows are re-ranked by
//! apportioned price times needed bandwidth, direct dedicated links are
//! packed greedily, pooled leftovers probe multi-hop dedicated paths within
//! their transport budget, and the rest share the public uplink
//! proportionally to priority.

use std::cmp::Ordering;
use std::collections::VecDeque;

use crate::config::PlatformMode;
use crate::reservation::ClaimLedger;
use crate::topology::{Bps, LinkId, Network, NodeId, ResourceRef};
use crate::workload::TaskId;

/// How a flow's service hop is currently carried.
///
/// Public assignments separate the reserved claim (admission-relevant,
/// ledgered) from the opportunistic boost the scheduler grants out of the
/// uplink's instantaneous spare capacity; boosts are re-derived every epoch
/// and never block admissions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Assignment {
    /// Direct dedicated capacity, possibly split over parallel (u,v) links.
    Direct { splits: Vec<(LinkId, Bps)> },
    /// A reserved dedicated path through forwarding nodes.
    MultiHop { path: Vec<LinkId>, rate_bps: Bps },
    Public { rate_bps: Bps, boost_bps: Bps },
    /// No capacity this epoch (saturated dedicated-only platform).
    Unassigned,
}

impl Assignment {
    /// The rate the flow is actually granted this epoch.
    pub fn rate_bps(&self) -> Bps {
        match self {
            Assignment::Direct { splits } => splits.iter().map(|(_, r)| r).sum(),
            Assignment::MultiHop { rate_bps, .. } => *rate_bps,
            Assignment::Public { rate_bps, boost_bps } => rate_bps + boost_bps,
            Assignment::Unassigned => 0,
        }
    }

    /// The ledgered reservation behind the grant.
    pub fn claim_bps(&self) -> Bps {
        match self {
            Assignment::Public { rate_bps, .. } => *rate_bps,
            other => other.rate_bps(),
        }
    }

    pub fn kind_str(&self) -> &'static str {
        match self {
            Assignment::Direct { .. } => "direct",
            Assignment::MultiHop { .. } => "multihop",
            Assignment::Public { .. } => "public",
            Assignment::Unassigned => "none",
        }
    }
}

/// One competing task segment at the scheduling node.
#[derive(Debug, Clone)]
pub struct Flow {
    pub task: TaskId,
    pub service_hop: u16,
    /// Upstream processing node (the node being scheduled).
    pub from: NodeId,
    /// Next-hop processing server.
    pub to: NodeId,
    /// Nominal hop rate from the rate chain.
    pub target_rate_bps: Bps,
    /// Hop-scaled bytes behind the delivery schedule; never negative.
    pub deficit_bytes: f64,
    /// Apportioned price per byte carried on this hop.
    pub budget_per_byte: f64,
    /// Transport budget of this service hop, currency/s.
    pub hop_budget_per_sec: f64,
    pub assignment: Assignment,
    /// A multi-hop probe is still confirming; leave the flow alone.
    pub pending_confirm: bool,
}

/// Scheduling parameters extracted from the run config.
#[derive(Debug, Clone, Copy)]
pub struct SchedParams {
    pub epoch_secs: f64,
    pub deficit_clamp_multiple: f64,
    /// Ceiling on a public grant (claim plus boost) as a multiple of the
    /// nominal hop rate.
    pub public_boost_multiple: f64,
    pub rate_floor_bps: Bps,
    pub rho_per_byte: f64,
    pub mode: PlatformMode,
    pub max_path_hops: usize,
}

/// Bandwidth needed to get back on schedule within one epoch: the target
/// rate plus the deficit spread over the epoch, clamped to a multiple of
/// the target.
pub fn required_bandwidth_bps(flow: &Flow, params: &SchedParams) -> f64 {
    let target = flow.target_rate_bps as f64;
    let catch_up = flow.deficit_bytes.max(0.0) * 8.0 / params.epoch_secs;
    (target + catch_up).min(params.deficit_clamp_multiple * target)
}

/// Priority: budget per byte of processed data times the bandwidth required
/// to comply with the target rate.
pub fn compute_priority(flow: &Flow, params: &SchedParams) -> f64 {
    flow.budget_per_byte * required_bandwidth_bps(flow, params)
}

/// Finds and reserves the shortest dedicated path from `u` to `v` whose
/// every link still has `rate_bps` residual, up to `max_hops` links.
/// Breadth-first, deterministic id-order tie-break.
pub fn multi_hop_probe(
    net: &mut Network,
    ledger: &mut ClaimLedger,
    task: TaskId,
    u: NodeId,
    v: NodeId,
    rate_bps: Bps,
    max_hops: usize,
) -> Option<Vec<LinkId>> {
    if u == v || max_hops == 0 {
        return None;
    }
    let n = net.nodes.len();
    let mut parent: Vec<Option<(NodeId, LinkId)>> = vec![None; n];
    let mut dist = vec![usize::MAX; n];
    dist[u.0 as usize] = 0;
    let mut queue = VecDeque::new();
    queue.push_back(u);
    'bfs: while let Some(cur) = queue.pop_front() {
        if dist[cur.0 as usize] >= max_hops {
            continue;
        }
        for &lid in net.incident_links(cur) {
            if net.residual(ResourceRef::Link(lid)).unwrap_or(0) < rate_bps {
                continue;
            }
            let next = net.link(lid).other_end(cur);
            if dist[next.0 as usize] != usize::MAX {
                continue;
            }
            dist[next.0 as usize] = dist[cur.0 as usize] + 1;
            parent[next.0 as usize] = Some((cur, lid));
            if next == v {
                break 'bfs;
            }
            queue.push_back(next);
        }
    }
    if dist[v.0 as usize] == usize::MAX {
        return None;
    }
    let mut path = Vec::new();
    let mut cur = v;
    while cur != u {
        let (prev, lid) = parent[cur.0 as usize].unwrap();
        path.push(lid);
        cur = prev;
    }
    path.reverse();
    for &lid in &path {
        ledger
            .reserve(net, task, ResourceRef::Link(lid), rate_bps)
            .expect("BFS checked residuals");
    }
    Some(path)
}

/// The applied decision for one flow this epoch.
#[derive(Debug, Clone)]
pub struct PlanEntry {
    pub task: TaskId,
    pub service_hop: u16,
    pub to: NodeId,
    pub assignment: Assignment,
    pub required_bps: f64,
    pub priority: f64,
    /// Path reserved this epoch, streaming switches after the probe confirms.
    pub probe_launched: Option<(Vec<LinkId>, Bps)>,
}

/// One node's per-epoch allocation decisions, applied to the ledger.
#[derive(Debug, Default)]
pub struct AllocationPlan {
    pub entries: Vec<PlanEntry>,
}

fn priority_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// Re-plans every flow leaving `node`. Direct and public claims are
/// reclaimed and re-packed; standing multi-hop reservations persist until
/// the flow is upgraded to a direct link. CPU assignments are never touched.
pub fn reschedule_node(
    node: NodeId,
    flows: &mut [Flow],
    net: &mut Network,
    ledger: &mut ClaimLedger,
    params: &SchedParams,
) -> AllocationPlan {
    let mut plan = AllocationPlan::default();
    if flows.is_empty() {
        return plan;
    }

    // Reclaim everything re-plannable.
    for flow in flows.iter_mut() {
        if flow.pending_confirm {
            continue;
        }
        match &flow.assignment {
            Assignment::Direct { splits } => {
                for &(lid, amt) in splits {
                    ledger.release(net, flow.task, ResourceRef::Link(lid), amt).expect("ledger");
                }
                flow.assignment = Assignment::Unassigned;
            }
            Assignment::Public { rate_bps, .. } => {
                ledger
                    .release(net, flow.task, ResourceRef::Uplink(node), *rate_bps)
                    .expect("ledger");
                flow.assignment = Assignment::Unassigned;
            }
            Assignment::MultiHop { .. } | Assignment::Unassigned => {}
        }
    }

    let required: Vec<f64> = flows.iter().map(|f| required_bandwidth_bps(f, params)).collect();
    let priority: Vec<f64> = flows.iter().map(|f| compute_priority(f, params)).collect();

    // Group by next-hop server and pack direct links by priority.
    let mut groups: Vec<NodeId> = flows.iter().map(|f| f.to).collect();
    groups.sort_unstable();
    groups.dedup();
    let mut pool: Vec<usize> = Vec::new();

    for &v in &groups {
        let mut members: Vec<(usize, f64)> = flows
            .iter()
            .enumerate()
            .filter(|(_, f)| f.to == v && !f.pending_confirm)
            .map(|(i, _)| (i, priority[i]))
            .collect();
        members.sort_by(priority_order);

        let direct_links: Vec<LinkId> = if params.mode.allows_dedicated() {
            net.incident_links(node)
                .iter()
                .copied()
                .filter(|&l| net.link(l).connects(node, v))
                .collect()
        } else {
            Vec::new()
        };

        for (idx, _) in members {
            // A stable carrier above the nominal hop rate cannot raise the
            // delivery rate (the source emission schedule bounds it), so
            // dedicated assignments cap at the target; the deficit still
            // raises priority and the public share.
            let flow_want = flows[idx].target_rate_bps.min(required[idx].round() as Bps);
            let standing_multihop = matches!(flows[idx].assignment, Assignment::MultiHop { .. });
            let mut available: Bps = direct_links
                .iter()
                .map(|&l| net.residual(ResourceRef::Link(l)).unwrap_or(0))
                .sum();
            if standing_multihop {
                // Upgrade only when the direct links fully satisfy the flow.
                if available < flow_want {
                    continue;
                }
                available = flow_want;
            }
            let want = flow_want.min(available);
            if want < params.rate_floor_bps {
                if !standing_multihop {
                    pool.push(idx);
                }
                continue;
            }
            let mut splits = Vec::new();
            let mut left = want;
            for &lid in &direct_links {
                if left == 0 {
                    break;
                }
                let take = left.min(net.residual(ResourceRef::Link(lid)).unwrap_or(0));
                if take == 0 {
                    continue;
                }
                ledger.reserve(net, flows[idx].task, ResourceRef::Link(lid), take).expect("ledger");
                splits.push((lid, take));
                left -= take;
            }
            if standing_multihop {
                if let Assignment::MultiHop { path, rate_bps } = flows[idx].assignment.clone() {
                    for lid in path {
                        ledger
                            .release(net, flows[idx].task, ResourceRef::Link(lid), rate_bps)
                            .expect("ledger");
                    }
                }
            }
            flows[idx].assignment = Assignment::Direct { splits };
        }
    }

    // Standing multi-hop flows that stayed put: track the current need on
    // the same path when the links allow it.
    for (idx, flow) in flows.iter_mut().enumerate() {
        if flow.pending_confirm {
            continue;
        }
        if let Assignment::MultiHop { path, rate_bps } = flow.assignment.clone() {
            let want = flow
                .target_rate_bps
                .min(required[idx].round() as Bps)
                .max(params.rate_floor_bps);
            // A forwarding path may traverse the same link more than once.
            let mut multiplicity: std::collections::BTreeMap<LinkId, Bps> = Default::default();
            for &l in &path {
                *multiplicity.entry(l).or_default() += 1;
            }
            if want > rate_bps {
                let delta = want - rate_bps;
                let fits = multiplicity.iter().all(|(&l, &m)| {
                    net.residual(ResourceRef::Link(l)).unwrap_or(0) >= delta * m
                });
                if fits {
                    for (&l, &m) in &multiplicity {
                        ledger
                            .reserve(net, flow.task, ResourceRef::Link(l), delta * m)
                            .expect("ledger");
                    }
                    flow.assignment = Assignment::MultiHop { path, rate_bps: want };
                }
            } else if want < rate_bps {
                let delta = rate_bps - want;
                for (&l, &m) in &multiplicity {
                    ledger
                        .release(net, flow.task, ResourceRef::Link(l), delta * m)
                        .expect("ledger");
                }
                flow.assignment = Assignment::MultiHop { path, rate_bps: want };
            }
        }
    }

    // Pooled flows: multi-hop probe within budget, public share otherwise.
    pool.sort_by(|&a, &b| priority_order(&(a, priority[a]), &(b, priority[b])));
    let mut probes: Vec<(usize, Vec<LinkId>, Bps)> = Vec::new();
    if params.mode.allows_dedicated() {
        for &idx in &pool {
            let rate = flows[idx].target_rate_bps.min(required[idx].round() as Bps);
            if rate == 0 {
                continue;
            }
            let cost_per_hop = params.rho_per_byte * rate as f64 / 8.0;
            if cost_per_hop <= 0.0 {
                continue;
            }
            let max_k = (flows[idx].hop_budget_per_sec / cost_per_hop).floor() as usize;
            if max_k < 2 {
                continue;
            }
            let k = max_k.min(params.max_path_hops);
            if let Some(path) =
                multi_hop_probe(net, ledger, flows[idx].task, node, flows[idx].to, rate, k)
            {
                probes.push((idx, path, rate));
            }
        }
    }

    // Public assignment in two tiers. Tier 1: a reserved claim up to the
    // nominal hop rate (flows admitted on this uplink always fit; flows
    // displaced from dedicated take whatever reservation space is left).
    // Tier 2: the uplink's remaining physical capacity is granted as
    // opportunistic boost proportional to priority, capped at the required
    // bandwidth; boosts are not reservations and never block admissions.
    if params.mode.allows_public() {
        for &idx in &pool {
            let residual = net.residual(ResourceRef::Uplink(node)).unwrap_or(0);
            let claim = flows[idx]
                .target_rate_bps
                .min(required[idx].round() as Bps)
                .min(residual);
            let claim = if claim >= params.rate_floor_bps { claim } else { 0 };
            if claim > 0 {
                ledger
                    .reserve(net, flows[idx].task, ResourceRef::Uplink(node), claim)
                    .expect("claim within residual");
            }
            flows[idx].assignment = Assignment::Public { rate_bps: claim, boost_bps: 0 };
        }
        let mut spare = net.residual(ResourceRef::Uplink(node)).unwrap_or(0);
        let mut want: Vec<(usize, Bps, f64)> = pool
            .iter()
            .filter_map(|&idx| {
                let claim = flows[idx].assignment.claim_bps();
                let ceiling = (params.public_boost_multiple * flows[idx].target_rate_bps as f64)
                    .round() as Bps;
                let full = (required[idx].round() as Bps).min(ceiling);
                let missing = full.saturating_sub(claim);
                (missing >= params.rate_floor_bps).then_some((idx, missing, priority[idx].max(0.0)))
            })
            .collect();
        loop {
            let weight: f64 = want.iter().map(|&(_, _, p)| p).sum();
            if want.is_empty() || spare == 0 || weight <= 0.0 {
                break;
            }
            let mut granted_any = false;
            let mut i = 0;
            while i < want.len() {
                let (idx, missing, p) = want[i];
                let share = (spare as f64 * p / weight) as Bps;
                if share >= missing {
                    if let Assignment::Public { boost_bps, .. } = &mut flows[idx].assignment {
                        *boost_bps = missing;
                    }
                    spare -= missing;
                    want.swap_remove(i);
                    granted_any = true;
                } else {
                    i += 1;
                }
            }
            if !granted_any {
                for &(idx, _, p) in &want {
                    let share = (spare as f64 * p / weight).floor() as Bps;
                    if share >= params.rate_floor_bps {
                        if let Assignment::Public { boost_bps, .. } = &mut flows[idx].assignment {
                            *boost_bps = share;
                        }
                    }
                }
                break;
            }
        }
    }

    for (idx, flow) in flows.iter().enumerate() {
        let probe = probes.iter().find(|(i, _, _)| *i == idx);
        plan.entries.push(PlanEntry {
            task: flow.task,
            service_hop: flow.service_hop,
            to: flow.to,
            assignment: flow.assignment.clone(),
            required_bps: required[idx],
            priority: priority[idx],
            probe_launched: probe.map(|(_, path, rate)| (path.clone(), *rate)),
        });
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{mbps_to_bps, DedicatedLink, ServerNode, ServiceClass};
    use std::collections::BTreeSet;

    fn star_network(links: &[(u32, u32, f64)], n_nodes: u32, uplink_mbps: f64) -> Network {
        let nodes = (0..n_nodes)
            .map(|id| ServerNode {
                id: NodeId(id),
                cpu_capacity: 100_000_000,
                cpu_allocated: 0,
                hosted_services: BTreeSet::new(),
                uplink_bw: mbps_to_bps(uplink_mbps),
                uplink_allocated: 0,
                uplink_delay_ms: 20.0,
            })
            .collect();
        let links = links
            .iter()
            .enumerate()
            .map(|(i, &(a, b, bw))| DedicatedLink {
                id: LinkId(i as u32),
                a: NodeId(a),
                b: NodeId(b),
                bandwidth: mbps_to_bps(bw),
                allocated: 0,
                delay_ms: 2.0,
            })
            .collect();
        Network::from_parts(
            nodes,
            links,
            vec![ServiceClass {
                shrinkage: 1.0,
                cpu_factor: 1.0,
            }],
        )
    }

    fn params() -> SchedParams {
        SchedParams {
            epoch_secs: 1.0,
            deficit_clamp_multiple: 4.0,
            public_boost_multiple: 1.25,
            rate_floor_bps: 1000,
            rho_per_byte: 6e-9,
            mode: PlatformMode::Bimodal,
            max_path_hops: 8,
        }
    }

    fn flow(task: u32, from: u32, to: u32, target_mbps: f64, deficit: f64, bpb: f64) -> Flow {
        Flow {
            task: TaskId(task),
            service_hop: 1,
            from: NodeId(from),
            to: NodeId(to),
            target_rate_bps: mbps_to_bps(target_mbps),
            deficit_bytes: deficit,
            budget_per_byte: bpb,
            hop_budget_per_sec: 0.0,
            assignment: Assignment::Unassigned,
            pending_confirm: false,
        }
    }

    #[test]
    fn required_bandwidth_examples() {
        let p = params();
        let steady = flow(0, 0, 1, 1.0, 0.0, 1e-6);
        assert_eq!(required_bandwidth_bps(&steady, &p), 1e6);

        // One epoch's worth of target bytes behind -> exactly twice the target.
        let behind = flow(0, 0, 1, 1.0, 1e6 / 8.0, 1e-6);
        assert_eq!(required_bandwidth_bps(&behind, &p), 2e6);

        // Clamp at 4x.
        let swamped = flow(0, 0, 1, 1.0, 1e9, 1e-6);
        assert_eq!(required_bandwidth_bps(&swamped, &p), 4e6);
    }

    #[test]
    fn priority_factor_cancellation() {
        let p = params();
        // Equal budgets: ordering by required bandwidth alone.
        let a = flow(0, 0, 1, 1.0, 500.0, 1e-6);
        let b = flow(1, 0, 1, 1.0, 0.0, 1e-6);
        assert!(compute_priority(&a, &p) > compute_priority(&b, &p));
        // Equal requirements: ordering by budget alone.
        let c = flow(0, 0, 1, 1.0, 0.0, 2e-6);
        let d = flow(1, 0, 1, 1.0, 0.0, 1e-6);
        assert!(compute_priority(&c, &p) > compute_priority(&d, &p));
    }

    #[test]
    fn priority_sort_matches_recomputation() {
        use rand::{Rng, SeedableRng};
        let p = params();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let flows: Vec<Flow> = (0..50)
            .map(|i| {
                flow(
                    i,
                    0,
                    1,
                    rng.gen_range(0.1..2.0),
                    rng.gen_range(0.0..1e6),
                    rng.gen_range(1e-7..1e-5),
                )
            })
            .collect();
        let mut by_priority: Vec<usize> = (0..flows.len()).collect();
        by_priority.sort_by(|&a, &b| {
            compute_priority(&flows[b], &p)
                .partial_cmp(&compute_priority(&flows[a], &p))
                .unwrap()
        });
        // Oracle: recompute the products independently.
        let mut oracle: Vec<(usize, f64)> = flows
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let req = (f.target_rate_bps as f64 + f.deficit_bytes * 8.0).min(4.0 * f.target_rate_bps as f64);
                (i, f.budget_per_byte * req)
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let oracle_order: Vec<usize> = oracle.into_iter().map(|(i, _)| i).collect();
        assert_eq!(by_priority, oracle_order);
    }

    // The dynamic-scheduling illustration: three task segments compete at
    // one node for a single dedicated link that fits exactly one flow; the
    // top-priority flow takes it, the others spill to the public uplink.
    #[test]
    fn three_segments_one_dedicated_link() {
        let mut net = star_network(&[(0, 1, 1.0)], 2, 2.0);
        let mut ledger = ClaimLedger::new();
        let mut flows = vec![
            flow(0, 0, 1, 1.0, 0.0, 3e-6),
            flow(1, 0, 1, 1.0, 0.0, 2e-6),
            flow(2, 0, 1, 1.0, 0.0, 1e-6),
        ];
        let plan = reschedule_node(NodeId(0), &mut flows, &mut net, &mut ledger, &params());
        assert!(matches!(flows[0].assignment, Assignment::Direct { .. }));
        assert_eq!(flows[0].assignment.rate_bps(), mbps_to_bps(1.0));
        assert!(matches!(flows[1].assignment, Assignment::Public { .. }));
        assert!(matches!(flows[2].assignment, Assignment::Public { .. }));
        assert_eq!(plan.entries.len(), 3);
        ledger.audit_all(&net).unwrap();
    }

    #[test]
    fn single_flow_keeps_full_rate_on_ample_link() {
        let mut net = star_network(&[(0, 1, 10.0)], 2, 2.0);
        let mut ledger = ClaimLedger::new();
        let mut flows = vec![flow(0, 0, 1, 1.5, 0.0, 1e-6)];
        reschedule_node(NodeId(0), &mut flows, &mut net, &mut ledger, &params());
        assert_eq!(flows[0].assignment.rate_bps(), mbps_to_bps(1.5));
        assert!(matches!(flows[0].assignment, Assignment::Direct { .. }));
    }

    // Randomized capacities against an independent greedy oracle for the
    // direct-plus-public split (no multi-hop budget in play).
    #[test]
    fn randomized_plan_matches_greedy_oracle() {
        use rand::{Rng, SeedableRng};
        for seed in 0..30u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let link_bw = rng.gen_range(0.5..4.0);
            let uplink_bw = rng.gen_range(0.5..3.0);
            let mut net = star_network(&[(0, 1, link_bw)], 2, uplink_bw);
            let mut ledger = ClaimLedger::new();
            let mut flows: Vec<Flow> = (0..5)
                .map(|i| {
                    flow(
                        i,
                        0,
                        1,
                        rng.gen_range(0.2..1.5),
                        rng.gen_range(0.0..200_000.0),
                        rng.gen_range(1e-7..1e-5),
                    )
                })
                .collect();
            let p = params();
            let required: Vec<Bps> = flows
                .iter()
                .map(|f| f.target_rate_bps.min(required_bandwidth_bps(f, &p).round() as Bps))
                .collect();
            let mut order: Vec<usize> = (0..5).collect();
            order.sort_by(|&a, &b| {
                compute_priority(&flows[b], &p)
                    .partial_cmp(&compute_priority(&flows[a], &p))
                    .unwrap()
                    .then(a.cmp(&b))
            });

            reschedule_node(NodeId(0), &mut flows, &mut net, &mut ledger, &p);

            // Oracle: greedy fill of the link, then capped proportional share.
            let mut link_left = mbps_to_bps(link_bw);
            let mut expect_direct = vec![0u64; 5];
            let mut pooled = Vec::new();
            for &i in &order {
                let take = required[i].min(link_left);
                if take >= p.rate_floor_bps {
                    expect_direct[i] = take;
                    link_left -= take;
                } else {
                    pooled.push(i);
                }
            }
            // Oracle for the public claims: same priority order, each takes
            // min(nominal-capped requirement, remaining reservation space).
            let mut uplink_left = mbps_to_bps(uplink_bw);
            let mut expect_claim = vec![0u64; 5];
            for &i in &pooled {
                let take = required[i].min(uplink_left);
                if take >= p.rate_floor_bps {
                    expect_claim[i] = take;
                    uplink_left -= take;
                }
            }
            let mut granted_total = 0u64;
            for i in 0..5 {
                if expect_direct[i] > 0 {
                    assert_eq!(
                        flows[i].assignment.rate_bps(),
                        expect_direct[i],
                        "seed {seed} flow {i} direct"
                    );
                    assert!(matches!(flows[i].assignment, Assignment::Direct { .. }));
                } else {
                    assert!(
                        matches!(flows[i].assignment, Assignment::Public { .. }),
                        "seed {seed} flow {i} should be public"
                    );
                    assert_eq!(
                        flows[i].assignment.claim_bps(),
                        expect_claim[i],
                        "seed {seed} flow {i} claim"
                    );
                    granted_total += flows[i].assignment.rate_bps();
                }
            }
            // Plan feasibility: reservations and grants stay within capacity.
            assert!(net.allocated(ResourceRef::Link(LinkId(0))).unwrap() <= mbps_to_bps(link_bw));
            assert!(net.allocated(ResourceRef::Uplink(NodeId(0))).unwrap() <= mbps_to_bps(uplink_bw));
            assert!(granted_total <= mbps_to_bps(uplink_bw), "seed {seed} grants over capacity");
            ledger.audit_all(&net).unwrap();
        }
    }

    #[test]
    fn multi_hop_probe_finds_and_reserves_two_hop_path() {
        let mut net = star_network(&[(0, 2, 5.0), (2, 1, 5.0)], 3, 2.0);
        let mut ledger = ClaimLedger::new();
        let path = multi_hop_probe(
            &mut net,
            &mut ledger,
            TaskId(0),
            NodeId(0),
            NodeId(1),
            mbps_to_bps(1.0),
            2,
        )
        .unwrap();
        assert_eq!(path, vec![LinkId(0), LinkId(1)]);
        assert_eq!(net.allocated(ResourceRef::Link(LinkId(0))).unwrap(), mbps_to_bps(1.0));
        assert_eq!(net.allocated(ResourceRef::Link(LinkId(1))).unwrap(), mbps_to_bps(1.0));
    }

    #[test]
    fn multi_hop_probe_respects_hop_bound() {
        // 0-2-3-1 needs three hops.
        let mut net = star_network(&[(0, 2, 5.0), (2, 3, 5.0), (3, 1, 5.0)], 4, 2.0);
        let mut ledger = ClaimLedger::new();
        assert!(multi_hop_probe(
            &mut net,
            &mut ledger,
            TaskId(0),
            NodeId(0),
            NodeId(1),
            mbps_to_bps(1.0),
            2
        )
        .is_none());
        assert!(multi_hop_probe(
            &mut net,
            &mut ledger,
            TaskId(0),
            NodeId(0),
            NodeId(1),
            mbps_to_bps(1.0),
            3
        )
        .is_some());
    }

    // BFS path length never exceeds any feasible path found exhaustively.
    #[test]
    fn multi_hop_probe_matches_exhaustive_shortest() {
        use rand::{Rng, SeedableRng};
        for seed in 0..40u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(4..=8u32);
            let mut edges = Vec::new();
            for i in 1..n {
                edges.push((i, rng.gen_range(0..i), rng.gen_range(0.5..5.0)));
            }
            for _ in 0..rng.gen_range(0..4) {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(0..n);
                if a != b {
                    edges.push((a, b, rng.gen_range(0.5..5.0)));
                }
            }
            let mut net = star_network(&edges, n, 2.0);
            // Pre-load some links.
            for l in 0..net.links.len() {
                if rng.gen_bool(0.3) {
                    let cap = net.links[l].bandwidth;
                    net.links[l].allocated = cap / 2;
                }
            }
            let rate = mbps_to_bps(rng.gen_range(0.2..2.0));
            let max_hops = rng.gen_range(2..=4usize);
            let u = NodeId(0);
            let v = NodeId(n - 1);

            // Exhaustive simple-path search.
            fn dfs(
                net: &Network,
                cur: NodeId,
                v: NodeId,
                rate: u64,
                left: usize,
                seen: &mut Vec<bool>,
                best: &mut Option<usize>,
                depth: usize,
            ) {
                if cur == v {
                    *best = Some(best.map_or(depth, |b: usize| b.min(depth)));
                    return;
                }
                if left == 0 {
                    return;
                }
                for &lid in net.incident_links(cur) {
                    if net.residual(ResourceRef::Link(lid)).unwrap_or(0) < rate {
                        continue;
                    }
                    let next = net.link(lid).other_end(cur);
                    if seen[next.0 as usize] {
                        continue;
                    }
                    seen[next.0 as usize] = true;
                    dfs(net, next, v, rate, left - 1, seen, best, depth + 1);
                    seen[next.0 as usize] = false;
                }
            }
            let mut seen = vec![false; n as usize];
            seen[0] = true;
            let mut best = None;
            dfs(&net, u, v, rate, max_hops, &mut seen, &mut best, 0);

            let mut ledger = ClaimLedger::new();
            let found = multi_hop_probe(&mut net, &mut ledger, TaskId(0), u, v, rate, max_hops);
            match (found, best) {
                (Some(path), Some(shortest)) => {
                    assert!(path.len() <= shortest, "seed {seed}: {} > {}", path.len(), shortest)
                }
                (None, None) => {}
                (got, want) => panic!("seed {seed}: probe {got:?} vs oracle {want:?}"),
            }
        }
    }

    #[test]
    fn dedicated_only_mode_starves_pool() {
        let mut net = star_network(&[(0, 1, 1.0)], 2, 2.0);
        let mut ledger = ClaimLedger::new();
        let mut flows = vec![flow(0, 0, 1, 1.0, 0.0, 2e-6), flow(1, 0, 1, 1.0, 0.0, 1e-6)];
        let p = SchedParams {
            mode: PlatformMode::DedicatedOnly,
            ..params()
        };
        reschedule_node(NodeId(0), &mut flows, &mut net, &mut ledger, &p);
        assert!(matches!(flows[0].assignment, Assignment::Direct { .. }));
        assert_eq!(flows[1].assignment, Assignment::Unassigned);
        assert_eq!(net.allocated(ResourceRef::Uplink(NodeId(0))).unwrap(), 0);
    }
}
