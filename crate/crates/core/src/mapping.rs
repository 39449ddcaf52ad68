//! Distributed chain mapping: partial maps grow node-to-node from the
//! delivery portal over the reversed service chain and become feasible when
//! they reach the data-source node with every component placed.
//!
//! Extensions place zero or more components on the current node, then fan
//! out over dedicated links (budget permitting, which also realizes
//! multi-hop forwarding) and over the public uplinks of directory-known
//! providers of the next component. Each node prunes with the LeastCostMap
//! rule: it never extends a map costing more than the best it has seen for
//! the same prefix length.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::rc::Rc;

use thiserror::Error;

use crate::config::PlatformMode;
use crate::topology::{
    cpu_demand, Bps, CpuMicros, LinkId, Network, NodeId, ResourceRef,
};
use crate::workload::{BudgetVector, RateChain, TaskId, TaskSpec};

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("instance too large for exhaustive search: {0}")]
    InstanceTooLarge(String),
}

/// Cost of a (partial) map: the load-balance factor dominates, hop kinds
/// break near-ties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostTriple {
    /// Mean post-placement load factor over the map's servers, in [0, 1].
    pub load_balance: f64,
    /// Service hops carried over dedicated links (direct or forwarding).
    pub dedicated_hops: u32,
    /// Service hops carried over the public network.
    pub public_hops: u32,
}

impl CostTriple {
    pub fn zero() -> CostTriple {
        CostTriple {
            load_balance: 0.0,
            dedicated_hops: 0,
            public_hops: 0,
        }
    }
}

/// Orders two map costs; `Less` means `a` is the better map.
///
/// Load-balance factors differing by more than the tie threshold decide
/// outright; otherwise more dedicated hops win, then fewer public hops.
pub fn compare_maps(a: &CostTriple, b: &CostTriple, tie_threshold: f64) -> Ordering {
    if (a.load_balance - b.load_balance).abs() > tie_threshold {
        return a.load_balance.partial_cmp(&b.load_balance).unwrap_or(Ordering::Equal);
    }
    match b.dedicated_hops.cmp(&a.dedicated_hops) {
        Ordering::Equal => a.public_hops.cmp(&b.public_hops),
        other => other,
    }
}

/// Per-node, per-task LeastCostMap memory: the lowest cost observed for
/// each prefix length. Entries only ever improve.
#[derive(Debug, Clone)]
pub struct MapperState {
    best_by_prefix: Vec<Option<CostTriple>>,
}

impl MapperState {
    pub fn new(chain_len: usize) -> MapperState {
        MapperState {
            best_by_prefix: vec![None; chain_len + 1],
        }
    }

    pub fn best(&self, prefix: u16) -> Option<CostTriple> {
        self.best_by_prefix[prefix as usize]
    }
}

/// A node never extends a map that does not improve on the best it has
/// seen for the same prefix length (absent record admits; admission
/// updates the record).
///
/// Costs compare under the full selection order, and equal-cost arrivals
/// are rejected: partial maps reaching the same node at the same prefix
/// with identical cost are interchangeable route permutations, and
/// extending every one of them floods the network without adding any
/// placement the first representative cannot reach.
pub fn least_cost_admit(state: &mut MapperState, msg: &PartialMap) -> bool {
    let best = &mut state.best_by_prefix[msg.prefix as usize];
    match best {
        None => {
            *best = Some(msg.cost);
            true
        }
        Some(cur) => {
            if selection_order(&msg.cost, cur) == Ordering::Less {
                *cur = msg.cost;
                true
            } else {
                false
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HopVia {
    Link(LinkId),
    /// Overlay hop; claims the data sender's uplink.
    Public,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HopKind {
    DirectDedicated,
    ForwardingDedicated,
    Public,
}

#[derive(Debug, Clone, Copy)]
struct Placement {
    comp: u16,
    node: NodeId,
    demand: CpuMicros,
}

/// One physical hop in data direction: `from` sends to `to`.
#[derive(Debug, Clone, Copy)]
struct HopRec {
    service_hop: u16,
    from: NodeId,
    to: NodeId,
    via: HopVia,
    rate_bps: Bps,
}

// Messages share their prefix history, so extension is O(1) and cloning a
// map does not copy the whole walk.
type PmList<T> = Option<Rc<PmNode<T>>>;

#[derive(Debug)]
struct PmNode<T> {
    item: T,
    prev: PmList<T>,
}

fn pm_push<T>(list: &PmList<T>, item: T) -> PmList<T> {
    Some(Rc::new(PmNode {
        item,
        prev: list.clone(),
    }))
}

fn pm_collect<T: Copy>(list: &PmList<T>) -> Vec<T> {
    let mut out = Vec::new();
    let mut cur = list;
    while let Some(node) = cur {
        out.push(node.item);
        cur = &node.prev;
    }
    out.reverse();
    out
}

/// A prefix assignment of the reversed service chain to servers, together
/// with the physical hops walked so far and the running cost.
#[derive(Debug, Clone)]
pub struct PartialMap {
    pub task: TaskId,
    /// Components mapped so far, counted from the delivery end.
    pub prefix: u16,
    pub cost: CostTriple,
    /// Dedicated transmission spend on the in-progress service hop, currency/s.
    pub cur_hop_spend: f64,
    placements: PmList<Placement>,
    hops: PmList<HopRec>,
}

impl PartialMap {
    /// The empty map injected at the delivery portal.
    pub fn initial(task: TaskId) -> PartialMap {
        PartialMap {
            task,
            prefix: 0,
            cost: CostTriple::zero(),
            cur_hop_spend: 0.0,
            placements: None,
            hops: None,
        }
    }

    fn last_hop(&self) -> Option<HopRec> {
        self.hops.as_ref().map(|n| n.item)
    }

    /// Carrier and data sender of the most recent hop; the engine derives
    /// message travel delays from it.
    pub fn last_hop_info(&self) -> Option<(HopVia, NodeId)> {
        self.last_hop().map(|h| (h.via, h.from))
    }

    fn cpu_claim_at(&self, node: NodeId) -> CpuMicros {
        let mut total = 0;
        let mut cur = &self.placements;
        while let Some(p) = cur {
            if p.item.node == node {
                total += p.item.demand;
            }
            cur = &p.prev;
        }
        total
    }

    fn link_claim(&self, link: LinkId) -> Bps {
        let mut total = 0;
        let mut cur = &self.hops;
        while let Some(h) = cur {
            if h.item.via == HopVia::Link(link) {
                total += h.item.rate_bps;
            }
            cur = &h.prev;
        }
        total
    }

    fn uplink_claim(&self, node: NodeId) -> Bps {
        let mut total = 0;
        let mut cur = &self.hops;
        while let Some(h) = cur {
            if h.item.via == HopVia::Public && h.item.from == node {
                total += h.item.rate_bps;
            }
            cur = &h.prev;
        }
        total
    }

    fn with_placement(&self, comp: u16, node: NodeId, demand: CpuMicros, net: &Network) -> PartialMap {
        let mut next = self.clone();
        next.placements = pm_push(&self.placements, Placement { comp, node, demand });
        next.prefix += 1;
        next.cost.load_balance = load_balance_of(&next.placements, net);
        next
    }

    fn with_hop(&self, hop: HopRec, new_service_hop: bool, spend_after: f64) -> PartialMap {
        let mut next = self.clone();
        if new_service_hop {
            match hop.via {
                HopVia::Public => next.cost.public_hops += 1,
                HopVia::Link(_) => next.cost.dedicated_hops += 1,
            }
        }
        next.cur_hop_spend = spend_after;
        next.hops = pm_push(&self.hops, hop);
        next
    }

    /// Converts a complete walk into its data-order realization.
    pub fn materialize(&self, task: &TaskSpec) -> FeasibleMap {
        let mut placements: Vec<(u16, NodeId)> =
            pm_collect(&self.placements).iter().map(|p| (p.comp, p.node)).collect();
        placements.sort_by_key(|&(c, _)| c);

        // Hops were recorded walking delivery -> source; data order is the
        // reverse, and each service hop's chain reverses with it.
        let walk = pm_collect(&self.hops);
        let mut service_hops: Vec<ServiceHopRoute> = Vec::new();
        for rec in walk.into_iter().rev() {
            let phys = PhysHop {
                from: rec.from,
                to: rec.to,
                via: rec.via,
            };
            match service_hops.last_mut() {
                Some(route) if route.hop == rec.service_hop => route.path.push(phys),
                _ => service_hops.push(ServiceHopRoute {
                    hop: rec.service_hop,
                    rate_bps: rec.rate_bps,
                    kind: HopKind::Public,
                    path: vec![phys],
                }),
            }
        }
        for route in &mut service_hops {
            route.kind = match (route.path[0].via, route.path.len()) {
                (HopVia::Public, _) => HopKind::Public,
                (HopVia::Link(_), 1) => HopKind::DirectDedicated,
                (HopVia::Link(_), _) => HopKind::ForwardingDedicated,
            };
        }
        FeasibleMap {
            task: self.task,
            source: task.source_node,
            delivery: task.delivery_node,
            cost: self.cost,
            placements,
            service_hops,
        }
    }
}

fn load_balance_of(placements: &PmList<Placement>, net: &Network) -> f64 {
    let all = pm_collect(placements);
    if all.is_empty() {
        return 0.0;
    }
    let mut nodes: Vec<NodeId> = all.iter().map(|p| p.node).collect();
    nodes.sort_unstable();
    nodes.dedup();
    let mut sum = 0.0;
    for &node in &nodes {
        let demand: CpuMicros = all.iter().filter(|p| p.node == node).map(|p| p.demand).sum();
        let server = net.node(node);
        let cap = server.cpu_capacity.max(1) as f64;
        sum += (server.cpu_allocated + demand) as f64 / cap;
    }
    sum / nodes.len() as f64
}

/// Load-balance and hop tally of a partial map against the live network.
pub fn map_cost(map: &PartialMap, net: &Network) -> CostTriple {
    CostTriple {
        load_balance: load_balance_of(&map.placements, net),
        dedicated_hops: map.cost.dedicated_hops,
        public_hops: map.cost.public_hops,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhysHop {
    pub from: NodeId,
    pub to: NodeId,
    pub via: HopVia,
}

/// One service hop (the stream segment between consecutive processing
/// sites) and the physical route realizing it.
#[derive(Debug, Clone)]
pub struct ServiceHopRoute {
    /// Service hop index in data order: 0 leaves the source, chain_len
    /// enters the delivery node.
    pub hop: u16,
    pub rate_bps: Bps,
    pub kind: HopKind,
    pub path: Vec<PhysHop>,
}

/// A complete assignment of components to servers and service hops to
/// physical routes. Degenerate hops between co-located components carry no
/// route and are absent.
#[derive(Debug, Clone)]
pub struct FeasibleMap {
    pub task: TaskId,
    pub source: NodeId,
    pub delivery: NodeId,
    pub cost: CostTriple,
    /// (component index, hosting node), ascending component.
    pub placements: Vec<(u16, NodeId)>,
    pub service_hops: Vec<ServiceHopRoute>,
}

impl FeasibleMap {
    /// Canonical encoding used to compare enumerations as sets.
    pub fn canonical_key(&self) -> String {
        let mut key = String::new();
        for (c, n) in &self.placements {
            key.push_str(&format!("p{}@{};", c, n.0));
        }
        for route in &self.service_hops {
            key.push_str(&format!("h{}:", route.hop));
            for p in &route.path {
                match p.via {
                    HopVia::Link(l) => key.push_str(&format!("{}>{}#{},", p.from.0, p.to.0, l.0)),
                    HopVia::Public => key.push_str(&format!("{}>{}#pub,", p.from.0, p.to.0)),
                }
            }
            key.push(';');
        }
        key
    }

    pub fn node_of(&self, comp: u16) -> NodeId {
        self.placements[comp as usize].1
    }
}

/// Everything ProcessMap needs about one task's mapping problem.
pub struct MapContext<'a> {
    pub network: &'a Network,
    pub task: &'a TaskSpec,
    pub chain: &'a RateChain,
    pub budgets: &'a BudgetVector,
    pub rho_per_byte: f64,
    pub mode: PlatformMode,
    pub cpu_demand_micros: Vec<CpuMicros>,
}

impl<'a> MapContext<'a> {
    pub fn new(
        network: &'a Network,
        task: &'a TaskSpec,
        chain: &'a RateChain,
        budgets: &'a BudgetVector,
        rho_per_byte: f64,
        mode: PlatformMode,
    ) -> MapContext<'a> {
        let cpu_demand_micros = task
            .cpu_factors
            .iter()
            .zip(&chain.input_mbps)
            .map(|(c, r)| cpu_demand(*c, *r))
            .collect();
        MapContext {
            network,
            task,
            chain,
            budgets,
            rho_per_byte,
            mode,
            cpu_demand_micros,
        }
    }

    fn hop_cost(&self, rate_bps: Bps) -> f64 {
        self.rho_per_byte * rate_bps as f64 / 8.0
    }
}

#[derive(Debug, Default)]
pub struct ProcessOutcome {
    pub feasible: Vec<FeasibleMap>,
    pub emissions: Vec<(NodeId, PartialMap)>,
}

/// Handles one map message at node `u` (Algorithm "ProcessMap").
///
/// Terminal: at the data-source node with everything placed the message is
/// feasible. Otherwise extend x = 0.. components onto `u` while hosting and
/// CPU permit, and emit every extension over dedicated links within the
/// hop budget and, for x > 0, over the public uplinks of providers of the
/// next component. Capacity checks account for the map's own prior claims
/// so an emitted feasible map is independently satisfiable.
pub fn process_map(u: NodeId, msg: &PartialMap, ctx: &MapContext) -> ProcessOutcome {
    let n = ctx.task.chain_len() as u16;
    let mut out = ProcessOutcome::default();
    if u == ctx.task.source_node && msg.prefix == n {
        out.feasible.push(msg.materialize(ctx.task));
        return out;
    }

    // A public hop lands directly on the next processing site, so a map
    // that arrived over the public network cannot be forwarded unchanged.
    let arrived_public = matches!(msg.last_hop(), Some(h) if h.via == HopVia::Public);
    let remaining = n - msg.prefix;
    let mut cur = msg.clone();

    // Bootstrap at the portal: the virgin map may be seeded directly to
    // directory-known providers of the last component over their uplinks.
    // Without this an isolated portal could never start a mapping.
    if msg.prefix == 0 && msg.last_hop().is_none() && ctx.mode.allows_public() {
        let rate = ctx.chain.hop_rate_bps[n as usize];
        let last_comp = (n - 1) as usize;
        for &v in ctx.network.service_providers(ctx.task.services[last_comp]) {
            if v == u {
                continue;
            }
            let residual = ctx.network.residual(ResourceRef::Uplink(v)).unwrap_or(0);
            if rate <= residual {
                let hop = HopRec {
                    service_hop: n,
                    from: v,
                    to: u,
                    via: HopVia::Public,
                    rate_bps: rate,
                };
                out.emissions.push((v, msg.with_hop(hop, true, 0.0)));
            }
        }
    }

    for x in 0..=remaining {
        if x > 0 {
            let comp = (n - msg.prefix - x) as usize;
            let svc = ctx.task.services[comp];
            if !ctx.network.hosts(u, svc) {
                break;
            }
            let demand = ctx.cpu_demand_micros[comp];
            let residual = ctx.network.residual(ResourceRef::NodeCpu(u)).unwrap_or(0);
            if cur.cpu_claim_at(u) + demand > residual {
                break;
            }
            cur = cur.with_placement(comp as u16, u, demand, ctx.network);
        }
        let q = msg.prefix + x;
        if u == ctx.task.source_node && q == n {
            if x > 0 {
                out.feasible.push(cur.materialize(ctx.task));
            }
            continue;
        }
        let h = (n - q) as usize;
        let rate = ctx.chain.hop_rate_bps[h];

        if ctx.mode.allows_dedicated() && !(x == 0 && arrived_public) {
            let hop_cost = ctx.hop_cost(rate);
            let spend = if x == 0 { msg.cur_hop_spend } else { 0.0 };
            if spend + hop_cost <= ctx.budgets.transport[h] + 1e-12 {
                let new_service_hop = x > 0 || msg.last_hop().is_none();
                for &lid in ctx.network.incident_links(u) {
                    let residual = ctx.network.residual(ResourceRef::Link(lid)).unwrap_or(0);
                    if cur.link_claim(lid) + rate <= residual {
                        let v = ctx.network.link(lid).other_end(u);
                        let hop = HopRec {
                            service_hop: h as u16,
                            from: v,
                            to: u,
                            via: HopVia::Link(lid),
                            rate_bps: rate,
                        };
                        out.emissions.push((v, cur.with_hop(hop, new_service_hop, spend + hop_cost)));
                    }
                }
            }
        }

        if ctx.mode.allows_public() && x > 0 {
            let source_only = [ctx.task.source_node];
            let targets: &[NodeId] = if q == n {
                &source_only
            } else {
                let next_comp = (n - q - 1) as usize;
                ctx.network.service_providers(ctx.task.services[next_comp])
            };
            for &v in targets {
                if v == u {
                    continue;
                }
                let residual = ctx.network.residual(ResourceRef::Uplink(v)).unwrap_or(0);
                if cur.uplink_claim(v) + rate <= residual {
                    let hop = HopRec {
                        service_hop: h as u16,
                        from: v,
                        to: u,
                        via: HopVia::Public,
                        rate_bps: rate,
                    };
                    out.emissions.push((v, cur.with_hop(hop, true, 0.0)));
                }
            }
        }
    }
    out
}

/// Total-order refinement of the cost comparison used for admission
/// pruning and retry ordering: exact load balance first, then more
/// dedicated hops, then fewer public hops. The pairwise near-tie threshold
/// of [`compare_maps`] is not transitive, so ordered contexts use this key.
pub fn selection_order(a: &CostTriple, b: &CostTriple) -> Ordering {
    a.load_balance
        .total_cmp(&b.load_balance)
        .then(b.dedicated_hops.cmp(&a.dedicated_hops))
        .then(a.public_hops.cmp(&b.public_hops))
}

/// Picks the best map: within the near-tie band above the minimum load
/// balance, more dedicated hops win, then fewer public hops, then the
/// lower load balance, then arrival order. The rest come back in
/// ascending [`selection_order`] for rollback-driven retries.
pub fn select_best(
    feasible: Vec<FeasibleMap>,
    tie_threshold: f64,
) -> Option<(FeasibleMap, Vec<FeasibleMap>)> {
    if feasible.is_empty() {
        return None;
    }
    let min_lb = feasible
        .iter()
        .map(|m| m.cost.load_balance)
        .fold(f64::INFINITY, f64::min);
    let best_idx = feasible
        .iter()
        .enumerate()
        .filter(|(_, m)| m.cost.load_balance <= min_lb + tie_threshold)
        .min_by(|(ia, a), (ib, b)| {
            b.cost
                .dedicated_hops
                .cmp(&a.cost.dedicated_hops)
                .then(a.cost.public_hops.cmp(&b.cost.public_hops))
                .then(a.cost.load_balance.total_cmp(&b.cost.load_balance))
                .then(ia.cmp(ib))
        })
        .map(|(i, _)| i)
        .unwrap();
    let mut best = None;
    let mut rest: Vec<(usize, FeasibleMap)> = Vec::with_capacity(feasible.len() - 1);
    for (i, m) in feasible.into_iter().enumerate() {
        if i == best_idx {
            best = Some(m);
        } else {
            rest.push((i, m));
        }
    }
    rest.sort_by(|(ia, a), (ib, b)| selection_order(&a.cost, &b.cost).then(ia.cmp(ib)));
    Some((best.unwrap(), rest.into_iter().map(|(_, m)| m).collect()))
}

/// Summary of a synchronous mapping session.
#[derive(Debug)]
pub struct MapRun {
    pub feasible: Vec<FeasibleMap>,
    pub messages: u64,
    pub capped: bool,
}

/// Drives the message cascade to quiescence over a frozen network. Used by
/// tests and the oracle comparisons; the event engine drives the same
/// `process_map` with timed messages instead.
pub fn enumerate_feasible_distributed(
    ctx: &MapContext,
    lcm_enabled: bool,
    message_cap: u64,
    mut trace: Option<&mut Vec<String>>,
) -> MapRun {
    let n_nodes = ctx.network.nodes.len();
    let chain_len = ctx.task.chain_len();
    let mut states: Vec<MapperState> = (0..n_nodes).map(|_| MapperState::new(chain_len)).collect();
    let mut queue: VecDeque<(NodeId, PartialMap)> = VecDeque::new();
    queue.push_back((ctx.task.delivery_node, PartialMap::initial(ctx.task.id)));
    let mut feasible = Vec::new();
    let mut messages = 0u64;
    let mut capped = false;

    while let Some((dest, msg)) = queue.pop_front() {
        let admitted = !lcm_enabled || least_cost_admit(&mut states[dest.0 as usize], &msg);
        if let Some(t) = trace.as_deref_mut() {
            t.push(format!(
                "recv node={} prefix={} lb={:.6} ded={} pub={} admit={}",
                dest.0, msg.prefix, msg.cost.load_balance, msg.cost.dedicated_hops,
                msg.cost.public_hops, admitted
            ));
        }
        if !admitted {
            continue;
        }
        let outcome = process_map(dest, &msg, ctx);
        feasible.extend(outcome.feasible);
        for (v, m) in outcome.emissions {
            if messages >= message_cap {
                capped = true;
                break;
            }
            messages += 1;
            queue.push_back((v, m));
        }
    }
    MapRun {
        feasible,
        messages,
        capped,
    }
}

/// Exhaustive enumeration of every placement/route assignment satisfying
/// the capacity, bandwidth, budget, and public-hop rules. Test oracle for
/// the distributed algorithm; bounded to small instances.
pub fn enumerate_feasible_bruteforce(ctx: &MapContext) -> Result<Vec<FeasibleMap>, MappingError> {
    if ctx.network.nodes.len() > 8 {
        return Err(MappingError::InstanceTooLarge(format!(
            "{} nodes > 8",
            ctx.network.nodes.len()
        )));
    }
    if ctx.task.chain_len() > 4 {
        return Err(MappingError::InstanceTooLarge(format!(
            "{} components > 4",
            ctx.task.chain_len()
        )));
    }
    let mut found = Vec::new();
    let walk = Walk {
        at: ctx.task.delivery_node,
        prefix: 0,
        placements: Vec::new(),
        hops: Vec::new(),
        cur_hop_spend: 0.0,
        arrived_public: false,
        dedicated_hops: 0,
        public_hops: 0,
    };
    explore(ctx, &walk, &mut found);
    Ok(found)
}

#[derive(Clone)]
struct Walk {
    at: NodeId,
    prefix: u16,
    placements: Vec<Placement>,
    hops: Vec<HopRec>,
    cur_hop_spend: f64,
    arrived_public: bool,
    dedicated_hops: u32,
    public_hops: u32,
}

impl Walk {
    fn cpu_at(&self, node: NodeId) -> CpuMicros {
        self.placements.iter().filter(|p| p.node == node).map(|p| p.demand).sum()
    }

    fn on_link(&self, link: LinkId) -> Bps {
        self.hops
            .iter()
            .filter(|h| h.via == HopVia::Link(link))
            .map(|h| h.rate_bps)
            .sum()
    }

    fn on_uplink(&self, node: NodeId) -> Bps {
        self.hops
            .iter()
            .filter(|h| h.via == HopVia::Public && h.from == node)
            .map(|h| h.rate_bps)
            .sum()
    }

    fn emit(&self, ctx: &MapContext) -> FeasibleMap {
        // Rebuild through the message-side materializer to share the output
        // shape; cost is recomputed from the walk's own tallies.
        let mut pm = PartialMap::initial(ctx.task.id);
        for p in &self.placements {
            pm.placements = pm_push(&pm.placements, *p);
        }
        for h in &self.hops {
            pm.hops = pm_push(&pm.hops, *h);
        }
        pm.prefix = self.prefix;
        pm.cost = CostTriple {
            load_balance: load_balance_of(&pm.placements, ctx.network),
            dedicated_hops: self.dedicated_hops,
            public_hops: self.public_hops,
        };
        pm.materialize(ctx.task)
    }
}

fn explore(ctx: &MapContext, walk: &Walk, found: &mut Vec<FeasibleMap>) {
    let n = ctx.task.chain_len() as u16;
    let u = walk.at;
    if u == ctx.task.source_node && walk.prefix == n {
        found.push(walk.emit(ctx));
        return;
    }
    if walk.prefix == 0 && walk.hops.is_empty() && ctx.mode.allows_public() {
        let rate = ctx.chain.hop_rate_bps[n as usize];
        let last_comp = (n - 1) as usize;
        for &v in ctx.network.service_providers(ctx.task.services[last_comp]) {
            if v == u {
                continue;
            }
            let residual = ctx.network.residual(ResourceRef::Uplink(v)).unwrap_or(0);
            if rate <= residual {
                let mut next = walk.clone();
                next.at = v;
                next.arrived_public = true;
                next.cur_hop_spend = 0.0;
                next.public_hops += 1;
                next.hops.push(HopRec {
                    service_hop: n,
                    from: v,
                    to: u,
                    via: HopVia::Public,
                    rate_bps: rate,
                });
                explore(ctx, &next, found);
            }
        }
    }
    let remaining = n - walk.prefix;
    let mut cur = walk.clone();
    for x in 0..=remaining {
        if x > 0 {
            let comp = (n - walk.prefix - x) as usize;
            if !ctx.network.hosts(u, ctx.task.services[comp]) {
                break;
            }
            let demand = ctx.cpu_demand_micros[comp];
            let residual = ctx.network.residual(ResourceRef::NodeCpu(u)).unwrap_or(0);
            if cur.cpu_at(u) + demand > residual {
                break;
            }
            cur.placements.push(Placement {
                comp: comp as u16,
                node: u,
                demand,
            });
            cur.prefix += 1;
        }
        let q = walk.prefix + x;
        if u == ctx.task.source_node && q == n {
            if x > 0 {
                found.push(cur.emit(ctx));
            }
            continue;
        }
        let h = (n - q) as usize;
        let rate = ctx.chain.hop_rate_bps[h];

        if ctx.mode.allows_dedicated() && !(x == 0 && walk.arrived_public) {
            let hop_cost = ctx.hop_cost(rate);
            let spend = if x == 0 { walk.cur_hop_spend } else { 0.0 };
            if spend + hop_cost <= ctx.budgets.transport[h] + 1e-12 {
                let new_service_hop = x > 0 || walk.hops.is_empty();
                for &lid in ctx.network.incident_links(u) {
                    let residual = ctx.network.residual(ResourceRef::Link(lid)).unwrap_or(0);
                    if cur.on_link(lid) + rate <= residual {
                        let v = ctx.network.link(lid).other_end(u);
                        let mut next = cur.clone();
                        next.at = v;
                        next.arrived_public = false;
                        next.cur_hop_spend = spend + hop_cost;
                        if new_service_hop {
                            next.dedicated_hops += 1;
                        }
                        next.hops.push(HopRec {
                            service_hop: h as u16,
                            from: v,
                            to: u,
                            via: HopVia::Link(lid),
                            rate_bps: rate,
                        });
                        explore(ctx, &next, found);
                    }
                }
            }
        }

        if ctx.mode.allows_public() && x > 0 {
            let source_only = [ctx.task.source_node];
            let targets: &[NodeId] = if q == n {
                &source_only
            } else {
                let next_comp = (n - q - 1) as usize;
                ctx.network.service_providers(ctx.task.services[next_comp])
            };
            for &v in targets {
                if v == u {
                    continue;
                }
                let residual = ctx.network.residual(ResourceRef::Uplink(v)).unwrap_or(0);
                if cur.on_uplink(v) + rate <= residual {
                    let mut next = cur.clone();
                    next.at = v;
                    next.arrived_public = true;
                    next.cur_hop_spend = 0.0;
                    next.public_hops += 1;
                    next.hops.push(HopRec {
                        service_hop: h as u16,
                        from: v,
                        to: u,
                        via: HopVia::Public,
                        rate_bps: rate,
                    });
                    explore(ctx, &next, found);
                }
            }
        }
    }
}

/// Re-checks a feasible map against a network snapshot: placements hosted,
/// cumulative claims within residuals, budgets respected. Soundness oracle.
pub fn map_satisfies(map: &FeasibleMap, ctx: &MapContext) -> bool {
    use std::collections::BTreeMap;
    if map.placements.len() != ctx.task.chain_len() {
        return false;
    }
    let mut cpu: BTreeMap<NodeId, CpuMicros> = BTreeMap::new();
    for &(comp, node) in &map.placements {
        if !ctx.network.hosts(node, ctx.task.services[comp as usize]) {
            return false;
        }
        *cpu.entry(node).or_default() += ctx.cpu_demand_micros[comp as usize];
    }
    for (&node, &demand) in &cpu {
        if demand > ctx.network.residual(ResourceRef::NodeCpu(node)).unwrap_or(0) {
            return false;
        }
    }
    let mut links: BTreeMap<LinkId, Bps> = BTreeMap::new();
    let mut uplinks: BTreeMap<NodeId, Bps> = BTreeMap::new();
    for route in &map.service_hops {
        match route.kind {
            HopKind::Public => {
                if route.path.len() != 1 {
                    return false;
                }
                *uplinks.entry(route.path[0].from).or_default() += route.rate_bps;
            }
            _ => {
                let spend = ctx.hop_cost(route.rate_bps) * route.path.len() as f64;
                if spend > ctx.budgets.transport[route.hop as usize] + 1e-9 {
                    return false;
                }
                for p in &route.path {
                    match p.via {
                        HopVia::Link(l) => *links.entry(l).or_default() += route.rate_bps,
                        HopVia::Public => return false,
                    }
                }
            }
        }
    }
    for (&l, &need) in &links {
        if need > ctx.network.residual(ResourceRef::Link(l)).unwrap_or(0) {
            return false;
        }
    }
    for (&node, &need) in &uplinks {
        if need > ctx.network.residual(ResourceRef::Uplink(node)).unwrap_or(0) {
            return false;
        }
    }
    true
}
