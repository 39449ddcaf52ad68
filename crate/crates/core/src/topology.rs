//! Bi-modal platform topology: a dedicated-link graph grown by preferential
//! attachment, per-node public uplinks, service hosting, and the capacity
//! ledgers every other module allocates against.
//!
//! Bandwidth is tracked in integer bits per second and CPU in integer
//! micro-units so that reserve/release round-trips restore residuals exactly.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Bandwidth ledger unit: bits per second.
pub type Bps = u64;
/// CPU ledger unit: micro processing units (1e-6 of one Mbps-of-input worth of work).
pub type CpuMicros = u64;

pub fn mbps_to_bps(mbps: f64) -> Bps {
    (mbps * 1e6).round() as Bps
}

pub fn bps_to_mbps(bps: Bps) -> f64 {
    bps as f64 / 1e6
}

/// CPU demand of a component with usage factor `c` fed at `rate_mbps`.
pub fn cpu_demand(cpu_factor: f64, rate_mbps: f64) -> CpuMicros {
    (cpu_factor * rate_mbps * 1e6).round() as CpuMicros
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ServiceId(pub u16);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("unknown resource {0:?}")]
    UnknownResource(ResourceRef),
    #[error("insufficient residual on {0:?}: need {1}, have {2}")]
    InsufficientResidual(ResourceRef, u64, u64),
    #[error("release of {1} exceeds allocation {2} on {0:?}")]
    ReleaseUnderflow(ResourceRef, u64, u64),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Intrinsic per-service-type factors. Tasks copy these into their specs so
/// a serialized trace is self-contained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceClass {
    /// Output rate / input rate.
    pub shrinkage: f64,
    /// CPU units consumed per Mbps of input.
    pub cpu_factor: f64,
}

#[derive(Debug, Clone)]
pub struct ServerNode {
    pub id: NodeId,
    pub cpu_capacity: CpuMicros,
    pub cpu_allocated: CpuMicros,
    pub hosted_services: BTreeSet<ServiceId>,
    pub uplink_bw: Bps,
    pub uplink_allocated: Bps,
    /// One-way public path delay when this node is the data sender, ms.
    pub uplink_delay_ms: f64,
}

#[derive(Debug, Clone)]
pub struct DedicatedLink {
    pub id: LinkId,
    pub a: NodeId,
    pub b: NodeId,
    pub bandwidth: Bps,
    pub allocated: Bps,
    pub delay_ms: f64,
}

impl DedicatedLink {
    pub fn other_end(&self, n: NodeId) -> NodeId {
        if self.a == n {
            self.b
        } else {
            self.a
        }
    }

    pub fn connects(&self, u: NodeId, v: NodeId) -> bool {
        (self.a == u && self.b == v) || (self.a == v && self.b == u)
    }
}

/// A reference to one allocatable resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ResourceRef {
    Link(LinkId),
    NodeCpu(NodeId),
    Uplink(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenParams {
    pub n_nodes: u32,
    pub n_links: u32,
    pub n_service_types: u16,
    /// Instances of each hosted service a node can run concurrently at the
    /// nominal rate (k in the capacity sizing rule).
    pub cpu_instances: f64,
    /// Mean data delivery rate used for capacity sizing, Mbps.
    pub nominal_rate_mbps: f64,
    pub link_bw_mbps: (f64, f64),
    pub link_delay_ms: (f64, f64),
    pub uplink_bw_mbps: (f64, f64),
    pub public_delay_ms: (f64, f64),
    pub shrinkage_range: (f64, f64),
    pub cpu_factor_range: (f64, f64),
    /// Permit n_links < n_nodes - 1 by building the attachment tree on a
    /// random subset and leaving the remaining nodes public-only.
    pub allow_sparse: bool,
    /// Fraction of true hosts exposed by the service directory.
    pub directory_fraction: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            n_nodes: 100,
            n_links: 99,
            n_service_types: 25,
            cpu_instances: 2.0,
            nominal_rate_mbps: 1.0,
            link_bw_mbps: (1.0, 10.0),
            link_delay_ms: (1.0, 10.0),
            uplink_bw_mbps: (1.0, 2.0),
            public_delay_ms: (10.0, 100.0),
            // Mean 1 and low spread: chains neither inflate volume on
            // average nor drive hop rates outside what uplinks of 1-2 Mbps
            // can ever carry, keeping task durations at the volume/rate
            // design point.
            shrinkage_range: (0.8, 1.2),
            cpu_factor_range: (0.5, 1.5),
            allow_sparse: false,
            directory_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub nodes: Vec<ServerNode>,
    pub links: Vec<DedicatedLink>,
    pub services: Vec<ServiceClass>,
    /// Per-node incident dedicated links, ascending link id.
    adjacency: Vec<Vec<LinkId>>,
    /// Directory view per service type (sorted); a seeded subset of the true
    /// hosts when generated with directory_fraction < 1.
    directory: Vec<Vec<NodeId>>,
    /// True if at least one node was left outside the dedicated graph.
    pub sparse: bool,
}

impl Network {
    /// Grows the platform from a fresh seeded generator.
    ///
    /// The dedicated graph starts from a two-node seed edge and attaches each
    /// new node to an existing one with probability proportional to degree;
    /// extra links beyond a spanning tree connect distinct non-adjacent
    /// preferentially-sampled pairs, so the graph stays connected and simple.
    pub fn generate(params: &GenParams, seed: u64) -> Result<Network, TopologyError> {
        let n = params.n_nodes as usize;
        let m = params.n_links as usize;
        if n < 2 {
            return Err(TopologyError::InvalidParameters("need at least 2 nodes".into()));
        }
        if params.n_service_types == 0 {
            return Err(TopologyError::InvalidParameters("need at least 1 service type".into()));
        }
        if m < n - 1 && !params.allow_sparse {
            return Err(TopologyError::InvalidParameters(format!(
                "n_links={} below n_nodes-1={} (set allow_sparse to build a reduced-connectivity platform)",
                m,
                n - 1
            )));
        }
        let max_links = n * (n - 1) / 2;
        if m > max_links {
            return Err(TopologyError::InvalidParameters(format!(
                "n_links={} exceeds simple-graph maximum {}",
                m, max_links
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        // Membership of the dedicated graph. In sparse mode only m+1 random
        // nodes join it; everyone else is reachable through the public
        // network alone.
        let members: Vec<u32> = if m >= n - 1 {
            (0..params.n_nodes).collect()
        } else {
            let mut ids: Vec<u32> = (0..params.n_nodes).collect();
            ids.shuffle(&mut rng);
            let mut chosen: Vec<u32> = ids.into_iter().take(m + 1).collect();
            chosen.sort_unstable();
            chosen
        };
        let sparse = members.len() < n;

        // Preferential-attachment tree over the members, then extra links.
        let mut degree = vec![0u32; n];
        let mut edges: Vec<(u32, u32)> = Vec::with_capacity(m);
        let mut endpoint_bag: Vec<u32> = Vec::with_capacity(2 * m);
        let mut adjacent = BTreeSet::new();
        let add_edge = |u: u32,
                            v: u32,
                            degree: &mut Vec<u32>,
                            edges: &mut Vec<(u32, u32)>,
                            bag: &mut Vec<u32>,
                            adjacent: &mut BTreeSet<(u32, u32)>| {
            degree[u as usize] += 1;
            degree[v as usize] += 1;
            edges.push((u, v));
            bag.push(u);
            bag.push(v);
            adjacent.insert((u.min(v), u.max(v)));
        };

        if members.len() >= 2 {
            add_edge(
                members[0],
                members[1],
                &mut degree,
                &mut edges,
                &mut endpoint_bag,
                &mut adjacent,
            );
            for &u in &members[2..] {
                let target = endpoint_bag[rng.gen_range(0..endpoint_bag.len())];
                add_edge(u, target, &mut degree, &mut edges, &mut endpoint_bag, &mut adjacent);
            }
        }
        while edges.len() < m {
            let u = endpoint_bag[rng.gen_range(0..endpoint_bag.len())];
            let v = endpoint_bag[rng.gen_range(0..endpoint_bag.len())];
            if u == v || adjacent.contains(&(u.min(v), u.max(v))) {
                continue;
            }
            add_edge(u, v, &mut degree, &mut edges, &mut endpoint_bag, &mut adjacent);
        }

        // Service catalog.
        let services: Vec<ServiceClass> = (0..params.n_service_types)
            .map(|_| ServiceClass {
                shrinkage: rng.gen_range(params.shrinkage_range.0..params.shrinkage_range.1),
                cpu_factor: rng.gen_range(params.cpu_factor_range.0..params.cpu_factor_range.1),
            })
            .collect();

        // Hosting: a node with d dedicated links serves 1 + d types, drawn
        // uniformly without replacement (clamped to the whole universe).
        let all_types: Vec<ServiceId> = (0..params.n_service_types).map(ServiceId).collect();
        let mut hosted: Vec<BTreeSet<ServiceId>> = Vec::with_capacity(n);
        for node in 0..n {
            let want = (1 + degree[node] as usize).min(all_types.len());
            let mut pool = all_types.clone();
            pool.shuffle(&mut rng);
            hosted.push(pool.into_iter().take(want).collect());
        }

        // Capacity: k concurrent instances of each hosted service at the
        // nominal delivery rate.
        let mut nodes = Vec::with_capacity(n);
        for node in 0..n {
            let per_instance: f64 = hosted[node]
                .iter()
                .map(|s| services[s.0 as usize].cpu_factor * params.nominal_rate_mbps)
                .sum();
            let uplink = rng.gen_range(params.uplink_bw_mbps.0..params.uplink_bw_mbps.1);
            let delay = rng.gen_range(params.public_delay_ms.0..params.public_delay_ms.1);
            nodes.push(ServerNode {
                id: NodeId(node as u32),
                cpu_capacity: (params.cpu_instances * per_instance * 1e6).round() as CpuMicros,
                cpu_allocated: 0,
                hosted_services: hosted[node].clone(),
                uplink_bw: mbps_to_bps(uplink),
                uplink_allocated: 0,
                uplink_delay_ms: delay,
            });
        }

        let mut links = Vec::with_capacity(m);
        for (i, &(u, v)) in edges.iter().enumerate() {
            let bw = rng.gen_range(params.link_bw_mbps.0..params.link_bw_mbps.1);
            let delay = rng.gen_range(params.link_delay_ms.0..params.link_delay_ms.1);
            links.push(DedicatedLink {
                id: LinkId(i as u32),
                a: NodeId(u),
                b: NodeId(v),
                bandwidth: mbps_to_bps(bw),
                allocated: 0,
                delay_ms: delay,
            });
        }

        let mut net = Network {
            nodes,
            links,
            services,
            adjacency: Vec::new(),
            directory: Vec::new(),
            sparse,
        };
        net.rebuild_indexes();
        net.build_directory(params.directory_fraction, seed);
        Ok(net)
    }

    /// Assembles a network from explicit parts (tests, hand-built scenarios);
    /// the directory is exact.
    pub fn from_parts(
        nodes: Vec<ServerNode>,
        links: Vec<DedicatedLink>,
        services: Vec<ServiceClass>,
    ) -> Network {
        let sparse = {
            let mut member = vec![false; nodes.len()];
            for l in &links {
                member[l.a.0 as usize] = true;
                member[l.b.0 as usize] = true;
            }
            member.iter().any(|&m| !m)
        };
        let mut net = Network {
            nodes,
            links,
            services,
            adjacency: Vec::new(),
            directory: Vec::new(),
            sparse,
        };
        net.rebuild_indexes();
        net.build_directory(1.0, 0);
        net
    }

    fn rebuild_indexes(&mut self) {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for link in &self.links {
            adj[link.a.0 as usize].push(link.id);
            adj[link.b.0 as usize].push(link.id);
        }
        self.adjacency = adj;
    }

    /// The directory is the gossip-disseminated view of who hosts what; with
    /// fraction < 1 each entry is a deterministic seeded subset of the truth.
    fn build_directory(&mut self, fraction: f64, seed: u64) {
        let n_types = self.services.len();
        let mut dir = Vec::with_capacity(n_types);
        for t in 0..n_types {
            let mut hosts: Vec<NodeId> = self
                .nodes
                .iter()
                .filter(|n| n.hosted_services.contains(&ServiceId(t as u16)))
                .map(|n| n.id)
                .collect();
            if fraction < 1.0 {
                let keep = (fraction * hosts.len() as f64 + 0.5).floor() as usize;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d115 ^ (t as u64) << 17);
                hosts.shuffle(&mut rng);
                hosts.truncate(keep);
                hosts.sort_unstable();
            }
            dir.push(hosts);
        }
        self.directory = dir;
    }

    pub fn node(&self, id: NodeId) -> &ServerNode {
        &self.nodes[id.0 as usize]
    }

    pub fn link(&self, id: LinkId) -> &DedicatedLink {
        &self.links[id.0 as usize]
    }

    /// Incident dedicated links of `node`, ascending link id.
    pub fn incident_links(&self, node: NodeId) -> &[LinkId] {
        &self.adjacency[node.0 as usize]
    }

    pub fn dedicated_degree(&self, node: NodeId) -> usize {
        self.adjacency[node.0 as usize].len()
    }

    /// Directory lookup: the (possibly partial) set of hosts of `service`.
    pub fn service_providers(&self, service: ServiceId) -> &[NodeId] {
        static EMPTY: &[NodeId] = &[];
        self.directory
            .get(service.0 as usize)
            .map(|v| v.as_slice())
            .unwrap_or(EMPTY)
    }

    /// True hosting test, independent of directory completeness.
    pub fn hosts(&self, node: NodeId, service: ServiceId) -> bool {
        self.nodes[node.0 as usize].hosted_services.contains(&service)
    }

    pub fn capacity(&self, res: ResourceRef) -> Result<u64, TopologyError> {
        match res {
            ResourceRef::Link(id) => self
                .links
                .get(id.0 as usize)
                .map(|l| l.bandwidth)
                .ok_or(TopologyError::UnknownResource(res)),
            ResourceRef::NodeCpu(id) => self
                .nodes
                .get(id.0 as usize)
                .map(|n| n.cpu_capacity)
                .ok_or(TopologyError::UnknownResource(res)),
            ResourceRef::Uplink(id) => self
                .nodes
                .get(id.0 as usize)
                .map(|n| n.uplink_bw)
                .ok_or(TopologyError::UnknownResource(res)),
        }
    }

    pub fn allocated(&self, res: ResourceRef) -> Result<u64, TopologyError> {
        match res {
            ResourceRef::Link(id) => self
                .links
                .get(id.0 as usize)
                .map(|l| l.allocated)
                .ok_or(TopologyError::UnknownResource(res)),
            ResourceRef::NodeCpu(id) => self
                .nodes
                .get(id.0 as usize)
                .map(|n| n.cpu_allocated)
                .ok_or(TopologyError::UnknownResource(res)),
            ResourceRef::Uplink(id) => self
                .nodes
                .get(id.0 as usize)
                .map(|n| n.uplink_allocated)
                .ok_or(TopologyError::UnknownResource(res)),
        }
    }

    /// capacity - allocated; never negative.
    pub fn residual(&self, res: ResourceRef) -> Result<u64, TopologyError> {
        Ok(self.capacity(res)?.saturating_sub(self.allocated(res)?))
    }

    /// Claims `amount` on `res`, failing without mutation on shortfall.
    pub fn reserve(&mut self, res: ResourceRef, amount: u64) -> Result<(), TopologyError> {
        let residual = self.residual(res)?;
        if amount > residual {
            return Err(TopologyError::InsufficientResidual(res, amount, residual));
        }
        *self.alloc_mut(res) += amount;
        Ok(())
    }

    pub fn release(&mut self, res: ResourceRef, amount: u64) -> Result<(), TopologyError> {
        let allocated = self.allocated(res)?;
        if amount > allocated {
            return Err(TopologyError::ReleaseUnderflow(res, amount, allocated));
        }
        *self.alloc_mut(res) -= amount;
        Ok(())
    }

    fn alloc_mut(&mut self, res: ResourceRef) -> &mut u64 {
        match res {
            ResourceRef::Link(id) => &mut self.links[id.0 as usize].allocated,
            ResourceRef::NodeCpu(id) => &mut self.nodes[id.0 as usize].cpu_allocated,
            ResourceRef::Uplink(id) => &mut self.nodes[id.0 as usize].uplink_allocated,
        }
    }

    pub fn total_cpu_capacity(&self) -> u64 {
        self.nodes.iter().map(|n| n.cpu_capacity).sum()
    }

    pub fn total_link_capacity(&self) -> u64 {
        self.links.iter().map(|l| l.bandwidth).sum()
    }

    pub fn total_uplink_capacity(&self) -> u64 {
        self.nodes.iter().map(|n| n.uplink_bw).sum()
    }

    /// True when the dedicated graph spans all member nodes in one component.
    pub fn dedicated_connected(&self) -> bool {
        let member: Vec<bool> = (0..self.nodes.len())
            .map(|i| !self.adjacency[i].is_empty())
            .collect();
        let start = match member.iter().position(|&m| m) {
            Some(i) => i,
            None => return self.links.is_empty(),
        };
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(u) = stack.pop() {
            for &lid in &self.adjacency[u] {
                let v = self.links[lid.0 as usize].other_end(NodeId(u as u32)).0 as usize;
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        (0..self.nodes.len()).all(|i| !member[i] || seen[i])
    }

    /// One record per service class, node, and link; floats use the shortest
    /// round-trip form so equal networks serialize byte-identically.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# bimodal-sim network v1");
        let _ = writeln!(out, "counts {} {} {}", self.nodes.len(), self.links.len(), self.services.len());
        for (i, s) in self.services.iter().enumerate() {
            let _ = writeln!(out, "service {} {} {}", i, s.shrinkage, s.cpu_factor);
        }
        for n in &self.nodes {
            let svc: Vec<String> = n.hosted_services.iter().map(|s| s.0.to_string()).collect();
            let _ = writeln!(
                out,
                "node {} {} {} {} {}",
                n.id.0,
                n.cpu_capacity,
                n.uplink_bw,
                n.uplink_delay_ms,
                svc.join(",")
            );
        }
        for l in &self.links {
            let _ = writeln!(
                out,
                "link {} {} {} {} {}",
                l.id.0, l.a.0, l.b.0, l.bandwidth, l.delay_ms
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Network, TopologyError> {
        let mut services = Vec::new();
        let mut nodes: Vec<ServerNode> = Vec::new();
        let mut links = Vec::new();
        let parse_err = |line: usize, msg: &str| TopologyError::Parse { line, msg: msg.into() };
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("counts") => {}
                Some("service") => {
                    let _idx: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(ln + 1, "bad service index"))?;
                    let shrinkage: f64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(ln + 1, "bad shrinkage"))?;
                    let cpu_factor: f64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(ln + 1, "bad cpu factor"))?;
                    services.push(ServiceClass { shrinkage, cpu_factor });
                }
                Some("node") => {
                    let id: u32 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(ln + 1, "bad node id"))?;
                    let cpu: CpuMicros = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(ln + 1, "bad cpu capacity"))?;
                    let uplink: Bps = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(ln + 1, "bad uplink"))?;
                    let delay: f64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(ln + 1, "bad uplink delay"))?;
                    let svc = parts.next().unwrap_or("");
                    let hosted: BTreeSet<ServiceId> = if svc.is_empty() {
                        BTreeSet::new()
                    } else {
                        svc.split(',')
                            .map(|t| t.parse::<u16>().map(ServiceId))
                            .collect::<Result<_, _>>()
                            .map_err(|_| parse_err(ln + 1, "bad service list"))?
                    };
                    nodes.push(ServerNode {
                        id: NodeId(id),
                        cpu_capacity: cpu,
                        cpu_allocated: 0,
                        hosted_services: hosted,
                        uplink_bw: uplink,
                        uplink_allocated: 0,
                        uplink_delay_ms: delay,
                    });
                }
                Some("link") => {
                    let mut next_u64 = || -> Option<u64> { parts.next().and_then(|s| s.parse().ok()) };
                    let id = next_u64().ok_or_else(|| parse_err(ln + 1, "bad link id"))?;
                    let a = next_u64().ok_or_else(|| parse_err(ln + 1, "bad endpoint"))?;
                    let b = next_u64().ok_or_else(|| parse_err(ln + 1, "bad endpoint"))?;
                    let bw = next_u64().ok_or_else(|| parse_err(ln + 1, "bad bandwidth"))?;
                    let delay: f64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(ln + 1, "bad delay"))?;
                    links.push(DedicatedLink {
                        id: LinkId(id as u32),
                        a: NodeId(a as u32),
                        b: NodeId(b as u32),
                        bandwidth: bw,
                        allocated: 0,
                        delay_ms: delay,
                    });
                }
                Some(other) => return Err(parse_err(ln + 1, &format!("unknown record '{other}'"))),
                None => {}
            }
        }
        let sparse = {
            let mut member = vec![false; nodes.len()];
            for l in &links {
                member[l.a.0 as usize] = true;
                member[l.b.0 as usize] = true;
            }
            member.iter().any(|&m| !m)
        };
        let mut net = Network {
            nodes,
            links,
            services,
            adjacency: Vec::new(),
            directory: Vec::new(),
            sparse,
        };
        net.rebuild_indexes();
        net.build_directory(1.0, 0);
        Ok(net)
    }
}
