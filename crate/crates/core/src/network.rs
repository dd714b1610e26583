//! Topology, per-node FIFO servers and next-hop selection.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::engine::{EngineError, Exponential, RngStream, Scheduler, SimTime};
use crate::metrics::{RunningStats, TimeAverage};

pub const DEFAULT_CAPACITY_BPS: f64 = 10e6;
pub const DEFAULT_LINK_DELAY_S: f64 = 2e-3;
pub const DEFAULT_SERVICE_MEAN_S: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("grid needs at least 2 rows and 2 columns, got {rows}x{cols}")]
    GridTooSmall { rows: usize, cols: usize },
    #[error("link capacity must be positive, got {0}")]
    BadCapacity(f64),
    #[error("link mean delay must be positive, got {0}")]
    BadDelay(f64),
    #[error("unknown node {0}")]
    UnknownNode(u32),
    #[error("duplicate node {0}")]
    DuplicateNode(u32),
    #[error("duplicate link {0}-{1}")]
    DuplicateLink(u32, u32),
    #[error("self-loop on node {0}")]
    SelfLoop(u32),
    #[error("source and sink must differ")]
    SourceIsSink,
    #[error("topology is not connected")]
    Disconnected,
    #[error("node {0} has no outgoing links")]
    Isolated(u32),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Dense node index into a [`Topology`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkParams {
    capacity_bps: f64,
    mean_delay_s: f64,
}

impl LinkParams {
    pub fn new(capacity_bps: f64, mean_delay_s: f64) -> Result<Self, TopologyError> {
        if !(capacity_bps.is_finite() && capacity_bps > 0.0) {
            return Err(TopologyError::BadCapacity(capacity_bps));
        }
        if !(mean_delay_s.is_finite() && mean_delay_s > 0.0) {
            return Err(TopologyError::BadDelay(mean_delay_s));
        }
        Ok(LinkParams {
            capacity_bps,
            mean_delay_s,
        })
    }

    pub fn capacity_bps(&self) -> f64 {
        self.capacity_bps
    }

    pub fn mean_delay_s(&self) -> f64 {
        self.mean_delay_s
    }
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            capacity_bps: DEFAULT_CAPACITY_BPS,
            mean_delay_s: DEFAULT_LINK_DELAY_S,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    pub params: LinkParams,
}

/// An undirected physical link between two external node labels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub a: u32,
    pub b: u32,
    pub params: LinkParams,
}

/// Connected graph of nodes joined by bidirectional links, with a
/// designated source and sink.
///
/// Every physical link is stored as two directed entries. Nodes carry
/// external labels (as written in topology files) and dense [`NodeId`]s.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    labels: Vec<u32>,
    links: Vec<Link>,
    /// Outgoing link indices per node, ordered by neighbour id.
    out: Vec<Vec<usize>>,
    source: NodeId,
    sink: NodeId,
    dist_to_sink: Vec<u32>,
    /// Neighbours one hop closer to the sink.
    downhill: Vec<Vec<NodeId>>,
}

impl Topology {
    pub fn new(
        labels: Vec<u32>,
        edges: &[Edge],
        source: u32,
        sink: u32,
    ) -> Result<Self, TopologyError> {
        let mut index = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            if index.insert(l, NodeId(i as u32)).is_some() {
                return Err(TopologyError::DuplicateNode(l));
            }
        }
        let lookup = |l: u32| index.get(&l).copied().ok_or(TopologyError::UnknownNode(l));
        let source = lookup(source)?;
        let sink = lookup(sink)?;
        if source == sink {
            return Err(TopologyError::SourceIsSink);
        }

        let mut seen = BTreeSet::new();
        let mut links = Vec::with_capacity(edges.len() * 2);
        for e in edges {
            let (a, b) = (lookup(e.a)?, lookup(e.b)?);
            if a == b {
                return Err(TopologyError::SelfLoop(e.a));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(TopologyError::DuplicateLink(e.a, e.b));
            }
            links.push(Link {
                from: a,
                to: b,
                params: e.params,
            });
            links.push(Link {
                from: b,
                to: a,
                params: e.params,
            });
        }

        let n = labels.len();
        let mut out = vec![Vec::new(); n];
        for (i, l) in links.iter().enumerate() {
            out[l.from.index()].push(i);
        }
        for list in &mut out {
            list.sort_by_key(|&i| links[i].to);
        }

        let mut topo = Topology {
            labels,
            links,
            out,
            source,
            sink,
            dist_to_sink: Vec::new(),
            downhill: Vec::new(),
        };
        let from_source = topo.bfs(source);
        if from_source.contains(&u32::MAX) {
            return Err(TopologyError::Disconnected);
        }
        topo.dist_to_sink = topo.bfs(sink);
        topo.downhill = (0..n)
            .map(|i| {
                let d = topo.dist_to_sink[i];
                topo.neighbors(NodeId(i as u32))
                    .filter(|nb| d > 0 && topo.dist_to_sink[nb.index()] + 1 == d)
                    .collect()
            })
            .collect();
        Ok(topo)
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.labels.len() as u32).map(NodeId)
    }

    pub fn label(&self, node: NodeId) -> u32 {
        self.labels[node.index()]
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, index: usize) -> &Link {
        &self.links[index]
    }

    /// Undirected view, one entry per physical link, in insertion order.
    pub fn edges(&self) -> Vec<Edge> {
        self.links
            .iter()
            .step_by(2)
            .map(|l| Edge {
                a: self.label(l.from),
                b: self.label(l.to),
                params: l.params,
            })
            .collect()
    }

    pub fn source(&self) -> NodeId {
        self.source
    }

    pub fn sink(&self) -> NodeId {
        self.sink
    }

    pub fn out_links(&self, node: NodeId) -> &[usize] {
        &self.out[node.index()]
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.out[node.index()].len()
    }

    pub fn neighbors(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.out[node.index()]
            .iter()
            .map(move |&i| self.links[i].to)
    }

    /// Index of the directed link `from -> to`.
    pub fn link_between(&self, from: NodeId, to: NodeId) -> Option<usize> {
        self.out[from.index()]
            .iter()
            .copied()
            .find(|&i| self.links[i].to == to)
    }

    pub fn hop_distance_to_sink(&self, node: NodeId) -> u32 {
        self.dist_to_sink[node.index()]
    }

    /// Hop distances from `start`; `u32::MAX` marks unreachable nodes.
    pub fn bfs(&self, start: NodeId) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.labels.len()];
        let mut queue = VecDeque::new();
        dist[start.index()] = 0;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            let du = dist[u.index()];
            for v in self.neighbors(u) {
                if dist[v.index()] == u32::MAX {
                    dist[v.index()] = du + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn diameter(&self) -> u32 {
        self.nodes()
            .map(|n| self.bfs(n).into_iter().max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    pub fn link_params(&self) -> impl Iterator<Item = &LinkParams> {
        self.links.iter().map(|l| &l.params)
    }
}

/// Regular `rows x cols` lattice with the source at corner (0,0) and the
/// sink at (rows-1, cols-1). Node `(r, c)` has label `r * cols + c`.
pub fn build_grid(rows: usize, cols: usize, params: LinkParams) -> Result<Topology, TopologyError> {
    if rows < 2 || cols < 2 {
        return Err(TopologyError::GridTooSmall { rows, cols });
    }
    let id = |r: usize, c: usize| (r * cols + c) as u32;
    let mut edges = Vec::with_capacity(2 * rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push(Edge {
                    a: id(r, c),
                    b: id(r, c + 1),
                    params,
                });
            }
            if r + 1 < rows {
                edges.push(Edge {
                    a: id(r, c),
                    b: id(r + 1, c),
                    params,
                });
            }
        }
    }
    Topology::new(
        (0..(rows * cols) as u32).collect(),
        &edges,
        id(0, 0),
        id(rows - 1, cols - 1),
    )
}

/// Removes up to `removal_fraction` of the physical links in random order,
/// skipping any removal that would disconnect the graph or strand the
/// source or sink.
pub fn perturb(topology: &Topology, removal_fraction: f64, rng: &mut RngStream) -> Topology {
    let mut edges = topology.edges();
    let target = (removal_fraction.clamp(0.0, 1.0) * edges.len() as f64).floor() as usize;
    if target == 0 {
        return topology.clone();
    }
    let labels = topology.labels.clone();
    let source = topology.label(topology.source);
    let sink = topology.label(topology.sink);

    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.shuffle(rng);
    let mut removed = BTreeSet::new();
    for candidate in order {
        if removed.len() == target {
            break;
        }
        removed.insert(candidate);
        let kept: Vec<Edge> = edges
            .iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, e)| *e)
            .collect();
        let ok = match Topology::new(labels.clone(), &kept, source, sink) {
            Ok(t) => t.nodes().all(|n| t.degree(n) > 0),
            Err(_) => false,
        };
        if !ok {
            removed.remove(&candidate);
        }
    }
    let mut i = 0;
    edges.retain(|_| {
        let keep = !removed.contains(&i);
        i += 1;
        keep
    });
    Topology::new(labels, &edges, source, sink).expect("perturbation preserves validity")
}

/// Next-hop selection rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoutingPolicy {
    /// Any neighbour, uniformly.
    UniformRandom { ttl: u32 },
    /// Any neighbour except the one the packet came from, unless that is the
    /// only neighbour.
    RandomWalkNoBacktrack { ttl: u32 },
    /// Uniform over neighbours one hop closer to the sink.
    RandomShortestPath,
}

impl RoutingPolicy {
    pub fn ttl(&self) -> Option<u32> {
        match *self {
            RoutingPolicy::UniformRandom { ttl } | RoutingPolicy::RandomWalkNoBacktrack { ttl } => {
                Some(ttl)
            }
            RoutingPolicy::RandomShortestPath => None,
        }
    }
}

/// Picks the next node for a packet at `at` that arrived from `previous`.
pub fn next_hop<R: Rng + ?Sized>(
    topology: &Topology,
    at: NodeId,
    previous: Option<NodeId>,
    policy: RoutingPolicy,
    rng: &mut R,
) -> Result<NodeId, TopologyError> {
    let out = topology.out_links(at);
    if out.is_empty() {
        return Err(TopologyError::Isolated(topology.label(at)));
    }
    let pick = |rng: &mut R, n: usize| if n == 1 { 0 } else { rng.random_range(0..n) };
    match policy {
        RoutingPolicy::UniformRandom { .. } => Ok(topology.links[out[pick(rng, out.len())]].to),
        RoutingPolicy::RandomWalkNoBacktrack { .. } => {
            let excluded =
                previous.filter(|&p| out.len() > 1 && topology.link_between(at, p).is_some());
            match excluded {
                None => Ok(topology.links[out[pick(rng, out.len())]].to),
                Some(p) => {
                    let j = pick(rng, out.len() - 1);
                    let next = out
                        .iter()
                        .map(|&i| topology.links[i].to)
                        .filter(|&nb| nb != p)
                        .nth(j)
                        .expect("candidate index in range");
                    Ok(next)
                }
            }
        }
        RoutingPolicy::RandomShortestPath => {
            let cands = &topology.downhill[at.index()];
            if cands.is_empty() {
                // Only the sink itself has no downhill neighbour.
                return Err(TopologyError::Isolated(topology.label(at)));
            }
            Ok(cands[pick(rng, cands.len())])
        }
    }
}

/// Single-server FIFO queue. The head of the queue is the packet in service.
#[derive(Clone, Debug)]
pub struct NodeState<P> {
    queue: VecDeque<P>,
    busy: bool,
    service: Exponential,
    utilization: TimeAverage,
    occupancy: TimeAverage,
    served: u64,
}

impl<P: Copy> NodeState<P> {
    /// Statistics are accumulated from `window_start` on.
    pub fn new(service_mean: f64, window_start: f64) -> Result<Self, EngineError> {
        Ok(NodeState {
            queue: VecDeque::new(),
            busy: false,
            service: Exponential::new(service_mean)?,
            utilization: TimeAverage::new(window_start),
            occupancy: TimeAverage::new(window_start),
            served: 0,
        })
    }

    pub fn is_busy(&self) -> bool {
        self.busy
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn service_mean(&self) -> f64 {
        self.service.mean()
    }

    #[inline]
    pub fn draw_service<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.service.sample(rng)
    }

    /// Appends `packet`. Returns it back if the server was idle and service
    /// starts now; the caller schedules its completion.
    pub fn enqueue(&mut self, packet: P, now: SimTime) -> Option<P> {
        let t = now.seconds();
        self.queue.push_back(packet);
        self.occupancy.set(t, self.queue.len() as f64);
        if self.busy {
            None
        } else {
            self.busy = true;
            self.utilization.set(t, 1.0);
            Some(packet)
        }
    }

    /// Ends the current service. Returns the departing packet and, if the
    /// queue is non-empty, the packet whose service starts now.
    pub fn complete_service(&mut self, now: SimTime) -> Option<(P, Option<P>)> {
        if !self.busy {
            return None;
        }
        let t = now.seconds();
        let done = self.queue.pop_front()?;
        self.served += 1;
        self.occupancy.set(t, self.queue.len() as f64);
        let next = self.queue.front().copied();
        if next.is_none() {
            self.busy = false;
            self.utilization.set(t, 0.0);
        }
        Some((done, next))
    }

    pub fn served(&self) -> u64 {
        self.served
    }

    /// Busy fraction over `[window_start, end]`.
    pub fn utilization(&self, end: f64) -> f64 {
        self.utilization.average(end)
    }

    /// Time-averaged number of packets at the node over `[window_start, end]`.
    pub fn mean_occupancy(&self, end: f64) -> f64 {
        self.occupancy.average(end)
    }
}

#[derive(Clone, Copy, Debug)]
enum QueueEvent {
    Arrival,
    Departure,
}

/// Sojourn times of an isolated FIFO node fed by Poisson arrivals, over
/// `packets` departures after discarding the first `warmup_packets`.
pub fn simulate_isolated_node(
    arrival_rate: f64,
    service_mean: f64,
    packets: u64,
    warmup_packets: u64,
    seed: u64,
) -> Result<RunningStats, EngineError> {
    let interarrival = Exponential::new(1.0 / arrival_rate)?;
    let mut node: NodeState<SimTime> = NodeState::new(service_mean, 0.0)?;
    let mut arrivals = RngStream::new("arrivals", seed);
    let mut service = RngStream::new("service", seed);
    let mut sched = Scheduler::new();
    let mut stats = RunningStats::new();
    let mut departed = 0u64;
    let total = packets + warmup_packets;

    sched.schedule(SimTime::ZERO, QueueEvent::Arrival)?;
    while departed < total {
        let Some(ev) = sched.pop_until(SimTime::new(f64::MAX)?) else {
            break;
        };
        let now = ev.time;
        match ev.payload {
            QueueEvent::Arrival => {
                if node.enqueue(now, now).is_some() {
                    sched.schedule_in(node.draw_service(&mut service), QueueEvent::Departure)?;
                }
                sched.schedule_in(interarrival.sample(&mut arrivals), QueueEvent::Arrival)?;
            }
            QueueEvent::Departure => {
                let (arrived, next) = node.complete_service(now).expect("busy at departure");
                departed += 1;
                if departed > warmup_packets {
                    stats.push(now.seconds() - arrived.seconds());
                }
                if next.is_some() {
                    sched.schedule_in(node.draw_service(&mut service), QueueEvent::Departure)?;
                }
            }
        }
    }
    Ok(stats)
}

/// Parses the line-oriented topology format:
///
/// ```text
/// # comment
/// node <id>
/// link <from> <to> <capacity_bps> <mean_delay_s>
/// source <id>
/// sink <id>
/// ```
///
/// Each `link` line declares one bidirectional physical link.
pub fn parse_topology(text: &str) -> Result<Topology, TopologyError> {
    let mut labels = Vec::new();
    let mut edges = Vec::new();
    let mut source = None;
    let mut sink = None;
    let err = |line: usize, message: String| TopologyError::Parse { line, message };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let id = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| err(line_no, format!("invalid node id `{s}`")))
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| err(line_no, format!("invalid number `{s}`")))
        };
        match fields.as_slice() {
            ["node", n] => labels.push(id(n)?),
            ["link", a, b, cap, delay] => {
                let params = LinkParams::new(num(cap)?, num(delay)?)
                    .map_err(|e| err(line_no, e.to_string()))?;
                edges.push(Edge {
                    a: id(a)?,
                    b: id(b)?,
                    params,
                });
            }
            ["source", n] => {
                if source.replace(id(n)?).is_some() {
                    return Err(err(line_no, "duplicate source".into()));
                }
            }
            ["sink", n] => {
                if sink.replace(id(n)?).is_some() {
                    return Err(err(line_no, "duplicate sink".into()));
                }
            }
            _ => return Err(err(line_no, format!("unrecognised line `{line}`"))),
        }
    }
    let end = text.lines().count();
    let source = source.ok_or_else(|| err(end, "missing source".into()))?;
    let sink = sink.ok_or_else(|| err(end, "missing sink".into()))?;
    Topology::new(labels, &edges, source, sink)
}

pub fn format_topology(topology: &Topology) -> String {
    let mut s = String::new();
    for n in topology.nodes() {
        let _ = writeln!(s, "node {}", topology.label(n));
    }
    for e in topology.edges() {
        let _ = writeln!(
            s,
            "link {} {} {} {}",
            e.a,
            e.b,
            e.params.capacity_bps(),
            e.params.mean_delay_s()
        );
    }
    let _ = writeln!(s, "source {}", topology.label(topology.source()));
    let _ = writeln!(s, "sink {}", topology.label(topology.sink()));
    s
}
