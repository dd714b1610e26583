//! One simulation run: message source, forwarding network and receiver
//! wired to a single event calendar.

use crate::engine::{EngineError, Event, Exponential, RngStream, Scheduler, SimTime};
use crate::metrics::{MessageRecord, MetricsAccumulator, Outcome, RunMetrics};
use crate::network::{next_hop, NodeId, NodeState, RoutingPolicy, Topology};
use crate::transport::{Arrival, CodeConfig, Message, MessageSource, Packet, ReceiverState};

use super::HarnessError;

/// Everything one run needs besides the topology.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub code: CodeConfig,
    pub rate: f64,
    pub service_mean: f64,
    pub packet_size_bits: f64,
    pub policy: RoutingPolicy,
    pub deadline: f64,
    pub horizon: f64,
    pub warmup_end: f64,
    /// Seed shared by both arms of a pair.
    pub seed: u64,
    pub record_messages: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub messages: Option<Vec<MessageRecord>>,
    pub events: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum SimEvent {
    MessageGeneration,
    ServiceCompletion(NodeId),
    LinkDelivery { packet: u32, to: NodeId },
    EndOfRun,
}

struct Model<'a> {
    topo: &'a Topology,
    spec: &'a RunSpec,
    nodes: Vec<NodeState<u32>>,
    link_delay: Vec<Exponential>,
    packets: Vec<Packet>,
    free: Vec<u32>,
    rx: ReceiverState,
    messages: MessageSource,
    service_rng: RngStream,
    routing_rng: RngStream,
    link_rng: RngStream,
    packets_generated: u64,
    packets_delivered: u64,
    packets_dropped: u64,
    bits_in_window: f64,
    completions_in_window: u64,
    fingerprint: u64,
}

impl<'a> Model<'a> {
    fn live(&self) -> u64 {
        (self.packets.len() - self.free.len()) as u64
    }

    fn alloc(&mut self, p: Packet) -> u32 {
        match self.free.pop() {
            Some(id) => {
                self.packets[id as usize] = p;
                id
            }
            None => {
                self.packets.push(p);
                (self.packets.len() - 1) as u32
            }
        }
    }

    fn release(&mut self, id: u32) {
        self.free.push(id);
    }

    #[inline]
    fn key(p: &Packet) -> [u64; 3] {
        [p.message_id, u64::from(p.index), u64::from(p.hops)]
    }

    fn start_service(
        &mut self,
        sched: &mut Scheduler<SimEvent>,
        node: NodeId,
        id: u32,
    ) -> Result<(), EngineError> {
        let key = Self::key(&self.packets[id as usize]);
        let d = self.nodes[node.index()].draw_service(&mut self.service_rng.keyed(key));
        sched.schedule_in(d, SimEvent::ServiceCompletion(node))?;
        Ok(())
    }

    fn admit(
        &mut self,
        sched: &mut Scheduler<SimEvent>,
        node: NodeId,
        id: u32,
    ) -> Result<(), EngineError> {
        if let Some(started) = self.nodes[node.index()].enqueue(id, sched.now()) {
            self.start_service(sched, node, started)?;
        }
        Ok(())
    }

    fn handle(
        &mut self,
        sched: &mut Scheduler<SimEvent>,
        ev: Event<SimEvent>,
    ) -> Result<(), HarnessError> {
        let now = ev.time;
        match ev.payload {
            SimEvent::MessageGeneration => {
                let id = self.rx.open(now);
                debug_assert_eq!(id, self.messages.next_id());
                self.fingerprint = fnv_step(self.fingerprint, now.seconds().to_bits());
                let msg = Message {
                    id,
                    code: self.spec.code,
                    created_at: now,
                    deadline: self.spec.deadline,
                };
                let source = self.topo.source();
                for p in msg.packets(self.spec.packet_size_bits) {
                    let pid = self.alloc(p);
                    self.packets_generated += 1;
                    self.admit(sched, source, pid)?;
                }
                let next = now.seconds() + self.messages.next_gap();
                if next < self.spec.horizon {
                    sched.schedule(SimTime::new(next)?, SimEvent::MessageGeneration)?;
                }
            }
            SimEvent::ServiceCompletion(node) => {
                let (pid, next) = self.nodes[node.index()]
                    .complete_service(now)
                    .ok_or(HarnessError::Invariant("service completion at idle node"))?;
                let key = Self::key(&self.packets[pid as usize]);
                let prev = self.packets[pid as usize].previous_hop;
                let to = next_hop(
                    self.topo,
                    node,
                    prev,
                    self.spec.policy,
                    &mut self.routing_rng.keyed(key),
                )?;
                let link = self
                    .topo
                    .link_between(node, to)
                    .ok_or(HarnessError::Invariant("next hop without link"))?;
                let delay = self.link_delay[link].sample(&mut self.link_rng.keyed(key));
                let p = &mut self.packets[pid as usize];
                p.hops += 1;
                p.previous_hop = Some(node);
                sched.schedule_in(delay, SimEvent::LinkDelivery { packet: pid, to })?;
                if let Some(n) = next {
                    self.start_service(sched, node, n)?;
                }
            }
            SimEvent::LinkDelivery { packet: pid, to } => {
                let p = self.packets[pid as usize];
                if to == self.topo.sink() {
                    self.packets_delivered += 1;
                    let in_window = now.seconds() >= self.spec.warmup_end;
                    if in_window {
                        self.bits_in_window += p.size_bits;
                    }
                    if let Arrival::Completed(_) = self.rx.on_packet_arrival(&p, now)? {
                        if in_window {
                            self.completions_in_window += 1;
                        }
                    }
                    self.release(pid);
                } else if self.spec.policy.ttl().is_some_and(|ttl| p.hops >= ttl) {
                    self.packets_dropped += 1;
                    self.rx.on_packet_dropped(p.message_id)?;
                    self.release(pid);
                } else {
                    self.admit(sched, to, pid)?;
                }
            }
            SimEvent::EndOfRun => {}
        }
        debug_assert_eq!(
            self.packets_generated,
            self.live() + self.packets_delivered + self.packets_dropped
        );
        Ok(())
    }

    fn finish(self) -> Result<RunOutput, HarnessError> {
        let spec = self.spec;
        let horizon = spec.horizon;
        let mut acc = MetricsAccumulator::new(spec.warmup_end, horizon, spec.deadline);
        let mut records = spec.record_messages.then(Vec::new);
        let mut completions = 0u64;
        for id in 0..self.rx.len() as u64 {
            let created_at = self.rx.created_at(id).expect("dense ids");
            let done = self.rx.completion(id);
            let outcome = match (done, self.rx.is_failed(id)) {
                (Some(_), _) => Outcome::Completed,
                (None, true) => Outcome::Failed,
                (None, false) => Outcome::Unfinished,
            };
            completions += u64::from(done.is_some());
            let record = MessageRecord {
                message_id: id,
                created_at,
                completed_at: done.map(|d| d.completed_at),
                outcome,
                violated: done.is_none_or(|d| d.violated),
                hops_of_kth: done.map_or(0, |d| d.hops_of_kth),
            };
            acc.record(&record);
            if let Some(r) = records.as_mut() {
                r.push(record);
            }
        }
        if completions != self.rx.completions() {
            return Err(HarnessError::Invariant(
                "completion declared more than once",
            ));
        }

        let mut m = RunMetrics::empty();
        acc.finish_into(&mut m);
        let window = horizon - spec.warmup_end;
        if window > 0.0 {
            m.delivered_throughput =
                self.completions_in_window as f64 * spec.code.k() as f64 * spec.packet_size_bits
                    / window;
            m.delivered_total_throughput = self.bits_in_window / window;
        }
        m.packets_generated = self.packets_generated;
        m.packets_delivered = self.packets_delivered;
        m.packets_dropped = self.packets_dropped;
        m.packets_in_flight = self.live();
        m.surplus_packets = self.rx.surplus();
        let sink = self.topo.sink();
        for (i, node) in self.nodes.iter().enumerate() {
            if i == sink.index() {
                continue;
            }
            m.bottleneck_utilization = m.bottleneck_utilization.max(node.utilization(horizon));
            m.max_mean_occupancy = m.max_mean_occupancy.max(node.mean_occupancy(horizon));
        }
        m.creation_fingerprint = self.fingerprint;
        if !m.is_conserved() {
            return Err(HarnessError::Invariant(
                "packet or message conservation violated",
            ));
        }
        Ok(RunOutput {
            metrics: m,
            messages: records,
            events: 0,
        })
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn fnv_step(h: u64, word: u64) -> u64 {
    word.to_le_bytes().iter().fold(h, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Runs one arm to its horizon.
///
/// Message creation times come from the `arrivals` stream alone, so two
/// specs that differ only in `n` see identical arrivals. Service, routing
/// and link draws are keyed by (message, packet index, hop): packet `i` of
/// message `m` receives the same requirements in both arms.
pub fn run(topo: &Topology, spec: &RunSpec) -> Result<RunOutput, HarnessError> {
    let warmup = spec.warmup_end;
    let nodes = (0..topo.node_count())
        .map(|_| NodeState::new(spec.service_mean, warmup))
        .collect::<Result<Vec<_>, _>>()?;
    let link_delay = topo
        .links()
        .iter()
        .map(|l| Exponential::new(l.params.mean_delay_s()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut model = Model {
        topo,
        spec,
        nodes,
        link_delay,
        packets: Vec::new(),
        free: Vec::new(),
        rx: ReceiverState::new(spec.code, spec.deadline)?,
        messages: MessageSource::new(spec.rate, RngStream::new("arrivals", spec.seed))?,
        service_rng: RngStream::new("service", spec.seed),
        routing_rng: RngStream::new("routing", spec.seed),
        link_rng: RngStream::new("link", spec.seed),
        packets_generated: 0,
        packets_delivered: 0,
        packets_dropped: 0,
        bits_in_window: 0.0,
        completions_in_window: 0,
        fingerprint: FNV_OFFSET,
    };

    let horizon = SimTime::new(spec.horizon)?;
    let mut sched = Scheduler::new();
    let first = model.messages.next_gap();
    if first < spec.horizon {
        sched.schedule(SimTime::new(first)?, SimEvent::MessageGeneration)?;
    }
    sched.schedule(horizon, SimEvent::EndOfRun)?;
    let events = sched.run(horizon, |s, ev| model.handle(s, ev))?;
    let mut out = model.finish()?;
    out.events = events;
    Ok(out)
}
