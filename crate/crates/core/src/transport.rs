//! Message generation, the any-k-of-n completion rule, and deadline checks.
//!
//! Coding is abstract: a message of `k` information packets is sent as `n`
//! packets and is reconstructed as soon as any `k` distinct indices reach the
//! receiver. No codec arithmetic is performed.

use rand::Rng;
use thiserror::Error;

use crate::engine::{Exponential, RngStream, SimTime};
use crate::network::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("invalid code: need 1 <= k <= n, got k={k}, n={n}")]
    InvalidCode { k: usize, n: usize },
    #[error("message rate must be positive, got {0}")]
    BadRate(f64),
    #[error("deadline must be positive, got {0}")]
    BadDeadline(f64),
    #[error("unknown message {0}")]
    UnknownMessage(u64),
    #[error("packet index {index} out of range for n={n}")]
    BadIndex { index: u32, n: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CodeConfig {
    k: usize,
    n: usize,
}

impl CodeConfig {
    pub fn new(k: usize, n: usize) -> Result<Self, TransportError> {
        if k >= 1 && k <= n {
            Ok(CodeConfig { k, n })
        } else {
            Err(TransportError::InvalidCode { k, n })
        }
    }

    pub fn uncoded(k: usize) -> Result<Self, TransportError> {
        Self::new(k, k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    pub fn is_uncoded(&self) -> bool {
        self.k == self.n
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Message {
    pub id: u64,
    pub code: CodeConfig,
    pub created_at: SimTime,
    pub deadline: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Packet {
    pub message_id: u64,
    pub index: u32,
    pub size_bits: f64,
    pub created_at: SimTime,
    /// Links traversed so far.
    pub hops: u32,
    pub previous_hop: Option<NodeId>,
}

impl Message {
    /// The `n` packets of this message, all stamped with its creation time.
    pub fn packets(&self, size_bits: f64) -> impl Iterator<Item = Packet> + '_ {
        (0..self.code.n() as u32).map(move |index| Packet {
            message_id: self.id,
            index,
            size_bits,
            created_at: self.created_at,
            hops: 0,
            previous_hop: None,
        })
    }
}

/// Poisson message source: exponential inter-message gaps.
#[derive(Clone, Debug)]
pub struct MessageSource {
    gap: Exponential,
    stream: RngStream,
    next_id: u64,
}

impl MessageSource {
    pub fn new(rate: f64, stream: RngStream) -> Result<Self, TransportError> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(TransportError::BadRate(rate));
        }
        Ok(MessageSource {
            gap: Exponential::new(1.0 / rate).map_err(|_| TransportError::BadRate(rate))?,
            stream,
            next_id: 0,
        })
    }

    /// Time until the next message.
    pub fn next_gap(&mut self) -> f64 {
        self.gap.sample(&mut self.stream)
    }

    pub fn next_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }
}

/// Creation times of all messages in `[0, horizon)`. The first message
/// arrives one exponential gap after time zero.
pub fn generate_message_stream(
    rate: f64,
    horizon: SimTime,
    stream: RngStream,
) -> Result<Vec<SimTime>, TransportError> {
    let mut src = MessageSource::new(rate, stream)?;
    let mut times = Vec::new();
    let mut t = src.next_gap();
    while t < horizon.seconds() {
        times.push(SimTime::new(t).expect("finite positive time"));
        t += src.next_gap();
    }
    Ok(times)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompletedMessage {
    pub message_id: u64,
    pub delay: f64,
    pub violated: bool,
    pub completed_at: SimTime,
    pub hops_of_kth: u32,
}

/// What the receiver did with an arriving packet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Arrival {
    /// Counted towards the message, which is still incomplete.
    Counted,
    /// The k-th distinct index: the message is now complete.
    Completed(CompletedMessage),
    /// Arrived after completion, or repeated an index already seen.
    Surplus,
}

#[derive(Clone, Debug)]
struct Tracked {
    created_at: SimTime,
    arrived: u32,
    dropped: u32,
    completed: Option<CompletedMessage>,
    failed: bool,
}

/// Receiver-side reconstruction state for every message of a run.
///
/// Message ids are dense and assigned in creation order.
#[derive(Clone, Debug)]
pub struct ReceiverState {
    code: CodeConfig,
    deadline: f64,
    words: usize,
    seen: Vec<u64>,
    messages: Vec<Tracked>,
    surplus: u64,
    completions: u64,
}

impl ReceiverState {
    pub fn new(code: CodeConfig, deadline: f64) -> Result<Self, TransportError> {
        if !(deadline.is_finite() && deadline > 0.0) {
            return Err(TransportError::BadDeadline(deadline));
        }
        Ok(ReceiverState {
            code,
            deadline,
            words: code.n().div_ceil(64),
            seen: Vec::new(),
            messages: Vec::new(),
            surplus: 0,
            completions: 0,
        })
    }

    pub fn code(&self) -> CodeConfig {
        self.code
    }

    pub fn deadline(&self) -> f64 {
        self.deadline
    }

    /// Registers a newly created message and returns its id.
    pub fn open(&mut self, created_at: SimTime) -> u64 {
        let id = self.messages.len() as u64;
        self.messages.push(Tracked {
            created_at,
            arrived: 0,
            dropped: 0,
            completed: None,
            failed: false,
        });
        self.seen.extend(std::iter::repeat_n(0, self.words));
        id
    }

    pub fn on_packet_arrival(
        &mut self,
        packet: &Packet,
        now: SimTime,
    ) -> Result<Arrival, TransportError> {
        let n = self.code.n();
        if packet.index as usize >= n {
            return Err(TransportError::BadIndex {
                index: packet.index,
                n,
            });
        }
        let msg = self
            .messages
            .get_mut(packet.message_id as usize)
            .ok_or(TransportError::UnknownMessage(packet.message_id))?;
        let word = packet.message_id as usize * self.words + packet.index as usize / 64;
        let bit = 1u64 << (packet.index % 64);
        if msg.completed.is_some() || self.seen[word] & bit != 0 {
            self.surplus += 1;
            return Ok(Arrival::Surplus);
        }
        self.seen[word] |= bit;
        msg.arrived += 1;
        if msg.arrived as usize == self.code.k() {
            let delay = now.seconds() - msg.created_at.seconds();
            let done = CompletedMessage {
                message_id: packet.message_id,
                delay,
                violated: delay > self.deadline,
                completed_at: now,
                hops_of_kth: packet.hops,
            };
            msg.completed = Some(done);
            self.completions += 1;
            Ok(Arrival::Completed(done))
        } else {
            Ok(Arrival::Counted)
        }
    }

    /// Records a dropped packet. Returns true when this drop makes the
    /// message impossible to complete.
    pub fn on_packet_dropped(&mut self, message_id: u64) -> Result<bool, TransportError> {
        let (k, n) = (self.code.k(), self.code.n());
        let msg = self
            .messages
            .get_mut(message_id as usize)
            .ok_or(TransportError::UnknownMessage(message_id))?;
        msg.dropped += 1;
        if msg.completed.is_none() && !msg.failed && n - (msg.dropped as usize) < k {
            msg.failed = true;
            return Ok(true);
        }
        Ok(false)
    }

    pub fn surplus(&self) -> u64 {
        self.surplus
    }

    pub fn completions(&self) -> u64 {
        self.completions
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn created_at(&self, id: u64) -> Option<SimTime> {
        self.messages.get(id as usize).map(|m| m.created_at)
    }

    pub fn completion(&self, id: u64) -> Option<CompletedMessage> {
        self.messages.get(id as usize).and_then(|m| m.completed)
    }

    pub fn is_failed(&self, id: u64) -> bool {
        self.messages.get(id as usize).is_some_and(|m| m.failed)
    }
}

/// Monte Carlo estimate of the mean k-th smallest of `n` i.i.d. exponential
/// delays with mean `t`: the completion time of a k-of-n message whose
/// packets travel independent paths.
pub fn kth_order_statistic_mean<R: Rng + ?Sized>(
    code: CodeConfig,
    t: f64,
    trials: u64,
    rng: &mut R,
) -> f64 {
    let exp = Exponential::new(t).expect("positive mean");
    let (k, n) = (code.k(), code.n());
    let mut buf = vec![0.0f64; n];
    let mut sum = 0.0;
    for _ in 0..trials {
        for x in buf.iter_mut() {
            *x = exp.sample(rng);
        }
        let (_, kth, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
        sum += *kth;
    }
    sum / trials as f64
}
