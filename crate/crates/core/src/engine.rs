//! Discrete-event core: a time-ordered event calendar with a monotone clock,
//! plus the named random streams every stochastic quantity is drawn from.
//!
//! Events at equal timestamps dispatch in insertion order, so a run is a pure
//! function of its inputs. Random streams are derived from one master seed
//! and a label; two streams with different labels never share state, which
//! lets paired experiments reuse exactly the draws they have in common.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::distr::Open01;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid simulation time {0}")]
    InvalidTime(f64),
    #[error("event scheduled in the past: t={requested} < clock {clock}")]
    ScheduledInPast { requested: f64, clock: f64 },
    #[error("cannot run backwards: until={until} < clock {clock}")]
    RunBackwards { until: f64, clock: f64 },
    #[error("exponential mean must be positive and finite, got {0}")]
    InvalidMean(f64),
}

/// A point on the simulation time axis, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    pub fn new(seconds: f64) -> Result<Self, EngineError> {
        if seconds.is_finite() && seconds >= 0.0 {
            Ok(SimTime(seconds))
        } else {
            Err(EngineError::InvalidTime(seconds))
        }
    }

    #[inline]
    pub fn seconds(self) -> f64 {
        self.0
    }
}

impl Eq for SimTime {}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.0)
    }
}

/// Identifies a scheduled event by its position in the dispatch order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct EventHandle {
    pub time: SimTime,
    pub seq: u64,
}

/// An event taken off the calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct Event<E> {
    pub time: SimTime,
    pub seq: u64,
    pub payload: E,
}

impl<E> Event<E> {
    pub fn handle(&self) -> EventHandle {
        EventHandle {
            time: self.time,
            seq: self.seq,
        }
    }
}

struct Entry<E> {
    time: SimTime,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // Reversed so that BinaryHeap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Event calendar and simulation clock.
pub struct Scheduler<E> {
    calendar: BinaryHeap<Entry<E>>,
    now: SimTime,
    next_seq: u64,
    dispatched: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            calendar: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            dispatched: 0,
        }
    }

    #[inline]
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.calendar.len()
    }

    /// Total events dispatched since construction.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn schedule(&mut self, time: SimTime, payload: E) -> Result<EventHandle, EngineError> {
        if time < self.now {
            return Err(EngineError::ScheduledInPast {
                requested: time.seconds(),
                clock: self.now.seconds(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.calendar.push(Entry { time, seq, payload });
        Ok(EventHandle { time, seq })
    }

    /// Schedules `payload` at `now + delay`.
    pub fn schedule_in(&mut self, delay: f64, payload: E) -> Result<EventHandle, EngineError> {
        let time = SimTime::new(self.now.seconds() + delay)?;
        self.schedule(time, payload)
    }

    /// Removes the next event if it is due no later than `until`, advancing
    /// the clock to its timestamp.
    pub fn pop_until(&mut self, until: SimTime) -> Option<Event<E>> {
        match self.calendar.peek() {
            Some(head) if head.time <= until => {
                let Entry { time, seq, payload } = self.calendar.pop()?;
                self.now = time;
                self.dispatched += 1;
                Some(Event { time, seq, payload })
            }
            _ => None,
        }
    }

    /// Dispatches every event with `time <= until` through `handler` and
    /// leaves the clock at `until`. Returns the number of dispatched events.
    pub fn run<F, Err>(&mut self, until: SimTime, mut handler: F) -> Result<u64, Err>
    where
        F: FnMut(&mut Self, Event<E>) -> Result<(), Err>,
        Err: From<EngineError>,
    {
        if until < self.now {
            return Err(EngineError::RunBackwards {
                until: until.seconds(),
                clock: self.now.seconds(),
            }
            .into());
        }
        let mut count = 0;
        while let Some(event) = self.pop_until(until) {
            handler(self, event)?;
            count += 1;
        }
        self.now = until;
        Ok(count)
    }
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a, then mixed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h)
}

/// Derives a child seed from a parent seed and a list of integer coordinates.
pub fn derive_seed(seed: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(mix64(seed ^ GOLDEN), |h, &c| {
        mix64(h ^ c.wrapping_mul(GOLDEN).wrapping_add(0x632b_e59b_d9b4_e019))
    })
}

/// A named, reproducible random stream.
///
/// The sequential generator is ChaCha8 seeded from `(label, seed)`. For
/// per-entity draws that must not depend on how many other entities exist,
/// [`RngStream::keyed`] hands out a counter-based generator addressed by
/// integer coordinates instead.
#[derive(Clone)]
pub struct RngStream {
    label: String,
    seed: u64,
    key: u64,
    rng: ChaCha8Rng,
}

impl fmt::Debug for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RngStream")
            .field("label", &self.label)
            .field("seed", &self.seed)
            .finish()
    }
}

impl RngStream {
    pub fn new(label: impl Into<String>, seed: u64) -> Self {
        let label = label.into();
        let key = mix64(label_hash(&label) ^ mix64(seed.wrapping_add(GOLDEN)));
        RngStream {
            rng: ChaCha8Rng::seed_from_u64(key),
            label,
            seed,
            key,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Counter-based generator for the entity at `coords` within this stream.
    /// Independent of any draws taken from the sequential generator.
    #[inline]
    pub fn keyed(&self, coords: [u64; 3]) -> KeyedRng {
        let mut h = self.key;
        for c in coords {
            h = mix64(h ^ c.wrapping_mul(GOLDEN).wrapping_add(0x632b_e59b_d9b4_e019));
        }
        KeyedRng { state: h }
    }

    /// A uniform draw on the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        self.rng.sample(Open01)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// SplitMix64 sequence started from a hashed key.
#[derive(Clone, Debug)]
pub struct KeyedRng {
    state: u64,
}

impl RngCore for KeyedRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        rand::rand_core::impls::fill_bytes_via_next(self, dst)
    }
}

/// Exponential distribution parameterised by its mean, sampled by inversion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exponential {
    mean: f64,
}

impl Exponential {
    pub fn new(mean: f64) -> Result<Self, EngineError> {
        if mean.is_finite() && mean > 0.0 {
            Ok(Exponential { mean })
        } else {
            Err(EngineError::InvalidMean(mean))
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Always strictly positive: the uniform is drawn from (0, 1).
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        -self.mean * u.ln()
    }
}

pub fn sample_exponential<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<f64, EngineError> {
    Ok(Exponential::new(mean)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: f64) -> SimTime {
        SimTime::new(s).unwrap()
    }

    #[test]
    fn first_event_on_empty_calendar_dispatches_first() {
        let mut s = Scheduler::new();
        s.schedule(t(0.0), "gen").unwrap();
        let ev = s.pop_until(t(1.0)).unwrap();
        assert_eq!(ev.payload, "gen");
        assert_eq!(ev.seq, 0);
    }

    #[test]
    fn equal_times_dispatch_in_insertion_order() {
        let mut s = Scheduler::new();
        s.schedule(t(1.0), 'A').unwrap();
        s.schedule(t(1.0), 'B').unwrap();
        let mut order = Vec::new();
        s.run::<_, EngineError>(t(2.0), |_, ev| {
            order.push(ev.payload);
            Ok(())
        })
        .unwrap();
        assert_eq!(order, vec!['A', 'B']);
    }

    #[test]
    fn scheduling_in_the_past_fails() {
        let mut s = Scheduler::new();
        s.run::<_, EngineError>(t(0.7), |_, _: Event<()>| Ok(()))
            .unwrap();
        assert!(matches!(
            s.schedule(t(0.5), ()),
            Err(EngineError::ScheduledInPast { .. })
        ));
    }

    #[test]
    fn run_on_empty_calendar_advances_clock() {
        let mut s: Scheduler<()> = Scheduler::new();
        let n = s.run::<_, EngineError>(t(10.0), |_, _| Ok(())).unwrap();
        assert_eq!(n, 0);
        assert_eq!(s.now(), t(10.0));
    }

    #[test]
    fn run_stops_at_horizon() {
        let mut s = Scheduler::new();
        for x in [1.0, 2.0, 3.0] {
            s.schedule(t(x), x).unwrap();
        }
        let n = s.run::<_, EngineError>(t(2.5), |_, _| Ok(())).unwrap();
        assert_eq!(n, 2);
        assert_eq!(s.pending(), 1);
        assert_eq!(s.now(), t(2.5));
        assert!(s.run::<_, EngineError>(t(1.0), |_, _| Ok(())).is_err());
    }

    #[test]
    fn handlers_can_schedule_follow_ups() {
        let mut s = Scheduler::new();
        s.schedule(t(0.0), 0u32).unwrap();
        let mut seen = Vec::new();
        s.run::<_, EngineError>(t(5.0), |s, ev| {
            seen.push((ev.time.seconds(), ev.payload));
            if ev.payload < 3 {
                s.schedule_in(1.0, ev.payload + 1)?;
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![(0.0, 0), (1.0, 1), (2.0, 2), (3.0, 3)]);
    }

    #[test]
    fn sim_time_rejects_nan_and_negative() {
        assert!(SimTime::new(f64::NAN).is_err());
        assert!(SimTime::new(-1.0).is_err());
        assert!(SimTime::new(f64::INFINITY).is_err());
    }

    #[test]
    fn exponential_rejects_bad_mean() {
        let mut r = RngStream::new("x", 1);
        assert!(sample_exponential(0.0, &mut r).is_err());
        assert!(sample_exponential(-1.0, &mut r).is_err());
        assert!(sample_exponential(f64::NAN, &mut r).is_err());
    }

    #[test]
    fn same_label_and_seed_repeat() {
        let mut a = RngStream::new("service:node7", 42);
        let mut b = RngStream::new("service:node7", 42);
        let xs: Vec<f64> = (0..100)
            .map(|_| sample_exponential(1.0, &mut a).unwrap())
            .collect();
        let ys: Vec<f64> = (0..100)
            .map(|_| sample_exponential(1.0, &mut b).unwrap())
            .collect();
        assert_eq!(xs, ys);
        let mut c = RngStream::new("routing", 42);
        assert_ne!(a.next_u64(), c.next_u64());
    }

    #[test]
    fn keyed_draws_ignore_sequential_state() {
        let mut a = RngStream::new("links", 9);
        let before = a.keyed([1, 2, 3]).next_u64();
        a.next_u64();
        assert_eq!(before, a.keyed([1, 2, 3]).next_u64());
        assert_ne!(before, a.keyed([1, 2, 4]).next_u64());
    }
}
