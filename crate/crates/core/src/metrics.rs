//! Per-run statistics: message delay moments, deadline violations,
//! delivered throughput and the counters that make a run auditable.

use thiserror::Error;

use crate::engine::SimTime;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("cannot merge an empty list of runs")]
    EmptyMerge,
    #[error("measurement interval must be positive, got {0}")]
    BadInterval(f64),
}

/// Single-pass mean and sample variance (Welford), mergeable across
/// partitions with Chan's update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n1 = self.count as f64;
        let n2 = other.count as f64;
        let n = n1 + n2;
        let delta = other.mean - self.mean;
        self.mean += delta * n2 / n;
        self.m2 += other.m2 + delta * delta * n1 * n2 / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Zero when empty.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Bessel-corrected; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::new();
        for x in iter {
            s.push(x);
        }
        s
    }
}

/// Time integral of a piecewise-constant signal, restricted to
/// `[window_start, ∞)`.
#[derive(Clone, Copy, Debug)]
pub struct TimeAverage {
    window_start: f64,
    last_time: f64,
    value: f64,
    integral: f64,
}

impl TimeAverage {
    pub fn new(window_start: f64) -> Self {
        TimeAverage {
            window_start,
            last_time: 0.0,
            value: 0.0,
            integral: 0.0,
        }
    }

    #[inline]
    pub fn set(&mut self, now: f64, value: f64) {
        self.advance(now);
        self.value = value;
    }

    #[inline]
    fn advance(&mut self, now: f64) {
        let from = self.last_time.max(self.window_start);
        if now > from {
            self.integral += self.value * (now - from);
        }
        self.last_time = now;
    }

    /// Average over `[window_start, end]`.
    pub fn average(&self, end: f64) -> f64 {
        let mut copy = *self;
        copy.advance(end);
        let span = end - self.window_start;
        if span > 0.0 {
            copy.integral / span
        } else {
            0.0
        }
    }

    pub fn current(&self) -> f64 {
        self.value
    }
}

/// What happened to one message by the end of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    /// Too many of its packets were dropped to ever reach `k`.
    Failed,
    /// Still in progress at the horizon.
    Unfinished,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MessageRecord {
    pub message_id: u64,
    pub created_at: SimTime,
    pub completed_at: Option<SimTime>,
    pub outcome: Outcome,
    pub violated: bool,
    pub hops_of_kth: u32,
}

impl MessageRecord {
    pub fn delay(&self) -> Option<f64> {
        self.completed_at
            .map(|c| c.seconds() - self.created_at.seconds())
    }
}

/// Summary of one simulation run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub messages_generated: u64,
    pub messages_completed: u64,
    pub messages_unfinished: u64,
    pub messages_failed: u64,
    pub delay_mean: f64,
    pub delay_variance: f64,
    pub delay_count: u64,
    pub violations: u64,
    pub violation_counted: u64,
    pub violation_probability: f64,
    /// Information bits of messages completed inside the measurement window.
    pub delivered_throughput: f64,
    /// All packet bits delivered to the sink inside the measurement window,
    /// surplus packets included.
    pub delivered_total_throughput: f64,
    pub packets_generated: u64,
    pub packets_delivered: u64,
    pub packets_dropped: u64,
    pub packets_in_flight: u64,
    pub surplus_packets: u64,
    pub warmup_excluded: u64,
    /// Busy fraction of the busiest node inside the measurement window.
    pub bottleneck_utilization: f64,
    /// Largest time-averaged number of packets at any node.
    pub max_mean_occupancy: f64,
    /// Hash of the ordered message creation times.
    pub creation_fingerprint: u64,
}

impl RunMetrics {
    pub fn empty() -> Self {
        RunMetrics {
            messages_generated: 0,
            messages_completed: 0,
            messages_unfinished: 0,
            messages_failed: 0,
            delay_mean: 0.0,
            delay_variance: 0.0,
            delay_count: 0,
            violations: 0,
            violation_counted: 0,
            violation_probability: 0.0,
            delivered_throughput: 0.0,
            delivered_total_throughput: 0.0,
            packets_generated: 0,
            packets_delivered: 0,
            packets_dropped: 0,
            packets_in_flight: 0,
            surplus_packets: 0,
            warmup_excluded: 0,
            bottleneck_utilization: 0.0,
            max_mean_occupancy: 0.0,
            creation_fingerprint: 0,
        }
    }

    /// Message and packet bookkeeping both balance.
    pub fn is_conserved(&self) -> bool {
        self.messages_generated == self.messages_completed + self.messages_unfinished
            && self.packets_generated
                == self.packets_in_flight + self.packets_delivered + self.packets_dropped
    }
}

/// Accumulates message records for one run.
///
/// Records created before `warmup_end` are counted in `warmup_excluded` and
/// otherwise ignored. Unfinished messages count as violations only if they
/// were created at least `deadline` before the horizon; later ones are left
/// out of the violation ratio.
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    warmup_end: f64,
    horizon: f64,
    deadline: f64,
    delays: RunningStats,
    generated: u64,
    completed: u64,
    unfinished: u64,
    failed: u64,
    violations: u64,
    violation_counted: u64,
    warmup_excluded: u64,
}

impl MetricsAccumulator {
    pub fn new(warmup_end: f64, horizon: f64, deadline: f64) -> Self {
        MetricsAccumulator {
            warmup_end,
            horizon,
            deadline,
            delays: RunningStats::new(),
            generated: 0,
            completed: 0,
            unfinished: 0,
            failed: 0,
            violations: 0,
            violation_counted: 0,
            warmup_excluded: 0,
        }
    }

    pub fn record(&mut self, record: &MessageRecord) {
        self.generated += 1;
        match record.outcome {
            Outcome::Completed => self.completed += 1,
            Outcome::Failed => {
                self.unfinished += 1;
                self.failed += 1;
            }
            Outcome::Unfinished => self.unfinished += 1,
        }
        if record.created_at.seconds() < self.warmup_end {
            self.warmup_excluded += 1;
            return;
        }
        let counted = match record.outcome {
            Outcome::Completed => {
                if let Some(d) = record.delay() {
                    self.delays.push(d);
                }
                true
            }
            Outcome::Failed => true,
            Outcome::Unfinished => record.created_at.seconds() < self.horizon - self.deadline,
        };
        if counted {
            self.violation_counted += 1;
            if record.violated {
                self.violations += 1;
            }
        }
    }

    pub fn delays(&self) -> &RunningStats {
        &self.delays
    }

    /// Fills the message-level fields of `out`.
    pub fn finish_into(&self, out: &mut RunMetrics) {
        out.messages_generated = self.generated;
        out.messages_completed = self.completed;
        out.messages_unfinished = self.unfinished;
        out.messages_failed = self.failed;
        out.delay_mean = self.delays.mean();
        out.delay_variance = self.delays.variance();
        out.delay_count = self.delays.count();
        out.violations = self.violations;
        out.violation_counted = self.violation_counted;
        out.violation_probability = if self.violation_counted == 0 {
            0.0
        } else {
            self.violations as f64 / self.violation_counted as f64
        };
        out.warmup_excluded = self.warmup_excluded;
    }
}

/// Information throughput: only the `k` information packets of each
/// completed message count.
pub fn delivered_throughput(
    completed: u64,
    k: usize,
    packet_size_bits: f64,
    measured_interval: f64,
) -> Result<f64, MetricsError> {
    if measured_interval.is_nan() || measured_interval <= 0.0 {
        return Err(MetricsError::BadInterval(measured_interval));
    }
    Ok(completed as f64 * k as f64 * packet_size_bits / measured_interval)
}

/// Replications merged in index order.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateMetrics {
    pub replications: usize,
    pub delay_mean: f64,
    pub delay_variance: f64,
    /// 95% normal-approximation half-width on `delay_mean`.
    pub delay_half_width: f64,
    pub violation_probability: f64,
    pub delivered_throughput: f64,
    pub delivered_total_throughput: f64,
    pub bottleneck_utilization: f64,
    pub max_mean_occupancy: f64,
    pub messages_generated: u64,
    pub messages_completed: u64,
    pub messages_unfinished: u64,
    pub packets_dropped: u64,
    pub surplus_packets: u64,
    pub runs: Vec<RunMetrics>,
}

const Z_95: f64 = 1.959_963_984_540_054;

/// Pools replications in the given order.
///
/// With one run the half-width comes from the within-run variance; with
/// several it comes from the spread of the per-replication means.
pub fn merge(runs: &[RunMetrics]) -> Result<AggregateMetrics, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::EmptyMerge);
    }
    let mut pooled = RunningStats::new();
    let mut violations = 0u64;
    let mut counted = 0u64;
    for r in runs {
        let m2 = r.delay_variance * r.delay_count.saturating_sub(1) as f64;
        pooled.merge(&RunningStats {
            count: r.delay_count,
            mean: r.delay_mean,
            m2,
        });
        violations += r.violations;
        counted += r.violation_counted;
    }
    let reps = runs.len();
    let delay_half_width = if reps == 1 {
        let r = &runs[0];
        if r.delay_count > 0 {
            Z_95 * (r.delay_variance / r.delay_count as f64).sqrt()
        } else {
            0.0
        }
    } else {
        let means: RunningStats = runs.iter().map(|r| r.delay_mean).collect();
        Z_95 * (means.variance() / reps as f64).sqrt()
    };
    let avg = |f: fn(&RunMetrics) -> f64| runs.iter().map(f).sum::<f64>() / reps as f64;
    Ok(AggregateMetrics {
        replications: reps,
        delay_mean: pooled.mean(),
        delay_variance: pooled.variance(),
        delay_half_width,
        violation_probability: if counted == 0 {
            0.0
        } else {
            violations as f64 / counted as f64
        },
        delivered_throughput: avg(|r| r.delivered_throughput),
        delivered_total_throughput: avg(|r| r.delivered_total_throughput),
        bottleneck_utilization: avg(|r| r.bottleneck_utilization),
        max_mean_occupancy: runs
            .iter()
            .map(|r| r.max_mean_occupancy)
            .fold(0.0, f64::max),
        messages_generated: runs.iter().map(|r| r.messages_generated).sum(),
        messages_completed: runs.iter().map(|r| r.messages_completed).sum(),
        messages_unfinished: runs.iter().map(|r| r.messages_unfinished).sum(),
        packets_dropped: runs.iter().map(|r| r.packets_dropped).sum(),
        surplus_packets: runs.iter().map(|r| r.surplus_packets).sum(),
        runs: runs.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Exponential, RngStream};

    fn rec(id: u64, created: f64, delay: Option<f64>, deadline: f64) -> MessageRecord {
        MessageRecord {
            message_id: id,
            created_at: SimTime::new(created).unwrap(),
            completed_at: delay.map(|d| SimTime::new(created + d).unwrap()),
            outcome: if delay.is_some() {
                Outcome::Completed
            } else {
                Outcome::Unfinished
            },
            violated: delay.is_none_or(|d| d > deadline),
            hops_of_kth: 0,
        }
    }

    #[test]
    fn constant_delays_have_zero_variance() {
        let mut acc = MetricsAccumulator::new(0.0, 100.0, 10.0);
        for i in 0..3 {
            acc.record(&rec(i, 1.0, Some(1.0), 10.0));
        }
        assert_eq!(acc.delays().mean(), 1.0);
        assert_eq!(acc.delays().variance(), 0.0);
    }

    #[test]
    fn two_point_sample_variance() {
        let s: RunningStats = [1.0, 3.0].into_iter().collect();
        assert_eq!(s.mean(), 2.0);
        assert_eq!(s.variance(), 2.0);
    }

    #[test]
    fn exponential_moments() {
        let exp = Exponential::new(0.25).unwrap();
        let mut rng = RngStream::new("moments", 3);
        let s: RunningStats = (0..1_000_000).map(|_| exp.sample(&mut rng)).collect();
        assert!((s.mean() / 0.25 - 1.0).abs() < 0.01, "{}", s.mean());
        assert!(
            (s.variance() / 0.0625 - 1.0).abs() < 0.03,
            "{}",
            s.variance()
        );
    }

    #[test]
    fn streaming_matches_two_pass_over_wide_range() {
        let mut rng = RngStream::new("wide", 11);
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| 10f64.powf(rng.uniform_open() * 6.0 - 3.0) + 1e3)
            .collect();
        let s: RunningStats = xs.iter().copied().collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!(((s.mean() - mean) / mean).abs() < 1e-9);
        assert!(((s.variance() - var) / var).abs() < 1e-9);
    }

    #[test]
    fn chan_merge_equals_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin() * 5.0 + 7.0).collect();
        let whole: RunningStats = xs.iter().copied().collect();
        let mut a: RunningStats = xs[..333].iter().copied().collect();
        let b: RunningStats = xs[333..].iter().copied().collect();
        a.merge(&b);
        assert!((a.mean() - whole.mean()).abs() < 1e-12);
        assert!((a.variance() - whole.variance()).abs() < 1e-10);
    }

    #[test]
    fn warmup_records_are_excluded() {
        let mut acc = MetricsAccumulator::new(10.0, 100.0, 1.0);
        acc.record(&rec(0, 5.0, Some(3.0), 1.0));
        acc.record(&rec(1, 20.0, Some(0.5), 1.0));
        let mut m = RunMetrics::empty();
        acc.finish_into(&mut m);
        assert_eq!(m.warmup_excluded, 1);
        assert_eq!(m.delay_count, 1);
        assert_eq!(m.delay_mean, 0.5);
        assert_eq!(m.violation_probability, 0.0);
        assert_eq!(m.messages_generated, 2);
    }

    #[test]
    fn late_unfinished_messages_are_not_counted() {
        let mut acc = MetricsAccumulator::new(0.0, 100.0, 0.3);
        acc.record(&rec(0, 50.0, Some(0.1), 0.3));
        acc.record(&rec(1, 60.0, None, 0.3)); // old enough: violation
        acc.record(&rec(2, 99.9, None, 0.3)); // too young: excluded
        let mut m = RunMetrics::empty();
        acc.finish_into(&mut m);
        assert_eq!(m.violation_counted, 2);
        assert_eq!(m.violations, 1);
        assert_eq!(m.violation_probability, 0.5);
        assert_eq!(m.messages_unfinished, 2);
    }

    #[test]
    fn throughput_arithmetic() {
        assert_eq!(delivered_throughput(1000, 8, 1000.0, 1.0).unwrap(), 8e6);
        assert_eq!(delivered_throughput(0, 8, 1000.0, 1.0).unwrap(), 0.0);
        assert!(delivered_throughput(1, 8, 1000.0, 0.0).is_err());
    }

    fn run_with(mean: f64, var: f64, count: u64) -> RunMetrics {
        RunMetrics {
            delay_mean: mean,
            delay_variance: var,
            delay_count: count,
            ..RunMetrics::empty()
        }
    }

    #[test]
    fn merge_single_run() {
        let r = run_with(2.0, 4.0, 100);
        let agg = merge(std::slice::from_ref(&r)).unwrap();
        assert_eq!(agg.delay_mean, 2.0);
        assert!((agg.delay_variance - 4.0).abs() < 1e-12);
        assert!((agg.delay_half_width - Z_95 * 0.2).abs() < 1e-12);
        assert!(merge(&[]).is_err());
    }

    #[test]
    fn merge_identical_runs() {
        let r = run_with(0.25, 0.01, 50);
        let agg = merge(&[r.clone(), r]).unwrap();
        assert!((agg.delay_mean - 0.25).abs() < 1e-15);
        assert_eq!(agg.delay_half_width, 0.0);
    }

    #[test]
    fn time_average_respects_window() {
        let mut avg = TimeAverage::new(1.0);
        avg.set(0.0, 1.0);
        avg.set(2.0, 0.0);
        avg.set(3.0, 2.0);
        // [1,2]: 1, [2,3]: 0, [3,5]: 2  => 5/4
        assert!((avg.average(5.0) - 1.25).abs() < 1e-12);
    }
}
