//! Experiment orchestration: paired uncoded/coded runs under common random
//! numbers, load and code-rate sweeps, and replication management.

mod sim;

use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;

use crate::analytics;
use crate::engine::{derive_seed, EngineError, RngStream};
use crate::metrics::{merge, AggregateMetrics, MessageRecord, MetricsError, RunMetrics};
use crate::network::{
    build_grid, parse_topology, perturb, LinkParams, RoutingPolicy, Topology, TopologyError,
    DEFAULT_SERVICE_MEAN_S,
};
use crate::transport::{CodeConfig, TransportError};

pub use sim::{run as run_spec, RunOutput, RunSpec};

pub const DEFAULT_PACKET_BITS: f64 = 1000.0;
pub const DEFAULT_DEADLINE_S: f64 = 0.3;
pub const DEFAULT_HORIZON_S: f64 = 200.0;
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.1;
pub const DEFAULT_REPLICATIONS: usize = 5;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_QUEUE_ALARM: f64 = 100.0;
/// Default ttl is this many network diameters.
pub const TTL_DIAMETERS: u32 = 64;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid value for `{key}`: {message}")]
    Config { key: &'static str, message: String },
    #[error("pairing requires redundancy (n > k), got k={k}, n={n}")]
    NoRedundancy { k: usize, n: usize },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("reading topology file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("internal invariant violated: {0}")]
    Invariant(&'static str),
}

impl HarnessError {
    fn config(key: &'static str, message: impl Into<String>) -> Self {
        HarnessError::Config {
            key,
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TopologySource {
    Grid {
        rows: usize,
        cols: usize,
        removal_fraction: f64,
    },
    File(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoutingKind {
    UniformRandom,
    RandomWalkNoBacktrack,
    RandomShortestPath,
}

impl RoutingKind {
    pub fn name(&self) -> &'static str {
        match self {
            RoutingKind::UniformRandom => "uniform",
            RoutingKind::RandomWalkNoBacktrack => "no-backtrack",
            RoutingKind::RandomShortestPath => "shortest-path",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "uniform" => Some(RoutingKind::UniformRandom),
            "no-backtrack" => Some(RoutingKind::RandomWalkNoBacktrack),
            "shortest-path" => Some(RoutingKind::RandomShortestPath),
            _ => None,
        }
    }
}

/// Full description of an experiment. Every field has a default except the
/// code and the message rate(s).
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub topology: TopologySource,
    pub routing: RoutingKind,
    /// Hop budget for random-walk policies; `None` means 64 diameters.
    pub ttl: Option<u32>,
    pub link: LinkParams,
    pub service_mean_s: f64,
    pub packet_size_bits: f64,
    pub k: usize,
    pub n: usize,
    /// Values of `n` for a code-rate sweep.
    pub n_values: Vec<usize>,
    /// Message generation rates, messages/s. Single runs use the first.
    pub rates: Vec<f64>,
    pub deadline_s: f64,
    pub horizon_s: f64,
    pub warmup_fraction: f64,
    pub replications: usize,
    pub seed: u64,
    pub record_messages: bool,
    /// Time-averaged packets at a node above which a point is flagged as
    /// saturated.
    pub queue_alarm: f64,
}

impl ExperimentConfig {
    pub fn new(k: usize, n: usize, rate: f64) -> Self {
        ExperimentConfig {
            topology: TopologySource::Grid {
                rows: 4,
                cols: 4,
                removal_fraction: 0.2,
            },
            routing: RoutingKind::RandomWalkNoBacktrack,
            ttl: None,
            link: LinkParams::default(),
            service_mean_s: DEFAULT_SERVICE_MEAN_S,
            packet_size_bits: DEFAULT_PACKET_BITS,
            k,
            n,
            n_values: Vec::new(),
            rates: vec![rate],
            deadline_s: DEFAULT_DEADLINE_S,
            horizon_s: DEFAULT_HORIZON_S,
            warmup_fraction: DEFAULT_WARMUP_FRACTION,
            replications: DEFAULT_REPLICATIONS,
            seed: DEFAULT_SEED,
            record_messages: false,
            queue_alarm: DEFAULT_QUEUE_ALARM,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let pos = |key: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(HarnessError::config(
                    key,
                    format!("must be positive, got {v}"),
                ))
            }
        };
        if let TopologySource::Grid {
            rows,
            cols,
            removal_fraction,
        } = self.topology
        {
            if rows < 2 {
                return Err(HarnessError::config(
                    "rows",
                    format!("must be >= 2, got {rows}"),
                ));
            }
            if cols < 2 {
                return Err(HarnessError::config(
                    "cols",
                    format!("must be >= 2, got {cols}"),
                ));
            }
            if !(0.0..1.0).contains(&removal_fraction) {
                return Err(HarnessError::config(
                    "removal_fraction",
                    format!("must be in [0, 1), got {removal_fraction}"),
                ));
            }
        }
        if self.ttl == Some(0) {
            return Err(HarnessError::config("ttl", "must be positive"));
        }
        pos("service_mean_s", self.service_mean_s)?;
        pos("packet_size_bits", self.packet_size_bits)?;
        pos("deadline_s", self.deadline_s)?;
        if self.k == 0 {
            return Err(HarnessError::config("k", "must be at least 1"));
        }
        if self.n < self.k {
            return Err(HarnessError::config(
                "n",
                format!("must be >= k = {}, got {}", self.k, self.n),
            ));
        }
        if let Some(&bad) = self.n_values.iter().find(|&&n| n < self.k) {
            return Err(HarnessError::config(
                "n_values",
                format!("every entry must be >= k = {}, got {bad}", self.k),
            ));
        }
        if self.rates.is_empty() {
            return Err(HarnessError::config("rates", "at least one rate required"));
        }
        for &r in &self.rates {
            pos("rates", r)?;
        }
        if self.rates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(HarnessError::config("rates", "must be strictly ascending"));
        }
        if !(self.horizon_s.is_finite() && self.horizon_s >= 0.0) {
            return Err(HarnessError::config(
                "horizon_s",
                format!("must be non-negative, got {}", self.horizon_s),
            ));
        }
        if !(0.0..=0.5).contains(&self.warmup_fraction) {
            return Err(HarnessError::config(
                "warmup_fraction",
                format!("must be in [0, 0.5], got {}", self.warmup_fraction),
            ));
        }
        if self.replications == 0 {
            return Err(HarnessError::config("replications", "must be at least 1"));
        }
        pos("queue_alarm", self.queue_alarm)?;
        Ok(())
    }

    pub fn code(&self) -> Result<CodeConfig, HarnessError> {
        Ok(CodeConfig::new(self.k, self.n)?)
    }

    pub fn rate(&self) -> f64 {
        self.rates[0]
    }

    pub fn replication_seed(&self, replication: usize) -> u64 {
        derive_seed(self.seed, &[replication as u64])
    }
}

/// Topology and routing policy resolved from a config.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub topology: Topology,
    pub policy: RoutingPolicy,
}

/// Validates the config and builds the topology. Perturbation draws from a
/// stream keyed by the master seed alone, so every replication and arm
/// shares one topology.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    config.validate()?;
    let topology = match &config.topology {
        TopologySource::Grid {
            rows,
            cols,
            removal_fraction,
        } => {
            let grid = build_grid(*rows, *cols, config.link)?;
            perturb(
                &grid,
                *removal_fraction,
                &mut RngStream::new("topology", config.seed),
            )
        }
        TopologySource::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
                path: path.clone(),
                source,
            })?;
            parse_topology(&text)?
        }
    };
    let diameter = topology.diameter();
    let ttl = config.ttl.unwrap_or(TTL_DIAMETERS * diameter);
    if config.routing != RoutingKind::RandomShortestPath && ttl < diameter {
        return Err(HarnessError::config(
            "ttl",
            format!("must be at least the network diameter {diameter}, got {ttl}"),
        ));
    }
    let policy = match config.routing {
        RoutingKind::UniformRandom => RoutingPolicy::UniformRandom { ttl },
        RoutingKind::RandomWalkNoBacktrack => RoutingPolicy::RandomWalkNoBacktrack { ttl },
        RoutingKind::RandomShortestPath => RoutingPolicy::RandomShortestPath,
    };
    Ok(Prepared { topology, policy })
}

fn spec_for(
    config: &ExperimentConfig,
    prepared: &Prepared,
    code: CodeConfig,
    rate: f64,
    replication: usize,
) -> RunSpec {
    RunSpec {
        code,
        rate,
        service_mean: config.service_mean_s,
        packet_size_bits: config.packet_size_bits,
        policy: prepared.policy,
        deadline: config.deadline_s,
        horizon: config.horizon_s,
        warmup_end: config.horizon_s * config.warmup_fraction,
        seed: config.replication_seed(replication),
        record_messages: config.record_messages,
    }
}

/// Runs replication `replication` of the config's first rate and `(k, n)`.
pub fn run_single(
    config: &ExperimentConfig,
    replication: usize,
) -> Result<RunMetrics, HarnessError> {
    let prepared = prepare(config)?;
    let spec = spec_for(
        config,
        &prepared,
        config.code()?,
        config.rate(),
        replication,
    );
    Ok(run_spec(&prepared.topology, &spec)?.metrics)
}

/// Thread pool sized by `TCODE_THREADS` (0 or unset = rayon default).
pub fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var("TCODE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

/// All replications of one arm, merged in replication order.
#[derive(Clone, Debug)]
pub struct ArmResult {
    pub code: CodeConfig,
    pub rate: f64,
    pub aggregate: AggregateMetrics,
    /// Per-replication message records, when recording is enabled.
    pub messages: Vec<Vec<MessageRecord>>,
}

fn run_arm(
    config: &ExperimentConfig,
    prepared: &Prepared,
    code: CodeConfig,
    rate: f64,
) -> Result<ArmResult, HarnessError> {
    let outputs = thread_pool().install(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|rep| {
                run_spec(
                    &prepared.topology,
                    &spec_for(config, prepared, code, rate, rep),
                )
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let runs: Vec<RunMetrics> = outputs.iter().map(|o| o.metrics.clone()).collect();
    Ok(ArmResult {
        code,
        rate,
        aggregate: merge(&runs)?,
        messages: outputs.into_iter().filter_map(|o| o.messages).collect(),
    })
}

/// All replications of the config's first rate and `(k, n)`.
pub fn simulate(config: &ExperimentConfig) -> Result<ArmResult, HarnessError> {
    let prepared = prepare(config)?;
    run_arm(config, &prepared, config.code()?, config.rate())
}

/// Message rates giving offered information rates of 1, 2, ..., 12 Mbps.
pub fn default_load_rates(config: &ExperimentConfig) -> Vec<f64> {
    let bits_per_message = config.k as f64 * config.packet_size_bits;
    (1..=12)
        .map(|mbps| f64::from(mbps) * 1e6 / bits_per_message)
        .collect()
}

/// Ratio `num / den`, undefined when the denominator is zero.
fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0 && num.is_finite() && den.is_finite()).then(|| num / den)
}

/// Uncoded and coded arms at one message rate. Every ratio is
/// uncoded over coded, so values above one favour coding (except for
/// throughput, where one means parity).
#[derive(Clone, Debug)]
pub struct PairedResult {
    pub rate: f64,
    pub uncoded: ArmResult,
    pub coded: ArmResult,
    pub delay_gain: Option<f64>,
    pub variance_ratio: Option<f64>,
    pub violation_ratio: Option<f64>,
    /// Information throughput, uncoded over coded.
    pub throughput_ratio: Option<f64>,
    /// Some node's time-averaged occupancy exceeded the alarm threshold.
    pub queue_growth: bool,
    /// Message creation times matched between the arms in every replication.
    pub arrivals_matched: bool,
}

impl PairedResult {
    fn from_arms(config: &ExperimentConfig, uncoded: ArmResult, coded: ArmResult) -> Self {
        let (u, c) = (&uncoded.aggregate, &coded.aggregate);
        let arrivals_matched = u
            .runs
            .iter()
            .zip(&c.runs)
            .all(|(a, b)| a.creation_fingerprint == b.creation_fingerprint);
        PairedResult {
            rate: uncoded.rate,
            delay_gain: ratio(u.delay_mean, c.delay_mean),
            variance_ratio: ratio(u.delay_variance, c.delay_variance),
            violation_ratio: ratio(u.violation_probability, c.violation_probability),
            throughput_ratio: ratio(u.delivered_throughput, c.delivered_throughput),
            queue_growth: u.max_mean_occupancy > config.queue_alarm
                || c.max_mean_occupancy > config.queue_alarm,
            arrivals_matched,
            uncoded,
            coded,
        }
    }

    /// Bottleneck busy fraction of the uncoded arm: the operational
    /// stand-in for the channel load of the closed-form model.
    pub fn rho_estimate(&self) -> f64 {
        self.uncoded.aggregate.bottleneck_utilization
    }
}

fn paired_at(
    config: &ExperimentConfig,
    prepared: &Prepared,
    rate: f64,
) -> Result<PairedResult, HarnessError> {
    let coded = config.code()?;
    if coded.is_uncoded() {
        return Err(HarnessError::NoRedundancy {
            k: config.k,
            n: config.n,
        });
    }
    let uncoded = CodeConfig::uncoded(config.k)?;
    let u = run_arm(config, prepared, uncoded, rate)?;
    let c = run_arm(config, prepared, coded, rate)?;
    Ok(PairedResult::from_arms(config, u, c))
}

/// Uncoded `(k, k)` against coded `(k, n)` at the config's first rate,
/// sharing the message-arrival stream in every replication.
pub fn run_paired(config: &ExperimentConfig) -> Result<PairedResult, HarnessError> {
    let prepared = prepare(config)?;
    paired_at(config, &prepared, config.rate())
}

/// One paired result per rate.
pub fn load_sweep(
    config: &ExperimentConfig,
    rates: &[f64],
) -> Result<Vec<PairedResult>, HarnessError> {
    let mut cfg = config.clone();
    cfg.rates = rates.to_vec();
    let prepared = prepare(&cfg)?;
    rates
        .iter()
        .map(|&r| paired_at(&cfg, &prepared, r))
        .collect()
}

#[derive(Clone, Debug)]
pub struct RateRow {
    pub n: usize,
    pub code_rate: f64,
    pub rho_estimate: f64,
    pub empirical_gain: Option<f64>,
    /// `None` when the code is infeasible at the estimated load.
    pub analytical_gain: Option<f64>,
    pub paired: PairedResult,
}

/// Empirical and closed-form gain for each `n` at the config's first rate.
/// The uncoded arm is simulated once and shared by every row.
pub fn rate_sweep(
    config: &ExperimentConfig,
    n_values: &[usize],
) -> Result<Vec<RateRow>, HarnessError> {
    let prepared = prepare(config)?;
    if let Some(&bad) = n_values.iter().find(|&&n| n < config.k) {
        return Err(HarnessError::config(
            "n_values",
            format!("every entry must be >= k = {}, got {bad}", config.k),
        ));
    }
    let rate = config.rate();
    let uncoded = run_arm(config, &prepared, CodeConfig::uncoded(config.k)?, rate)?;
    n_values
        .iter()
        .map(|&n| {
            let code = CodeConfig::new(config.k, n)?;
            let coded = if code.is_uncoded() {
                uncoded.clone()
            } else {
                run_arm(config, &prepared, code, rate)?
            };
            let paired = PairedResult::from_arms(config, uncoded.clone(), coded);
            let rho = paired.rho_estimate();
            Ok(RateRow {
                n,
                code_rate: code.rate(),
                rho_estimate: rho,
                empirical_gain: paired.delay_gain,
                analytical_gain: analytics::gain(rho, config.k, n).ok(),
                paired,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ExperimentConfig::new(8, 12, 100.0);
        c.validate().unwrap();
        assert_eq!(c.link.capacity_bps(), 10e6);
        assert_eq!(c.link.mean_delay_s(), 2e-3);
        assert_eq!(c.service_mean_s, 1e-4);
        assert_eq!(c.deadline_s, 0.3);
    }

    #[test]
    fn invalid_n_names_n() {
        let c = ExperimentConfig::new(8, 4, 100.0);
        match c.validate() {
            Err(HarnessError::Config { key, .. }) => assert_eq!(key, "n"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pairing_requires_redundancy() {
        let mut c = ExperimentConfig::new(4, 4, 10.0);
        c.horizon_s = 1.0;
        assert!(matches!(
            run_paired(&c),
            Err(HarnessError::NoRedundancy { .. })
        ));
    }

    #[test]
    fn zero_horizon_is_empty() {
        let mut c = ExperimentConfig::new(2, 3, 100.0);
        c.horizon_s = 0.0;
        let m = run_single(&c, 0).unwrap();
        assert_eq!(m.messages_generated, 0);
        assert_eq!(m.packets_generated, 0);
        assert!(m.is_conserved());
    }

    #[test]
    fn ttl_below_diameter_rejected() {
        let mut c = ExperimentConfig::new(2, 3, 100.0);
        c.ttl = Some(2);
        assert!(matches!(
            prepare(&c),
            Err(HarnessError::Config { key: "ttl", .. })
        ));
    }

    #[test]
    fn default_ttl_is_sixty_four_diameters() {
        let mut c = ExperimentConfig::new(2, 3, 100.0);
        c.topology = TopologySource::Grid {
            rows: 4,
            cols: 4,
            removal_fraction: 0.0,
        };
        let p = prepare(&c).unwrap();
        assert_eq!(p.policy, RoutingPolicy::RandomWalkNoBacktrack { ttl: 384 });
    }
}
