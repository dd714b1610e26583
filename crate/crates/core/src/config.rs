//! Line-oriented experiment config: `key = value` pairs under `[section]`
//! headers, `#` comment lines.
//!
//! ```text
//! [topology]
//! rows = 4
//! cols = 4
//! removal_fraction = 0.2
//! routing = no-backtrack
//!
//! [code]
//! k = 8
//! n = 12
//!
//! [traffic]
//! rate = 200
//! ```
//!
//! Unknown sections, unknown keys and repeated keys are errors. Everything
//! except `k`, `n` and `rate`/`rates` has a default.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::harness::{ExperimentConfig, HarnessError, RoutingKind, TopologySource};
use crate::network::LinkParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: {message}")]
    BadValue {
        line: usize,
        key: String,
        message: String,
    },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    /// The offending key, when there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Syntax { .. } => None,
            ConfigError::UnknownKey { key, .. }
            | ConfigError::DuplicateKey { key, .. }
            | ConfigError::BadValue { key, .. }
            | ConfigError::Invalid { key, .. } => Some(key),
            ConfigError::Missing(key) => Some(key),
        }
    }
}

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "topology",
        &[
            "rows",
            "cols",
            "removal_fraction",
            "file",
            "routing",
            "ttl",
            "service_mean_s",
        ],
    ),
    ("link", &["capacity_bps", "mean_delay_s"]),
    ("traffic", &["rate", "rates", "packet_size_bits"]),
    ("code", &["k", "n", "n_values"]),
    (
        "run",
        &[
            "deadline_s",
            "horizon_s",
            "warmup_fraction",
            "replications",
            "seed",
            "record_messages",
            "queue_alarm",
        ],
    ),
];

struct Entry {
    line: usize,
    value: String,
}

fn bad(line: usize, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, e: &Entry) -> Result<T, ConfigError> {
    e.value
        .parse::<T>()
        .map_err(|_| bad(e.line, key, format!("cannot parse `{}`", e.value)))
}

fn parse_list<T: std::str::FromStr>(key: &str, e: &Entry) -> Result<Vec<T>, ConfigError> {
    e.value
        .split(',')
        .map(|s| {
            s.trim().parse::<T>().map_err(|_| {
                bad(
                    e.line,
                    key,
                    format!("cannot parse list item `{}`", s.trim()),
                )
            })
        })
        .collect()
}

fn parse_bool(key: &str, e: &Entry) -> Result<bool, ConfigError> {
    match e.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(e.line, key, "expected `true` or `false`")),
    }
}

/// Parses and validates a config. Relative topology file paths are
/// returned as written.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut section: Option<&'static str> = None;
    let mut entries: BTreeMap<&'static str, Entry> = BTreeMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("malformed section header `{trimmed}`"),
            })?;
            let name = name.trim();
            section = Some(
                SECTIONS
                    .iter()
                    .find(|(s, _)| *s == name)
                    .map(|(s, _)| *s)
                    .ok_or_else(|| ConfigError::Syntax {
                        line,
                        message: format!("unknown section [{name}]"),
                    })?,
            );
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            message: format!("expected `key = value`, got `{trimmed}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let sec = section.ok_or_else(|| ConfigError::Syntax {
            line,
            message: format!("key `{key}` outside any section"),
        })?;
        let allowed = SECTIONS
            .iter()
            .find(|(s, _)| *s == sec)
            .map(|(_, k)| *k)
            .unwrap_or(&[]);
        let key: &'static str = allowed
            .iter()
            .find(|k| **k == key)
            .copied()
            .ok_or_else(|| ConfigError::UnknownKey {
                line,
                section: sec.to_string(),
                key: key.to_string(),
            })?;
        if value.is_empty() {
            return Err(bad(line, key, "empty value"));
        }
        if entries.contains_key(key) {
            return Err(ConfigError::DuplicateKey {
                line,
                key: key.to_string(),
            });
        }
        entries.insert(
            key,
            Entry {
                line,
                value: value.to_string(),
            },
        );
    }

    let k: usize = parse_num("k", entries.get("k").ok_or(ConfigError::Missing("k"))?)?;
    let n: usize = parse_num("n", entries.get("n").ok_or(ConfigError::Missing("n"))?)?;
    let rates: Vec<f64> = match (entries.get("rate"), entries.get("rates")) {
        (Some(e), None) => vec![parse_num("rate", e)?],
        (None, Some(e)) => parse_list("rates", e)?,
        (Some(_), Some(e)) => {
            return Err(bad(
                e.line,
                "rates",
                "give either `rate` or `rates`, not both",
            ))
        }
        (None, None) => return Err(ConfigError::Missing("rate")),
    };
    let mut cfg = ExperimentConfig::new(k, n, 1.0);
    cfg.rates = rates;

    let get = |key: &str| entries.get(key);
    if let Some(e) = get("file") {
        for conflicting in ["rows", "cols", "removal_fraction"] {
            if let Some(c) = get(conflicting) {
                return Err(bad(c.line, conflicting, "not allowed together with `file`"));
            }
        }
        cfg.topology = TopologySource::File(PathBuf::from(&e.value));
    } else if let TopologySource::Grid {
        rows,
        cols,
        removal_fraction,
    } = &mut cfg.topology
    {
        if let Some(e) = get("rows") {
            *rows = parse_num("rows", e)?;
        }
        if let Some(e) = get("cols") {
            *cols = parse_num("cols", e)?;
        }
        if let Some(e) = get("removal_fraction") {
            *removal_fraction = parse_num("removal_fraction", e)?;
        }
    }
    if let Some(e) = get("routing") {
        cfg.routing = RoutingKind::from_name(&e.value).ok_or_else(|| {
            bad(
                e.line,
                "routing",
                "expected `uniform`, `no-backtrack` or `shortest-path`",
            )
        })?;
    }
    if let Some(e) = get("ttl") {
        cfg.ttl = Some(parse_num("ttl", e)?);
    }
    if let Some(e) = get("service_mean_s") {
        cfg.service_mean_s = parse_num("service_mean_s", e)?;
    }
    let mut capacity = cfg.link.capacity_bps();
    let mut delay = cfg.link.mean_delay_s();
    if let Some(e) = get("capacity_bps") {
        capacity = parse_num("capacity_bps", e)?;
    }
    if let Some(e) = get("mean_delay_s") {
        delay = parse_num("mean_delay_s", e)?;
    }
    cfg.link = LinkParams::new(capacity, delay).map_err(|err| {
        let key = if capacity.is_finite() && capacity > 0.0 {
            "mean_delay_s"
        } else {
            "capacity_bps"
        };
        let line = get(key).map_or(0, |e| e.line);
        bad(line, key, err.to_string())
    })?;
    if let Some(e) = get("packet_size_bits") {
        cfg.packet_size_bits = parse_num("packet_size_bits", e)?;
    }
    if let Some(e) = get("n_values") {
        cfg.n_values = parse_list("n_values", e)?;
    }
    if let Some(e) = get("deadline_s") {
        cfg.deadline_s = parse_num("deadline_s", e)?;
    }
    if let Some(e) = get("horizon_s") {
        cfg.horizon_s = parse_num("horizon_s", e)?;
    }
    if let Some(e) = get("warmup_fraction") {
        cfg.warmup_fraction = parse_num("warmup_fraction", e)?;
    }
    if let Some(e) = get("replications") {
        cfg.replications = parse_num("replications", e)?;
    }
    if let Some(e) = get("seed") {
        cfg.seed = parse_num("seed", e)?;
    }
    if let Some(e) = get("record_messages") {
        cfg.record_messages = parse_bool("record_messages", e)?;
    }
    if let Some(e) = get("queue_alarm") {
        cfg.queue_alarm = parse_num("queue_alarm", e)?;
    }

    match cfg.validate() {
        Ok(()) => Ok(cfg),
        Err(HarnessError::Config { key, message }) => {
            let key = if key == "rates" && entries.contains_key("rate") {
                "rate"
            } else {
                key
            };
            match entries.get(key) {
                Some(e) => Err(bad(e.line, key, message)),
                None => Err(ConfigError::Invalid {
                    key: key.to_string(),
                    message,
                }),
            }
        }
        Err(other) => Err(ConfigError::Invalid {
            key: String::new(),
            message: other.to_string(),
        }),
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

/// Writes every setting explicitly, defaults included. The output parses
/// back to an identical config.
pub fn format_config(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    s.push_str("[topology]\n");
    match &cfg.topology {
        TopologySource::Grid {
            rows,
            cols,
            removal_fraction,
        } => {
            let _ = writeln!(s, "rows = {rows}");
            let _ = writeln!(s, "cols = {cols}");
            let _ = writeln!(s, "removal_fraction = {removal_fraction:?}");
        }
        TopologySource::File(p) => {
            let _ = writeln!(s, "file = {}", p.display());
        }
    }
    let _ = writeln!(s, "routing = {}", cfg.routing.name());
    if let Some(ttl) = cfg.ttl {
        let _ = writeln!(s, "ttl = {ttl}");
    }
    let _ = writeln!(s, "service_mean_s = {:?}", cfg.service_mean_s);
    s.push_str("\n[link]\n");
    let _ = writeln!(s, "capacity_bps = {:?}", cfg.link.capacity_bps());
    let _ = writeln!(s, "mean_delay_s = {:?}", cfg.link.mean_delay_s());
    s.push_str("\n[traffic]\n");
    let rates: Vec<String> = cfg.rates.iter().map(|r| format!("{r:?}")).collect();
    let _ = writeln!(s, "rates = {}", rates.join(", "));
    let _ = writeln!(s, "packet_size_bits = {:?}", cfg.packet_size_bits);
    s.push_str("\n[code]\n");
    let _ = writeln!(s, "k = {}", cfg.k);
    let _ = writeln!(s, "n = {}", cfg.n);
    if !cfg.n_values.is_empty() {
        let _ = writeln!(s, "n_values = {}", join(&cfg.n_values));
    }
    s.push_str("\n[run]\n");
    let _ = writeln!(s, "deadline_s = {:?}", cfg.deadline_s);
    let _ = writeln!(s, "horizon_s = {:?}", cfg.horizon_s);
    let _ = writeln!(s, "warmup_fraction = {:?}", cfg.warmup_fraction);
    let _ = writeln!(s, "replications = {}", cfg.replications);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "record_messages = {}", cfg.record_messages);
    let _ = writeln!(s, "queue_alarm = {:?}", cfg.queue_alarm);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[code]\nk = 8\nn = 12\n[traffic]\nrate = 200\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!((c.k, c.n), (8, 12));
        assert_eq!(c.rates, vec![200.0]);
        assert_eq!(c.link.capacity_bps(), 10e6);
        assert_eq!(c.link.mean_delay_s(), 0.002);
        assert_eq!(c.service_mean_s, 0.0001);
        assert_eq!(c.deadline_s, 0.3);
        assert_eq!(c.packet_size_bits, 1000.0);
    }

    #[test]
    fn n_below_k_names_n() {
        let err = parse_config("[code]\nk = 8\nn = 4\n[traffic]\nrate = 1\n").unwrap_err();
        assert_eq!(err.key(), Some("n"));
        assert!(err.to_string().contains("`n`"), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = parse_config("[code]\nk = 8\nk = 8\nn = 9\n[traffic]\nrate = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateKey { line: 3, .. }));
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config("[code]\nk = 8\nn = 9\nkk = 1\n[traffic]\nrate = 1\n").unwrap_err();
        assert_eq!(err.key(), Some("kk"));
    }

    #[test]
    fn key_in_wrong_section_rejected() {
        let err = parse_config("[run]\nk = 8\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { .. }));
    }

    #[test]
    fn missing_required_keys() {
        assert_eq!(
            parse_config("[code]\nn = 4\n").unwrap_err(),
            ConfigError::Missing("k")
        );
        assert_eq!(
            parse_config("[code]\nk = 4\nn = 4\n").unwrap_err(),
            ConfigError::Missing("rate")
        );
    }

    #[test]
    fn out_of_range_values_name_their_key() {
        let cases = [
            ("[run]\nwarmup_fraction = 0.7\n", "warmup_fraction"),
            ("[run]\nreplications = 0\n", "replications"),
            ("[topology]\nrows = 1\n", "rows"),
            ("[link]\nmean_delay_s = -1\n", "mean_delay_s"),
            ("[run]\ndeadline_s = abc\n", "deadline_s"),
        ];
        for (extra, key) in cases {
            let text = format!("{MINIMAL}{extra}");
            let err = parse_config(&text).unwrap_err();
            assert_eq!(err.key(), Some(key), "{text}: {err}");
        }
        let err = parse_config("[code]\nk = 2\nn = 3\n[traffic]\nrate = -5\n").unwrap_err();
        assert_eq!(err.key(), Some("rate"));
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(
            parse_config("k = 8\n"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("[code\n"),
            Err(ConfigError::Syntax { .. })
        ));
        assert!(matches!(
            parse_config("[bogus]\n"),
            Err(ConfigError::Syntax { .. })
        ));
        assert!(matches!(
            parse_config("[code]\nk 8\n"),
            Err(ConfigError::Syntax { .. })
        ));
    }

    #[test]
    fn full_config_round_trips() {
        let text = "\
# reference scenario
[topology]
rows = 5
cols = 3
removal_fraction = 0.1
routing = uniform
ttl = 500
service_mean_s = 0.0002

[link]
capacity_bps = 2e7
mean_delay_s = 0.001

[traffic]
rates = 10, 20.5, 40
packet_size_bits = 1500

[code]
k = 4
n = 6
n_values = 4, 5, 6, 8

[run]
deadline_s = 0.25
horizon_s = 50
warmup_fraction = 0.2
replications = 3
seed = 99
record_messages = true
queue_alarm = 10
";
        let c = parse_config(text).unwrap();
        assert_eq!(c.routing, RoutingKind::UniformRandom);
        assert_eq!(c.ttl, Some(500));
        assert_eq!(c.rates, vec![10.0, 20.5, 40.0]);
        assert_eq!(c.n_values, vec![4, 5, 6, 8]);
        assert!(c.record_messages);
        assert_eq!(parse_config(&format_config(&c)).unwrap(), c);
    }

    #[test]
    fn file_topology_excludes_grid_keys() {
        let text = format!("{MINIMAL}[topology]\nfile = net.txt\n");
        let c = parse_config(&text).unwrap();
        assert_eq!(c.topology, TopologySource::File("net.txt".into()));
        let text = format!("{MINIMAL}[topology]\nfile = net.txt\nrows = 3\n");
        assert_eq!(parse_config(&text).unwrap_err().key(), Some("rows"));
    }
}
