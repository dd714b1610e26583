//! CSV and manifest rendering. Numbers carry nine significant digits;
//! undefined values are written as `NA`.

use std::fmt::Write as _;

use crate::analytics::GainRow;
use crate::config::format_config;
use crate::harness::{ArmResult, ExperimentConfig, PairedResult, RateRow};
use crate::metrics::Outcome;

pub const PAIRS_HEADER: &str = "rate_msgs_s,k,n,R,arm,replications,delay_mean_s,delay_var_s2,\
violation_prob,throughput_bps,throughput_info_bps,drops,unfinished,rho_est";

pub const RATIOS_HEADER: &str = "rate_msgs_s,k,n,R,delay_gain,variance_ratio,violation_ratio,\
throughput_info_ratio,throughput_total_ratio,rho_est,queue_growth,arrivals_matched";

pub const RATE_SWEEP_HEADER: &str = "n,R,rho_est,empirical_gain,analytical_gain,\
delay_mean_uncoded_s,delay_mean_coded_s,half_width_coded_s,queue_growth";

pub const GAIN_CURVE_HEADER: &str = "n,R,T_unc_s,T_cod_s,f,feasible";

pub const MESSAGES_HEADER: &str = "rate_msgs_s,arm,k,n,replication,message_id,created_at_s,\
completed_at_s,delay_s,outcome,violated,hops_of_kth";

pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        "NA".to_string()
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), num)
}

fn arm_name(arm: &ArmResult) -> &'static str {
    if arm.code.is_uncoded() {
        "uncoded"
    } else {
        "coded"
    }
}

fn arm_row(out: &mut String, arm: &ArmResult) {
    let a = &arm.aggregate;
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        num(arm.rate),
        arm.code.k(),
        arm.code.n(),
        num(arm.code.rate()),
        arm_name(arm),
        a.replications,
        num(a.delay_mean),
        num(a.delay_variance),
        num(a.violation_probability),
        num(a.delivered_total_throughput),
        num(a.delivered_throughput),
        a.packets_dropped,
        a.messages_unfinished,
        num(a.bottleneck_utilization),
    );
}

/// Per-arm summaries in the `pairs.csv` layout.
pub fn arms_csv<'a>(arms: impl IntoIterator<Item = &'a ArmResult>) -> String {
    let mut out = format!("{PAIRS_HEADER}\n");
    for arm in arms {
        arm_row(&mut out, arm);
    }
    out
}

/// Two rows per paired point, uncoded first.
pub fn pairs_csv(results: &[PairedResult]) -> String {
    arms_csv(results.iter().flat_map(|p| [&p.uncoded, &p.coded]))
}

pub fn ratios_csv(results: &[PairedResult]) -> String {
    let mut out = format!("{RATIOS_HEADER}\n");
    for p in results {
        let (u, c) = (&p.uncoded.aggregate, &p.coded.aggregate);
        let total = (c.delivered_total_throughput != 0.0)
            .then(|| u.delivered_total_throughput / c.delivered_total_throughput);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            num(p.rate),
            p.coded.code.k(),
            p.coded.code.n(),
            num(p.coded.code.rate()),
            opt(p.delay_gain),
            opt(p.variance_ratio),
            opt(p.violation_ratio),
            opt(p.throughput_ratio),
            opt(total),
            num(p.rho_estimate()),
            p.queue_growth,
            p.arrivals_matched,
        );
    }
    out
}

pub fn rate_sweep_csv(rows: &[RateRow]) -> String {
    let mut out = format!("{RATE_SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.n,
            num(r.code_rate),
            num(r.rho_estimate),
            opt(r.empirical_gain),
            opt(r.analytical_gain),
            num(r.paired.uncoded.aggregate.delay_mean),
            num(r.paired.coded.aggregate.delay_mean),
            num(r.paired.coded.aggregate.delay_half_width),
            r.paired.queue_growth,
        );
    }
    out
}

/// Gain curve followed by a `# optimum` summary line.
pub fn gain_curve_csv(rows: &[GainRow], optimum: Option<(usize, f64)>) -> String {
    let mut out = format!("{GAIN_CURVE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.n,
            num(r.rate),
            opt(r.t_uncoded),
            opt(r.t_coded),
            opt(r.gain),
            r.feasible(),
        );
    }
    match optimum {
        Some((n, f)) => {
            let k = rows.first().map_or(n, |r| r.n);
            let _ = writeln!(
                out,
                "# optimum n={n} R={} f={}",
                num(k as f64 / n as f64),
                num(f)
            );
        }
        None => out.push_str("# optimum none\n"),
    }
    out
}

pub fn messages_csv(results: &[PairedResult]) -> String {
    let mut out = format!("{MESSAGES_HEADER}\n");
    for p in results {
        for arm in [&p.uncoded, &p.coded] {
            write_messages(&mut out, arm);
        }
    }
    out
}

pub fn arm_messages_csv(arm: &ArmResult) -> String {
    let mut out = format!("{MESSAGES_HEADER}\n");
    write_messages(&mut out, arm);
    out
}

fn write_messages(out: &mut String, arm: &ArmResult) {
    for (rep, records) in arm.messages.iter().enumerate() {
        for m in records {
            let outcome = match m.outcome {
                Outcome::Completed => "completed",
                Outcome::Failed => "failed",
                Outcome::Unfinished => "unfinished",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                num(arm.rate),
                arm_name(arm),
                arm.code.k(),
                arm.code.n(),
                rep,
                m.message_id,
                num(m.created_at.seconds()),
                opt(m.completed_at.map(|t| t.seconds())),
                opt(m.delay()),
                outcome,
                m.violated,
                m.hops_of_kth,
            );
        }
    }
}

/// The resolved config preceded by comment lines naming the command. It
/// parses as a config file and reproduces the run.
pub fn manifest(command: &str, config: &ExperimentConfig) -> String {
    format!(
        "# tcode {} {command}\n# seed {}\n{}",
        env!("CARGO_PKG_VERSION"),
        config.seed,
        format_config(config)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{gain_curve, optimal_redundancy, DEFAULT_GAMMA};
    use crate::config::parse_config;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(num(0.123456789123), "1.23456789e-1");
        assert_eq!(num(1.0), "1.00000000e0");
        assert_eq!(num(f64::NAN), "NA");
        assert_eq!(opt(None), "NA");
    }

    #[test]
    fn pairs_header_is_exact() {
        assert_eq!(
            pairs_csv(&[]).trim_end(),
            "rate_msgs_s,k,n,R,arm,replications,delay_mean_s,delay_var_s2,violation_prob,\
throughput_bps,throughput_info_bps,drops,unfinished,rho_est"
        );
    }

    #[test]
    fn gain_curve_has_optimum_line() {
        let rows = gain_curve(0.5, 4, 8, DEFAULT_GAMMA).unwrap();
        let best = optimal_redundancy(0.5, 4, 8).ok();
        let csv = gain_curve_csv(&rows, best);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], GAIN_CURVE_HEADER);
        assert_eq!(lines.len(), 1 + rows.len() + 1);
        assert!(lines.last().unwrap().starts_with("# optimum n="));
        assert!(lines[1].starts_with("4,1.00000000e0,"));
    }

    #[test]
    fn manifest_parses_back() {
        let mut c = ExperimentConfig::new(3, 5, 12.5);
        c.seed = 77;
        let text = manifest("pair", &c);
        assert_eq!(parse_config(&text).unwrap(), c);
    }
}
