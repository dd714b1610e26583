use tcode::harness::{self, ExperimentConfig, RoutingKind};

fn sweep_config(routing: RoutingKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(8, 12, 1.0);
    c.routing = routing;
    c.horizon_s = 30.0;
    c.replications = 1;
    c
}

#[test]
fn shortest_path_saturates_near_link_capacity() {
    let c = sweep_config(RoutingKind::RandomShortestPath);
    let rates: Vec<f64> = [12.0, 16.0]
        .iter()
        .map(|mbps| mbps * 1e6 / 8000.0)
        .collect();
    let sweep = harness::load_sweep(&c, &rates).unwrap();
    for p in &sweep {
        for arm in [&p.uncoded, &p.coded] {
            let t = arm.aggregate.delivered_total_throughput / 1e6;
            assert!(
                (8.5..=10.0).contains(&t),
                "rate {} n {}: {t} Mbps",
                p.rate,
                arm.code.n()
            );
        }
    }
}

#[test]
fn delivered_throughput_rises_then_plateaus() {
    let c = sweep_config(RoutingKind::RandomWalkNoBacktrack);
    let rates = harness::default_load_rates(&c);
    let sweep = harness::load_sweep(&c, &rates).unwrap();
    let total: Vec<f64> = sweep
        .iter()
        .map(|p| p.uncoded.aggregate.delivered_total_throughput)
        .collect();
    let peak = total.iter().copied().fold(0.0, f64::max);
    let offered: Vec<f64> = rates.iter().map(|r| r * 8.0 * c.packet_size_bits).collect();
    let below: Vec<f64> = total
        .iter()
        .zip(&offered)
        .filter(|(_, o)| **o < peak)
        .map(|(t, _)| *t)
        .collect();
    assert!(
        below.len() >= 2 && below.windows(2).all(|w| w[1] > w[0]),
        "{total:?}"
    );
    for (t, o) in total.iter().zip(&offered) {
        if *o >= 1.2 * peak {
            assert!((peak - t) / peak <= 0.05, "offered {o}: {total:?}");
        }
    }
}
