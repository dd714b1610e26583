use tcode::engine::{Exponential, RngStream};
use tcode::harness::{self, ExperimentConfig, RoutingKind, TopologySource};
use tcode::metrics::{merge, RunMetrics, RunningStats};
use tcode::network::simulate_isolated_node;
use tcode::transport::{kth_order_statistic_mean, CodeConfig};

fn harmonic(lo: usize, hi: usize) -> f64 {
    let mut s = 0.0;
    let mut i = lo;
    while i <= hi {
        s += 1.0 / i as f64;
        i += 1;
    }
    s
}

#[test]
fn exponential_passes_kolmogorov_smirnov() {
    let mean = 2.0;
    let exp = Exponential::new(mean).unwrap();
    let mut rng = RngStream::new("ks", 11);
    let n = 100_000;
    let mut xs: Vec<f64> = (0..n).map(|_| exp.sample(&mut rng)).collect();
    xs.sort_by(f64::total_cmp);
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = 1.0 - (-x / mean).exp();
            let lo = cdf - i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64 - cdf;
            lo.max(hi)
        })
        .fold(0.0f64, f64::max);
    // Asymptotic critical value at alpha = 0.01.
    let critical = 1.628 / (n as f64).sqrt();
    assert!(d < critical, "D = {d}, critical {critical}");
}

#[test]
fn exponential_first_two_moments() {
    let mut rng = RngStream::new("moments", 3);
    let service = Exponential::new(1e-4).unwrap();
    let s: RunningStats = (0..1_000_000).map(|_| service.sample(&mut rng)).collect();
    assert!(((s.mean() - 1e-4) / 1e-4).abs() < 0.01, "mean {}", s.mean());
    let link = Exponential::new(2e-3).unwrap();
    let s: RunningStats = (0..1_000_000).map(|_| link.sample(&mut rng)).collect();
    assert!(
        ((s.variance() - 4e-6) / 4e-6).abs() < 0.03,
        "variance {}",
        s.variance()
    );
}

#[test]
fn order_statistic_means() {
    let mut rng = RngStream::new("order", 5);
    for (k, n, t) in [(1, 1, 1.0), (2, 3, 1.0), (3, 5, 0.25), (4, 4, 2.0)] {
        let code = CodeConfig::new(k, n).unwrap();
        let got = kth_order_statistic_mean(code, t, 200_000, &mut rng);
        let want = t * harmonic(n - k + 1, n);
        assert!(
            ((got - want) / want).abs() < 0.01,
            "({k},{n}): {got} vs {want}"
        );
    }
}

#[test]
fn maximum_of_two_exponentials_by_hand() {
    // E[max(X, Y)] = E[X] + E[Y] - E[min(X, Y)] = 1 + 1 - 1/2.
    let mut rng = RngStream::new("max2", 9);
    let got = kth_order_statistic_mean(CodeConfig::new(2, 2).unwrap(), 1.0, 400_000, &mut rng);
    assert!((got - 1.5).abs() < 0.01, "{got}");
}

#[test]
fn mm1_confidence_intervals_cover_the_truth() {
    let (lambda, mu) = (500.0, 1000.0);
    let truth = 1.0 / (mu - lambda);
    let groups = 10;
    let reps = 10;
    let mut covered = 0;
    for g in 0..groups {
        let runs: Vec<RunMetrics> = (0..reps)
            .map(|r| {
                let s =
                    simulate_isolated_node(lambda, 1.0 / mu, 20_000, 2_000, (g * reps + r) as u64)
                        .unwrap();
                let mut m = RunMetrics::empty();
                m.delay_mean = s.mean();
                m.delay_variance = s.variance();
                m.delay_count = s.count();
                m
            })
            .collect();
        let agg = merge(&runs).unwrap();
        if (agg.delay_mean - truth).abs() <= agg.delay_half_width {
            covered += 1;
        }
    }
    assert!(covered >= 8, "covered {covered} of {groups}");
}

fn grid(rows: usize, cols: usize) -> TopologySource {
    TopologySource::Grid {
        rows,
        cols,
        removal_fraction: 0.0,
    }
}

#[test]
fn unloaded_path_delay_is_hops_times_service_plus_link() {
    let mut c = ExperimentConfig::new(1, 1, 20.0);
    c.topology = grid(2, 2);
    c.routing = RoutingKind::RandomShortestPath;
    c.horizon_s = 5600.0;
    c.replications = 1;
    let m = harness::run_single(&c, 0).unwrap();
    let want = 2.0 * (1e-4 + 2e-3);
    assert!(m.delay_count >= 100_000, "{}", m.delay_count);
    assert!(
        ((m.delay_mean - want) / want).abs() < 0.05,
        "{} vs {want}",
        m.delay_mean
    );
}

#[test]
fn coding_does_not_hurt_at_low_load_on_shortest_paths() {
    let mut c = ExperimentConfig::new(8, 12, 20.0);
    c.routing = RoutingKind::RandomShortestPath;
    c.horizon_s = 100.0;
    c.replications = 2;
    let p = harness::run_paired(&c).unwrap();
    assert!(p.arrivals_matched);
    assert!(p.delay_gain.unwrap() >= 0.98, "{:?}", p.delay_gain);
}
