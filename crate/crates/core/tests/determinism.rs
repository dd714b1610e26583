use std::collections::HashSet;

use tcode::harness::{self, ExperimentConfig, RoutingKind};
use tcode::metrics::Outcome;
use tcode::report;

fn small(k: usize, n: usize, rate: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(k, n, rate);
    c.horizon_s = 10.0;
    c.replications = 2;
    c
}

#[test]
fn same_seed_gives_identical_csv() {
    let mut c = small(4, 6, 150.0);
    c.record_messages = true;
    let a = harness::run_paired(&c).unwrap();
    let b = harness::run_paired(&c).unwrap();
    assert_eq!(
        report::pairs_csv(std::slice::from_ref(&a)),
        report::pairs_csv(std::slice::from_ref(&b))
    );
    assert_eq!(report::messages_csv(&[a]), report::messages_csv(&[b]));
}

#[test]
fn different_seed_changes_results() {
    let c = small(4, 6, 150.0);
    let mut d = c.clone();
    d.seed = 2;
    let a = report::pairs_csv(&[harness::run_paired(&c).unwrap()]);
    let b = report::pairs_csv(&[harness::run_paired(&d).unwrap()]);
    assert_ne!(a, b);
}

#[test]
fn arms_share_message_arrivals() {
    let p = harness::run_paired(&small(8, 12, 200.0)).unwrap();
    assert!(p.arrivals_matched);
    for (u, c) in p.uncoded.aggregate.runs.iter().zip(&p.coded.aggregate.runs) {
        assert_eq!(u.messages_generated, c.messages_generated);
    }
}

#[test]
fn aggregate_runs_match_individual_replications() {
    let c = small(3, 4, 100.0);
    let arm = harness::simulate(&c).unwrap();
    for (rep, run) in arm.aggregate.runs.iter().enumerate() {
        let alone = harness::run_single(&c, rep).unwrap();
        assert_eq!(format!("{run:?}"), format!("{alone:?}"));
    }
}

#[test]
fn conservation_holds_under_every_policy() {
    let policies = [
        (RoutingKind::UniformRandom, Some(8)),
        (RoutingKind::RandomWalkNoBacktrack, None),
        (RoutingKind::RandomShortestPath, None),
    ];
    for (routing, ttl) in policies {
        for (k, n) in [(1, 1), (4, 4), (4, 7)] {
            let mut c = small(k, n, 200.0);
            c.routing = routing;
            c.ttl = ttl;
            c.record_messages = true;
            let arm = harness::simulate(&c).unwrap();
            for (run, records) in arm.aggregate.runs.iter().zip(&arm.messages) {
                assert!(run.is_conserved(), "{routing:?} ({k},{n})");
                assert_eq!(
                    run.packets_generated,
                    run.packets_delivered + run.packets_dropped + run.packets_in_flight
                );
                assert_eq!(run.packets_generated, run.messages_generated * n as u64);
                let ids: HashSet<u64> = records.iter().map(|m| m.message_id).collect();
                assert_eq!(ids.len(), records.len(), "one record per message");
                assert_eq!(records.len() as u64, run.messages_generated);
                for m in records {
                    match m.outcome {
                        Outcome::Completed => {
                            assert!(m.delay().unwrap() >= 0.0);
                            assert!(m.hops_of_kth >= 1);
                        }
                        _ => assert!(m.completed_at.is_none() && m.violated),
                    }
                }
            }
        }
    }
}

#[test]
fn short_ttl_drops_packets_and_fails_messages() {
    let mut c = small(4, 4, 50.0);
    c.routing = RoutingKind::UniformRandom;
    c.ttl = Some(6);
    let m = harness::run_single(&c, 0).unwrap();
    assert!(m.packets_dropped > 0);
    assert!(m.messages_failed > 0);
    assert!(m.is_conserved());
}
