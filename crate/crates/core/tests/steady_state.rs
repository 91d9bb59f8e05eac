use coded_flows::genie_inter;
use coded_flows::genie_intra::{fairness_solve, intra_metrics, FairPoint, IntraOptions, SchedulingPolicy};
use coded_flows::hd_online::{online_metrics, optimize_online, OnlineObjective, OnlinePolicy, SearchSpace};
use coded_flows::simulator::{estimate_transition, ProbeState, SimConfig, SimModel};
use coded_flows::truncation::ModelOptions;
use coded_flows::{Error, LineNetworkParams};
use proptest::prelude::*;

fn fixed(cap: usize) -> ModelOptions {
    ModelOptions::fixed(cap)
}

#[test]
fn inter_delays_grow_with_load() {
    let mut last = (0.0, 0.0);
    for k in 1..=5 {
        let p = LineNetworkParams::new(0.04 * k as f64, 0.25, 0.3, 0.4);
        let r = genie_inter::analyze_at(&p, [40, 40], &fixed(40)).unwrap();
        assert!(r.metrics.delay_node1 > last.0 && r.metrics.delay_node2 > last.1);
        last = (r.metrics.delay_node1, r.metrics.delay_node2);
    }
}

#[test]
fn intra_with_one_flow_matches_inter() {
    // with flow 2 silent and P_s = 1 the per-session chain is the cross-flow chain
    let p = LineNetworkParams::new(0.15, 0.0, 0.3, 0.4);
    let inter = genie_inter::analyze_at(&p, [30, 30], &fixed(30)).unwrap();
    let opts = IntraOptions {
        model: fixed(30),
        ..Default::default()
    };
    let intra = intra_metrics(&p, &SchedulingPolicy::Randomized(1.0), &opts).unwrap();
    assert!((intra.mean_queue[0] - inter.mean_i1).abs() < 1e-9);
    assert!((intra.mean_queue[1] - inter.mean_i2).abs() < 1e-9);
    assert!(intra.mean_queue[2] < 1e-9);
}

#[test]
fn fair_split_equalizes_delays() {
    let p = LineNetworkParams::new(0.12, 0.25, 0.3, 0.4);
    let opts = IntraOptions {
        model: fixed(32),
        ..Default::default()
    };
    match fairness_solve(&p, &opts, 1e-6).unwrap() {
        FairPoint::Found { ps, gap, .. } => {
            assert!(gap.abs() <= 1e-6);
            let r = intra_metrics(&p, &SchedulingPolicy::Randomized(ps), &opts).unwrap();
            assert!((r.metrics.flow1_total - r.metrics.flow2_total).abs() <= 1e-6);
        }
        other => panic!("expected a fair split, got {other:?}"),
    }
}

#[test]
fn online_throughput_equals_offered_load() {
    let p = LineNetworkParams::new(0.05, 0.1, 0.3, 0.4);
    let r = online_metrics(&p, &OnlinePolicy::identity(), &ModelOptions::default()).unwrap();
    assert!((r.throughput - 0.15).abs() < 1e-6);
    assert!(r.mean_delay > 0.0 && r.energy_per_packet > 0.0);
}

#[test]
fn online_search_improves_on_identity() {
    let p = LineNetworkParams::new(0.05, 0.1, 0.3, 0.4);
    let opts = coded_flows::hd_online::fixed_cap_options([12, 12]);
    let base = online_metrics(&p, &OnlinePolicy::identity(), &opts).unwrap();
    let space = SearchSpace {
        max_i1: 2,
        max_i2: 2,
        n_max: 4,
        max_passes: 5,
    };
    let delay = optimize_online(&p, &opts, space, OnlineObjective::Delay).unwrap();
    let energy = optimize_online(&p, &opts, space, OnlineObjective::Energy).unwrap();
    assert!(delay.value <= base.mean_delay * (1.0 + 1e-12));
    assert!(energy.value <= base.energy_per_packet * (1.0 + 1e-12));
    // each search wins on its own objective
    let d = online_metrics(&p, &delay.policy, &opts).unwrap();
    let e = online_metrics(&p, &energy.policy, &opts).unwrap();
    assert!(d.mean_delay <= e.mean_delay + 1e-12);
    assert!(e.energy_per_packet <= d.energy_per_packet + 1e-12);
}

#[test]
fn unstable_loads_are_reported() {
    let p = LineNetworkParams::new(0.3, 0.35, 0.3, 0.4);
    assert!(matches!(genie_inter::analyze(&p, &ModelOptions::default()), Err(Error::Instability(_))));
    let heavy = LineNetworkParams::new(0.3, 0.3, 0.3, 0.4);
    assert!(matches!(
        online_metrics(&heavy, &OnlinePolicy::identity(), &ModelOptions::default()),
        Err(Error::Instability(_))
    ));
}

#[test]
fn simulated_one_step_law_matches_kernel() {
    let p = LineNetworkParams::new(0.12, 0.25, 0.3, 0.4);
    let cfg = SimConfig {
        seed: 9,
        ..Default::default()
    };
    let state = ProbeState::Inter(genie_inter::GenieState::new(2, 1));
    let est = estimate_transition(&cfg, &p, &SimModel::GenieInter, state, 200_000).unwrap();
    assert!(est.tv_distance < 0.01, "{}", est.tv_distance);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn littles_law_links_queues_and_delays(l1 in 0.02f64..0.2, l2 in 0.0f64..0.2, p1 in 0.0f64..0.4, p2 in 0.0f64..0.3) {
        let p = LineNetworkParams::new(l1, l2, p1, p2);
        prop_assume!(p.is_stable());
        let r = genie_inter::analyze_at(&p, [40, 40], &fixed(40)).unwrap();
        prop_assert!((r.metrics.delay_node1 * l1 - r.mean_i1).abs() < 1e-10);
        prop_assert!((r.metrics.delay_node2 * (l1 + l2) - r.mean_i2).abs() < 1e-10);
        prop_assert!(r.stationary_empty.iter().all(|&e| (0.0..=1.0).contains(&e)));
    }
}
