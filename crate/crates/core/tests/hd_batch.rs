mod common;

use coded_flows::hd_batch::*;
use coded_flows::hd_online::{HdState, Turn};
use coded_flows::{EnergyParams, Error};
use common::{brute_force_batch, fundamental_matrix_batch};
use proptest::prelude::*;

const FIG3_ENERGY: EnergyParams = EnergyParams {
    e1: 1.0,
    e2: 2.0,
    e_ack: 1.0,
};

fn small(p1: f64, p2: f64, obj: BatchObjective) -> BatchConfig {
    BatchConfig::new(2, 2, p1, p2).with_energy(FIG3_ENERGY).with_objective(obj)
}

fn random_policy(cfg: &BatchConfig, seed: &[u32]) -> PolicyTable {
    let mut p = PolicyTable::identity(cfg);
    let mut k = 0;
    let mut next = || {
        k += 1;
        seed[k % seed.len()]
    };
    for v in p.n1.iter_mut().skip(1) {
        *v = next();
    }
    for row in &mut p.n2 {
        for v in row.iter_mut().skip(1) {
            *v = next();
        }
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recursion_matches_fundamental_matrix(
        m1 in 0u32..4, m2 in 0u32..4,
        p1 in 0.0f64..0.9, p2 in 0.0f64..0.9,
        seed in proptest::collection::vec(1u32..7, 1..12),
    ) {
        prop_assume!(m1 + m2 > 0);
        let cfg = BatchConfig::new(m1, m2, p1, p2).with_energy(FIG3_ENERGY);
        let pol = random_policy(&cfg, &seed);
        let s = completion_stats(&pol, &cfg).unwrap();
        let (t, e) = fundamental_matrix_batch(&pol, &cfg);
        prop_assert!((s.mean_time - t).abs() <= 1e-9 * t.max(1.0));
        prop_assert!((s.mean_energy - e).abs() <= 1e-9 * e.max(1.0));
        prop_assert!(s.mean_time.is_finite() && s.mean_energy.is_finite());
    }

    #[test]
    fn kernel_rows_are_distributions(
        i1 in 0u32..4, i2 in 0u32..4, s2 in any::<bool>(),
        p in 0.0f64..0.95, n in 1u32..10,
    ) {
        let cfg = BatchConfig::new(3, 3, p, p);
        let pol = PolicyTable::constant(&cfg, n);
        let turn = if s2 { Turn::S2 } else { Turn::S1 };
        let k = absorbing_kernel(HdState::new(i1, i2, turn), &pol, &cfg).unwrap();
        let total: f64 = k.iter().map(|x| x.1).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(k.iter().all(|x| x.1 >= 0.0));
    }
}

#[test]
fn matches_brute_force_on_small_batches() {
    for obj in [BatchObjective::Time, BatchObjective::Energy] {
        for (p1, p2) in [(0.1, 0.4), (0.45, 0.3), (0.7, 0.6)] {
            let cfg = small(p1, p2, obj);
            let r = algorithm1(&cfg, &SearchOptions::default()).unwrap();
            let b = brute_force_batch(&cfg, 8);
            let v = r.stats.objective(obj);
            assert!(v <= b * 1.01, "{obj:?} p1={p1}: {v} vs brute {b}");
        }
    }
}

#[test]
fn result_is_coordinatewise_local_optimum() {
    for obj in [BatchObjective::Time, BatchObjective::Energy, BatchObjective::Product] {
        let cfg = small(0.35, 0.5, obj);
        let r = algorithm1(&cfg, &SearchOptions::default()).unwrap();
        let base = r.stats.objective(obj);
        let mut tweaks: Vec<PolicyTable> = Vec::new();
        for i1 in 1..r.policy.n1.len() {
            for d in [-1i64, 1] {
                let mut t = r.policy.clone();
                let n = t.n1[i1] as i64 + d;
                if n >= 1 {
                    t.n1[i1] = n as u32;
                    tweaks.push(t);
                }
            }
        }
        for i1 in 0..r.policy.n2.len() {
            for i2 in 1..r.policy.n2[i1].len() {
                for d in [-1i64, 1] {
                    let mut t = r.policy.clone();
                    let n = t.n2[i1][i2] as i64 + d;
                    if n >= 1 {
                        t.n2[i1][i2] = n as u32;
                        tweaks.push(t);
                    }
                }
            }
        }
        for t in tweaks {
            let v = completion_stats(&t, &cfg).unwrap().objective(obj);
            assert!(v >= base * (1.0 - 1e-12), "{obj:?}: {v} < {base}");
        }
    }
}

#[test]
fn energy_policy_invariant_under_common_scaling() {
    let a = BatchConfig::new(3, 3, 0.4, 0.4)
        .with_energy(EnergyParams {
            e1: 1.0,
            e2: 2.0,
            e_ack: 0.0,
        })
        .with_objective(BatchObjective::Energy);
    let b = a.with_energy(EnergyParams {
        e1: 7.5,
        e2: 15.0,
        e_ack: 0.0,
    });
    let ra = algorithm1(&a, &SearchOptions::default()).unwrap();
    let rb = algorithm1(&b, &SearchOptions::default()).unwrap();
    assert_eq!(ra.policy, rb.policy);
    assert!((rb.stats.mean_energy / ra.stats.mean_energy - 7.5).abs() < 1e-9);
}

#[test]
fn fig3_shape() {
    for k in 1..=8 {
        let p1 = k as f64 / 10.0;
        let base = BatchConfig::new(3, 3, p1, 0.4).with_energy(FIG3_ENERGY);
        let run = |obj| algorithm1(&base.with_objective(obj), &SearchOptions::default()).unwrap();
        let (te, tp, tt) = (run(BatchObjective::Energy), run(BatchObjective::Product), run(BatchObjective::Time));
        let g = genie_full_duplex(&base).unwrap();
        let sr = selective_repeat_baseline(&base).unwrap();
        assert!(te.stats.mean_energy <= tp.stats.mean_energy + 1e-9);
        assert!(tp.stats.mean_energy <= tt.stats.mean_energy + 1e-9);
        assert!(g.energy < te.stats.mean_energy);
        assert!(!te.boundary && !tp.boundary && !tt.boundary);
        if p1 >= 0.3 {
            assert!(tt.stats.mean_time < sr.mean_time, "p1={p1}");
        }
        assert!(g.mean_time < tt.stats.mean_time);
    }
}

#[test]
fn time_grows_with_load_and_erasure() {
    let cfg = BatchConfig::new(4, 4, 0.3, 0.4);
    let s = completion_stats(&PolicyTable::identity(&cfg), &cfg).unwrap();
    for total in 1..8u32 {
        for i1 in 0..=total.min(4) {
            let now = s.time_from(HdState::new(i1, total - i1, Turn::S1));
            let i1b = i1.min(4);
            let more = s.time_from(HdState::new(i1b, total + 1 - i1b, Turn::S1));
            assert!(more > now);
        }
    }
    let mut last = 0.0;
    for k in 0..9 {
        let c = BatchConfig::new(3, 3, k as f64 / 10.0, 0.4);
        let t = selective_repeat_baseline(&c).unwrap().mean_time;
        assert!(t >= last);
        last = t;
    }
}

#[test]
fn iteration_cap_is_non_convergence() {
    let cfg = BatchConfig::new(3, 3, 0.5, 0.4);
    let opts = SearchOptions {
        max_iterations: 1,
        ..Default::default()
    };
    assert!(matches!(algorithm1(&cfg, &opts), Err(Error::PolicyNonConvergence { iterations: 1 })));
}

#[test]
fn literal_options_still_run() {
    let cfg = BatchConfig::new(3, 3, 0.5, 0.4);
    for s2_waiting in [S2Waiting::InterveningTurn, S2Waiting::Printed] {
        let opts = SearchOptions {
            s2_waiting,
            refine: false,
            ..Default::default()
        };
        let r = algorithm1(&cfg, &opts).unwrap();
        assert_eq!(r.refine_passes, 0);
        assert!(r.stats.mean_time.is_finite());
    }
}

#[test]
fn bad_inputs_are_rejected() {
    assert!(matches!(BatchConfig::new(0, 0, 0.1, 0.1).validate(), Err(Error::Argument(_))));
    assert!(matches!(BatchConfig::new(1, 1, 1.0, 0.1).validate(), Err(Error::Argument(_))));
    assert!(link_optimizer(0, 0.5, LinkCosts::time(0.0, 0.0), None).is_err());
    let cfg = BatchConfig::new(2, 1, 0.1, 0.1);
    let mut p = PolicyTable::identity(&cfg);
    p.n2[1][1] = 0;
    assert!(completion_stats(&p, &cfg).is_err());
}
