//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use coded_flows::hd_batch::{absorbing_kernel, completion_stats, BatchConfig, BatchObjective, PolicyTable};
use coded_flows::hd_online::{HdState, Turn};
use nalgebra::{DMatrix, DVector};

/// Mean time and energy to absorption from `(M1, M2, S1)` via the
/// fundamental matrix `(I − Q)⁻¹` of the explicit transient chain.
pub fn fundamental_matrix_batch(policy: &PolicyTable, cfg: &BatchConfig) -> (f64, f64) {
    let t = cfg.m1 + cfg.m2;
    let mut states = Vec::new();
    for i1 in 0..=cfg.m1 {
        for i2 in 0..=t - i1 {
            if i1 + i2 > 0 {
                states.push(HdState::new(i1, i2, Turn::S1));
                states.push(HdState::new(i1, i2, Turn::S2));
            }
        }
    }
    let index = |s: HdState| states.iter().position(|x| *x == s);
    let n = states.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut rt = DVector::<f64>::zeros(n);
    let mut re = DVector::<f64>::zeros(n);
    let e = cfg.energy;
    for (row, &s) in states.iter().enumerate() {
        match s.turn {
            Turn::S1 if s.i1 > 0 => {
                let b = policy.n1[s.i1 as usize] as f64;
                rt[row] = b;
                re[row] = b * e.e1;
            }
            Turn::S2 if s.i2 > 0 => {
                let b = policy.n2[s.i1 as usize][s.i2 as usize] as f64;
                rt[row] = b + 1.0;
                re[row] = b * e.e2 + e.e_ack;
            }
            _ => {}
        }
        for ((d1, d2), p) in absorbing_kernel(s, policy, cfg).unwrap() {
            let next = HdState::new((s.i1 as i64 + d1) as u32, (s.i2 as i64 + d2) as u32, s.turn.other());
            if let Some(col) = index(next) {
                a[(row, col)] -= p;
            }
        }
    }
    let lu = a.lu();
    let tt = lu.solve(&rt).unwrap();
    let ee = lu.solve(&re).unwrap();
    let start = index(cfg.start()).unwrap();
    (tt[start], ee[start])
}

/// Global minimum of an additive objective over all tables with bursts in
/// `1..=n_max`: every `N1` table, each with its optimal `N2` entries found by
/// policy iteration on S₂'s decisions.
pub fn brute_force_batch(cfg: &BatchConfig, n_max: u32) -> f64 {
    let (wt, we) = match cfg.objective {
        BatchObjective::Time => (1.0, 0.0),
        BatchObjective::Energy => (0.0, 1.0),
        BatchObjective::Product => panic!("product is not additive"),
    };
    let e = cfg.energy;
    let m1 = cfg.m1 as usize;
    let mut best = f64::INFINITY;
    let mut n1 = vec![1u32; m1];
    loop {
        let mut pol = PolicyTable::constant(cfg, 1);
        pol.n1[1..].copy_from_slice(&n1);
        loop {
            let st = completion_stats(&pol, cfg).unwrap();
            let v = |i1: u32, i2: u32| {
                let s = HdState::new(i1, i2, Turn::S1);
                wt * st.time_from(s) + we * st.energy_from(s)
            };
            let mut next = pol.clone();
            for i1 in 0..pol.n2.len() as u32 {
                for i2 in 1..pol.n2[i1 as usize].len() as u32 {
                    let q = |n: u32| {
                        let mut t = pol.clone();
                        t.n2[i1 as usize][i2 as usize] = n;
                        let k = absorbing_kernel(HdState::new(i1, i2, Turn::S2), &t, cfg).unwrap();
                        let c = wt * (n as f64 + 1.0) + we * (n as f64 * e.e2 + e.e_ack);
                        c + k.iter().map(|&((_, d2), p)| p * v(i1, (i2 as i64 + d2) as u32)).sum::<f64>()
                    };
                    let cur = pol.n2[i1 as usize][i2 as usize];
                    let mut b = (cur, q(cur));
                    for n in 1..=n_max {
                        let x = q(n);
                        if x < b.1 - 1e-12 * b.1 {
                            b = (n, x);
                        }
                    }
                    next.n2[i1 as usize][i2 as usize] = b.0;
                }
            }
            if next == pol {
                best = best.min(st.objective(cfg.objective));
                break;
            }
            pol = next;
        }
        let mut k = 0;
        loop {
            if k == m1 {
                return best;
            }
            n1[k] += 1;
            if n1[k] <= n_max {
                break;
            }
            n1[k] = 1;
            k += 1;
        }
    }
}
