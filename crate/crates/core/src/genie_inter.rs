//! Genie-aided, full-duplex, inter-session-coded two-hop queue.
//!
//! State `(i1, i2)`: dof at S₁ not yet seen at S₂ and dof at S₂ not yet seen
//! at R. Per slot each node forwards at most one dof; S₂ mixes both flows.

use crate::error::{Error, Result};
use crate::kernels::{arrival_law, poisson_pmf, service_prob, ArrivalLaw, LineNetworkParams};
use crate::markov::{mean_exit_times, stationary_direct, ChainBuilder, SolverOptions, SparseChain};
use crate::truncation::{resolve_caps, CapMetrics, ModelOptions};
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GenieState {
    pub i1: u32,
    pub i2: u32,
}

impl GenieState {
    pub fn new(i1: u32, i2: u32) -> Self {
        GenieState { i1, i2 }
    }
}

fn arrival1(x: i64, lambda: f64) -> f64 {
    if x < 0 {
        0.0
    } else {
        poisson_pmf(x as u64, lambda)
    }
}

/// One-slot transition probability `P(Δ₁, Δ₂ | (i1, i2))`.
pub fn transition_prob(state: GenieState, delta: (i64, i64), params: &LineNetworkParams) -> Result<f64> {
    params.validate()?;
    Ok(transition_unchecked(state, delta, params))
}

pub(crate) fn transition_unchecked(state: GenieState, (d1, d2): (i64, i64), params: &LineNetworkParams) -> f64 {
    let (l1, l2) = (params.lambda1, params.lambda2);
    let s10 = service_prob(0, state.i1 as u64, 1, params.p1);
    let s11 = service_prob(1, state.i1 as u64, 1, params.p1);
    let s20 = service_prob(0, state.i2 as u64, 1, params.p2);
    let s21 = service_prob(1, state.i2 as u64, 1, params.p2);
    let no_transfer = s10 * arrival1(d1, l1) * (s20 * arrival1(d2, l2) + s21 * arrival1(d2 + 1, l2));
    let transfer = s11 * arrival1(d1 + 1, l1) * (s20 * arrival1(d2 - 1, l2) + s21 * arrival1(d2, l2));
    no_transfer + transfer
}

/// Closed-form PGF of the one-slot increment `(Δ₁, Δ₂)` from `state`.
pub fn pgf(state: GenieState, z: (Complex64, Complex64), params: &LineNetworkParams) -> Result<Complex64> {
    params.validate()?;
    let (z1, z2) = z;
    let s10 = service_prob(0, state.i1 as u64, 1, params.p1);
    let s11 = service_prob(1, state.i1 as u64, 1, params.p1);
    let s20 = service_prob(0, state.i2 as u64, 1, params.p2);
    let s21 = service_prob(1, state.i2 as u64, 1, params.p2);
    if s11 != 0.0 && z1 == Complex64::new(0.0, 0.0) {
        return Err(Error::domain("pgf: z1 = 0 is a pole when i1 > 0"));
    }
    if s21 != 0.0 && z2 == Complex64::new(0.0, 0.0) {
        return Err(Error::domain("pgf: z2 = 0 is a pole when i2 > 0"));
    }
    let arrivals = ((z1 - 1.0) * params.lambda1 + (z2 - 1.0) * params.lambda2).exp();
    let downstream = if s21 == 0.0 { Complex64::new(s20, 0.0) } else { s20 + s21 / z2 };
    let upstream = if s11 == 0.0 { Complex64::new(s10, 0.0) } else { s10 + s11 * z2 / z1 };
    Ok(arrivals * downstream * upstream)
}

/// Finite surrogate of the genie chain on `0..=caps[0] × 0..=caps[1]`.
///
/// Mass that would leave the box is redirected to the boundary coordinate.
#[derive(Debug, Clone)]
pub struct TruncatedChain {
    pub caps: [usize; 2],
    pub chain: SparseChain,
    /// Largest per-row mass redirected because of the Poisson enumeration cutoff.
    pub tail_mass: f64,
    /// Stability conditions held when the chain was built.
    pub stable: bool,
}

impl TruncatedChain {
    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i2 * (self.caps[0] + 1) + i1
    }

    pub fn state(&self, idx: usize) -> GenieState {
        let w = self.caps[0] + 1;
        GenieState::new((idx % w) as u32, (idx / w) as u32)
    }

    pub fn len(&self) -> usize {
        self.chain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chain.is_empty()
    }

    pub fn prob(&self, from: GenieState, to: GenieState) -> f64 {
        self.chain.get(
            self.index(from.i1 as usize, from.i2 as usize),
            self.index(to.i1 as usize, to.i2 as usize),
        )
    }
}

pub(crate) fn one_slot_laws(params: &LineNetworkParams, eps: f64) -> (ArrivalLaw, ArrivalLaw) {
    (arrival_law(params.lambda1, eps), arrival_law(params.lambda2, eps))
}

pub fn build_chain(params: &LineNetworkParams, caps: impl Into<Caps2>, eps_tail: f64) -> Result<TruncatedChain> {
    params.validate()?;
    crate::kernels::check_eps(eps_tail)?;
    let caps = caps.into().0;
    if caps.iter().any(|&c| c < 1) {
        return Err(Error::arg(format!("cap must be >= 1, got {caps:?}")));
    }
    let (law1, law2) = one_slot_laws(params, eps_tail);
    let [c1, c2] = caps;
    let w = c1 + 1;
    let n = w * (c2 + 1);
    let mut b = ChainBuilder::new(n);
    let mut tail_mass: f64 = 0.0;
    for idx in 0..n {
        let (i1, i2) = (idx % w, idx / w);
        let q1 = if i1 > 0 { 1.0 - params.p1 } else { 0.0 };
        let q2 = if i2 > 0 { 1.0 - params.p2 } else { 0.0 };
        let mut row_tail = 0.0;
        for (y1, py1) in [(0usize, 1.0 - q1), (1, q1)] {
            if py1 == 0.0 {
                continue;
            }
            for (y2, py2) in [(0usize, 1.0 - q2), (1, q2)] {
                if py2 == 0.0 {
                    continue;
                }
                let (d1, t1) = law1.clipped(i1 - y1, c1);
                let (d2, t2) = law2.clipped(i2 + y1 - y2, c2);
                row_tail += py1 * py2 * (t1 + t2);
                for &(j1, a1) in &d1 {
                    for &(j2, a2) in &d2 {
                        b.add(j2 * w + j1, py1 * py2 * a1 * a2);
                    }
                }
            }
        }
        tail_mass = tail_mass.max(row_tail);
        b.finish_row();
    }
    Ok(TruncatedChain {
        caps,
        chain: b.build(),
        tail_mass,
        stable: params.is_stable(),
    })
}

/// Caps for a two-coordinate chain; a bare `usize` applies to both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Caps2(pub [usize; 2]);

impl From<usize> for Caps2 {
    fn from(c: usize) -> Self {
        Caps2([c, c])
    }
}

impl From<[usize; 2]> for Caps2 {
    fn from(c: [usize; 2]) -> Self {
        Caps2(c)
    }
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub caps: [usize; 2],
    pub pi: Vec<f64>,
    /// ‖πP − π‖₁.
    pub residual: f64,
    pub iterations: usize,
    /// Absolute residuals of the two boundary balance identities for
    /// π₍₀,₀₎ and π₍₁,₀₎.
    pub balance_residuals: [f64; 2],
}

impl SteadyState {
    fn width(&self) -> usize {
        self.caps[0] + 1
    }

    pub fn prob(&self, i1: usize, i2: usize) -> f64 {
        if i1 > self.caps[0] || i2 > self.caps[1] {
            return 0.0;
        }
        self.pi[i2 * self.width() + i1]
    }

    pub fn marginal1(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.caps[0] + 1];
        for (idx, p) in self.pi.iter().enumerate() {
            m[idx % self.width()] += p;
        }
        m
    }

    pub fn marginal2(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.caps[1] + 1];
        for (idx, p) in self.pi.iter().enumerate() {
            m[idx / self.width()] += p;
        }
        m
    }

    pub fn mean_i1(&self) -> f64 {
        self.marginal1().iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn mean_i2(&self) -> f64 {
        self.marginal2().iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    /// P(i1 = 0).
    pub fn p_empty1(&self) -> f64 {
        self.marginal1()[0]
    }

    /// P(i2 = 0).
    pub fn p_empty2(&self) -> f64 {
        self.marginal2()[0]
    }

    pub fn boundary_mass(&self) -> f64 {
        let w = self.width();
        self.pi
            .iter()
            .enumerate()
            .filter(|(idx, _)| idx % w == self.caps[0] || idx / w == self.caps[1])
            .map(|(_, p)| p)
            .sum()
    }
}

/// Stationary distribution of a truncated chain.
pub fn steady_state(tc: &TruncatedChain, opts: SolverOptions) -> Result<SteadyState> {
    let st = stationary_direct(&tc.chain, 0, opts)?;
    let mut ss = SteadyState {
        caps: tc.caps,
        pi: st.pi,
        residual: st.residual,
        iterations: st.iterations,
        balance_residuals: [0.0; 2],
    };
    if tc.caps[0] >= 2 && tc.caps[1] >= 2 {
        let s = GenieState::new;
        let p = |a: GenieState, b: GenieState| tc.prob(a, b);
        let pi = |i1, i2| ss.prob(i1, i2);
        let r00 = pi(0, 0) - (pi(0, 0) * p(s(0, 0), s(0, 0)) + pi(0, 1) * p(s(0, 1), s(0, 0)));
        let r10 = pi(1, 0)
            - (pi(1, 0) * p(s(1, 0), s(1, 0))
                + pi(0, 1) * p(s(0, 1), s(1, 0))
                + pi(0, 0) * p(s(0, 0), s(1, 0))
                + pi(1, 1) * p(s(1, 1), s(1, 0)));
        ss.balance_residuals = [r00.abs(), r10.abs()];
        if ss.balance_residuals.iter().any(|&r| r > 1e-9) {
            return Err(Error::Balance(format!(
                "boundary identities off by {:?}",
                ss.balance_residuals
            )));
        }
    }
    Ok(ss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayMetrics {
    /// E[D₁]: slots from arrival at S₁ until seen at S₂.
    pub delay_node1: f64,
    /// E[D₂]: slots from arrival at S₂ until seen at R.
    pub delay_node2: f64,
    pub flow1_end_to_end: f64,
    pub flow2_end_to_end: f64,
}

/// Little's-law delays.
pub fn mean_delays(ss: &SteadyState, params: &LineNetworkParams) -> Result<DelayMetrics> {
    if params.lambda1 <= 0.0 {
        return Err(Error::domain("E[D1] needs lambda1 > 0"));
    }
    let rate2 = params.lambda1 + params.lambda2;
    let d1 = ss.mean_i1() / params.lambda1;
    let d2 = ss.mean_i2() / rate2;
    Ok(DelayMetrics {
        delay_node1: d1,
        delay_node2: d2,
        flow1_end_to_end: d1 + d2,
        flow2_end_to_end: d2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    S1,
    S2,
}

/// Renewal decomposition of one node's queue into idle and busy periods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusyCycleStats {
    pub mean_idle: f64,
    pub mean_busy: f64,
    pub p_empty: f64,
    /// Idle-period mean from the independence closed form. Equals `mean_idle`
    /// for S₁; for S₂ it treats upstream transfers as independent per slot.
    pub idle_closed_form: f64,
}

/// Mean idle and busy period lengths of `node`.
///
/// S₁: the idle length is geometric; the busy length is the mean first-passage
/// time to `i1 = 0` from the one-slot arrival law conditioned on at least one
/// arrival. S₂: both period lengths are first-passage times of the two-queue
/// chain from the stationary entry distributions into busy and idle states.
pub fn busy_cycle(
    tc: &TruncatedChain,
    ss: &SteadyState,
    params: &LineNetworkParams,
    node: Node,
    eps_tail: f64,
) -> Result<BusyCycleStats> {
    params.require_stable()?;
    match node {
        Node::S1 => busy_cycle_s1(params, tc.caps[0], eps_tail),
        Node::S2 => {
            let s1 = busy_cycle_s1(params, tc.caps[0], eps_tail)?;
            busy_cycle_s2(tc, ss, params, s1.p_empty)
        }
    }
}

fn busy_cycle_s1(params: &LineNetworkParams, cap: usize, eps: f64) -> Result<BusyCycleStats> {
    let lambda = params.lambda1;
    if lambda <= 0.0 {
        return Err(Error::domain("S1 never leaves its idle period when lambda1 = 0"));
    }
    let law = arrival_law(lambda, eps);
    let q = 1.0 - params.p1;
    let mut b = ChainBuilder::new(cap + 1);
    for i in 0..=cap {
        let outcomes: &[(usize, f64)] = if i == 0 { &[(0, 1.0)] } else { &[(0, 1.0 - q), (1, q)] };
        for &(y, py) in outcomes {
            let (d, _) = law.clipped(i - y, cap);
            for (j, a) in d {
                b.add(j, py * a);
            }
        }
        b.finish_row();
    }
    let chain = b.build();
    let keep: Vec<bool> = (0..=cap).map(|i| i > 0).collect();
    let h = mean_exit_times(&chain, &keep)?;
    let p0 = poisson_pmf(0, lambda);
    let (entry, _) = law.clipped(0, cap);
    let mean_busy = entry
        .iter()
        .filter(|&&(k, _)| k > 0)
        .map(|&(k, a)| a * h[k])
        .sum::<f64>()
        / (1.0 - p0);
    let mean_idle = 1.0 / (1.0 - (-lambda).exp());
    Ok(BusyCycleStats {
        mean_idle,
        mean_busy,
        p_empty: mean_idle / (mean_idle + mean_busy),
        idle_closed_form: mean_idle,
    })
}

fn busy_cycle_s2(
    tc: &TruncatedChain,
    ss: &SteadyState,
    params: &LineNetworkParams,
    p_em1: f64,
) -> Result<BusyCycleStats> {
    if params.lambda1 + params.lambda2 <= 0.0 {
        return Err(Error::domain("S2 never leaves its idle period without arrivals"));
    }
    let n = tc.len();
    let busy: Vec<bool> = (0..n).map(|i| tc.state(i).i2 > 0).collect();
    let idle: Vec<bool> = busy.iter().map(|b| !b).collect();
    let mut into_busy = vec![0.0; n];
    let mut into_idle = vec![0.0; n];
    for s in 0..n {
        let ps = ss.pi[s];
        for (t, p) in tc.chain.row(s) {
            if busy[s] != busy[t] {
                if busy[t] {
                    into_busy[t] += ps * p;
                } else {
                    into_idle[t] += ps * p;
                }
            }
        }
    }
    let h_busy = mean_exit_times(&tc.chain, &busy)?;
    let h_idle = mean_exit_times(&tc.chain, &idle)?;
    let weighted = |w: &[f64], h: &[f64]| -> f64 {
        let total: f64 = w.iter().sum();
        w.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / total
    };
    let mean_busy = weighted(&into_busy, &h_busy);
    let mean_idle = weighted(&into_idle, &h_idle);
    let no_arrival = (-params.lambda2).exp() * (p_em1 + params.p1 * (1.0 - p_em1));
    Ok(BusyCycleStats {
        mean_idle,
        mean_busy,
        p_empty: mean_idle / (mean_idle + mean_busy),
        idle_closed_form: 1.0 / (1.0 - no_arrival),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyMetrics {
    /// Energy invested by S₁ per packet arriving at S₁.
    pub energy_per_packet_s1: f64,
    /// Energy invested by S₂ per packet entering S₂, using S₂'s own emptiness.
    pub energy_per_packet_s2: f64,
    /// Same quantity evaluated with S₁'s emptiness probability.
    pub energy_per_packet_s2_node1_reading: f64,
}

pub fn energy_per_packet(
    s1: &BusyCycleStats,
    s2: &BusyCycleStats,
    params: &LineNetworkParams,
) -> Result<EnergyMetrics> {
    if params.lambda1 <= 0.0 {
        return Err(Error::domain("energy per packet at S1 needs lambda1 > 0"));
    }
    let rate2 = params.lambda1 + params.lambda2;
    let e = &params.energy;
    Ok(EnergyMetrics {
        energy_per_packet_s1: (1.0 - s1.p_empty) * e.e1 / params.lambda1,
        energy_per_packet_s2: (1.0 - s2.p_empty) * e.e2 / rate2,
        energy_per_packet_s2_node1_reading: (1.0 - s1.p_empty) * e.e2 / rate2,
    })
}

/// Everything reported for one parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowMetrics {
    pub delay_node1: f64,
    pub delay_node2: f64,
    pub flow1_end_to_end: f64,
    pub flow2_end_to_end: f64,
    pub energy_per_packet_s1: f64,
    pub energy_per_packet_s2: f64,
}

#[derive(Debug, Clone)]
pub struct InterReport {
    pub caps: [usize; 2],
    pub residual: f64,
    pub mean_i1: f64,
    pub mean_i2: f64,
    /// Stationary P(i1 = 0) and P(i2 = 0).
    pub stationary_empty: [f64; 2],
    pub metrics: FlowMetrics,
    pub energy: EnergyMetrics,
    pub busy: [BusyCycleStats; 2],
    pub boundary_mass: f64,
}

impl CapMetrics for InterReport {
    fn convergence_metrics(&self) -> Vec<f64> {
        let m = &self.metrics;
        vec![
            self.mean_i1,
            self.mean_i2,
            m.delay_node1,
            m.delay_node2,
            m.energy_per_packet_s1,
            m.energy_per_packet_s2,
            self.busy[0].p_empty,
            self.busy[1].p_empty,
        ]
    }

    fn boundary_mass(&self) -> f64 {
        self.boundary_mass
    }
}

pub const DEFAULT_CAP: usize = 60;

/// Builds, solves and post-processes the chain at fixed caps.
pub fn analyze_at(params: &LineNetworkParams, caps: [usize; 2], opts: &ModelOptions) -> Result<InterReport> {
    params.require_stable()?;
    let tc = build_chain(params, caps, opts.eps_tail)?;
    let ss = steady_state(&tc, opts.solver)?;
    let delays = mean_delays(&ss, params)?;
    let b1 = busy_cycle(&tc, &ss, params, Node::S1, opts.eps_tail)?;
    let b2 = busy_cycle(&tc, &ss, params, Node::S2, opts.eps_tail)?;
    let energy = energy_per_packet(&b1, &b2, params)?;
    Ok(InterReport {
        caps,
        residual: ss.residual,
        mean_i1: ss.mean_i1(),
        mean_i2: ss.mean_i2(),
        stationary_empty: [ss.p_empty1(), ss.p_empty2()],
        metrics: FlowMetrics {
            delay_node1: delays.delay_node1,
            delay_node2: delays.delay_node2,
            flow1_end_to_end: delays.flow1_end_to_end,
            flow2_end_to_end: delays.flow2_end_to_end,
            energy_per_packet_s1: energy.energy_per_packet_s1,
            energy_per_packet_s2: energy.energy_per_packet_s2,
        },
        energy,
        busy: [b1, b2],
        boundary_mass: ss.boundary_mass(),
    })
}

/// Full analysis with caps chosen per `opts.caps`.
pub fn analyze(params: &LineNetworkParams, opts: &ModelOptions) -> Result<InterReport> {
    params.validate()?;
    opts.validate()?;
    params.require_stable()?;
    resolve_caps(&opts.caps, DEFAULT_CAP, opts.boundary_eps, |caps| analyze_at(params, caps, opts))
        .map(|(_, r)| r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::DEFAULT_EPS_TAIL;

    fn worked() -> LineNetworkParams {
        LineNetworkParams::new(0.0, 0.0, 0.3, 0.4)
    }

    fn row_sum(state: GenieState, params: &LineNetworkParams) -> f64 {
        let mut s = 0.0;
        for d1 in -1..=40 {
            for d2 in -1..=41 {
                s += transition_prob(state, (d1, d2), params).unwrap();
            }
        }
        s
    }

    #[test]
    fn empty_system_without_arrivals_stays_put() {
        let p = worked();
        assert_eq!(transition_prob(GenieState::new(0, 0), (0, 0), &p).unwrap(), 1.0);
        assert_eq!(transition_prob(GenieState::new(0, 0), (1, 0), &p).unwrap(), 0.0);
    }

    #[test]
    fn worked_values_at_one_one() {
        let p = worked();
        let s = GenieState::new(1, 1);
        let cases = [((-1, 0), 0.42), ((-1, 1), 0.28), ((0, -1), 0.18), ((0, 0), 0.12)];
        for (d, v) in cases {
            assert!((transition_prob(s, d, &p).unwrap() - v).abs() < 1e-15, "{d:?}");
        }
        let total: f64 = cases.iter().map(|c| c.1).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!((row_sum(s, &p) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rows_sum_to_one() {
        let p = LineNetworkParams::new(0.12, 0.25, 0.3, 0.4);
        for i1 in 0..4 {
            for i2 in 0..4 {
                assert!((row_sum(GenieState::new(i1, i2), &p) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pgf_worked_point() {
        let p = worked();
        let z = (Complex64::new(0.5, 0.0), Complex64::new(2.0, 0.0));
        let closed = pgf(GenieState::new(1, 1), z, &p).unwrap();
        let by_kernel = 0.42 / 0.5 + 0.28 / 0.5 * 2.0 + 0.18 / 2.0 + 0.12;
        assert!((closed.re - by_kernel).abs() < 1e-12);
        assert!((closed.re - 2.17).abs() < 1e-12);
        assert_eq!(closed.im, 0.0);
    }

    #[test]
    fn pgf_normalized_and_trivial() {
        let p = LineNetworkParams::new(0.3, 0.2, 0.1, 0.5);
        let one = (Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0));
        for (i1, i2) in [(0, 0), (0, 3), (2, 0), (5, 5)] {
            assert!((pgf(GenieState::new(i1, i2), one, &p).unwrap() - 1.0).norm() < 1e-12);
        }
        let z = (Complex64::new(0.3, 1.0), Complex64::new(-2.0, 0.5));
        assert!((pgf(GenieState::new(0, 0), z, &worked()).unwrap() - 1.0).norm() < 1e-15);
    }

    #[test]
    fn pgf_poles() {
        let p = worked();
        let zero = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        assert!(matches!(pgf(GenieState::new(1, 0), (zero, one), &p), Err(Error::Domain(_))));
        assert!(matches!(pgf(GenieState::new(0, 1), (one, zero), &p), Err(Error::Domain(_))));
        // no negative power present: fine
        assert!(pgf(GenieState::new(0, 0), (zero, zero), &p).is_ok());
    }

    #[test]
    fn cap_one_without_arrivals() {
        let tc = build_chain(&worked(), 1, DEFAULT_EPS_TAIL).unwrap();
        assert_eq!(tc.len(), 4);
        assert!(tc.chain.max_row_defect() < 1e-15);
        let ss = steady_state(&tc, SolverOptions::default()).unwrap();
        assert!((ss.prob(0, 0) - 1.0).abs() < 1e-12);
        assert!(build_chain(&worked(), 0, DEFAULT_EPS_TAIL).is_err());
    }

    #[test]
    fn interior_rows_match_kernel() {
        let p = LineNetworkParams::new(0.12, 0.25, 0.3, 0.4);
        let tc = build_chain(&p, 20, DEFAULT_EPS_TAIL).unwrap();
        assert!(tc.chain.max_row_defect() < 1e-12);
        assert!(tc.tail_mass <= 2.0 * DEFAULT_EPS_TAIL);
        for (i1, i2) in [(0, 0), (1, 1), (3, 2), (0, 4)] {
            for d1 in -1..=4i64 {
                for d2 in -1..=5i64 {
                    let (t1, t2) = (i1 as i64 + d1, i2 as i64 + d2);
                    if t1 < 0 || t2 < 0 {
                        continue;
                    }
                    let from = GenieState::new(i1, i2);
                    let to = GenieState::new(t1 as u32, t2 as u32);
                    let exact = transition_prob(from, (d1, d2), &p).unwrap();
                    assert!((tc.prob(from, to) - exact).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn stationary_satisfies_boundary_identities() {
        let p = LineNetworkParams::new(0.12, 0.25, 0.3, 0.4);
        let tc = build_chain(&p, 30, DEFAULT_EPS_TAIL).unwrap();
        let ss = steady_state(&tc, SolverOptions::default()).unwrap();
        assert!(ss.residual <= 1e-12);
        assert!((ss.pi.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(ss.pi.iter().all(|&v| v >= 0.0));
        assert!(ss.balance_residuals.iter().all(|&r| r < 1e-9));
    }

    #[test]
    fn s1_idle_closed_form() {
        let p = LineNetworkParams::new(0.12, 0.25, 0.3, 0.4);
        let b = busy_cycle_s1(&p, 60, DEFAULT_EPS_TAIL).unwrap();
        assert!((b.mean_idle - 1.0 / (1.0 - (-0.12f64).exp())).abs() < 1e-12);
        assert!((b.mean_idle - 8.843_337).abs() < 1e-5);
        assert!((b.p_empty - b.mean_idle / (b.mean_idle + b.mean_busy)).abs() < 1e-12);
    }

    #[test]
    fn idle_mean_tends_to_one_for_heavy_arrivals() {
        let p = LineNetworkParams::new(30.0, 0.0, 0.0, 0.0);
        assert!((1.0 / (1.0 - (-p.lambda1).exp()) - 1.0) < 1e-12);
    }

    #[test]
    fn renewal_ratio_matches_stationary_emptiness() {
        let p = LineNetworkParams::new(0.12, 0.25, 0.3, 0.4);
        let r = analyze_at(&p, [40, 40], &ModelOptions::default()).unwrap();
        assert!((r.busy[0].p_empty - r.stationary_empty[0]).abs() < 1e-9);
        assert!((r.busy[1].p_empty - r.stationary_empty[1]).abs() < 1e-9);
        // the independence closed form is only an approximation at S2
        assert!((r.busy[1].idle_closed_form / r.busy[1].mean_idle - 1.0).abs() < 0.1);
    }

    #[test]
    fn energy_edge_cases() {
        let mut p = LineNetworkParams::new(0.12, 0.25, 0.3, 0.4);
        p.energy.e1 = 0.0;
        let r = analyze_at(&p, [30, 30], &ModelOptions::default()).unwrap();
        assert_eq!(r.metrics.energy_per_packet_s1, 0.0);
        // a queue that is busy most of the time spends nearly E1 per arrival slot
        let hot = LineNetworkParams::new(0.65, 0.0, 0.3, 0.0);
        let b = busy_cycle_s1(&hot, 400, DEFAULT_EPS_TAIL).unwrap();
        assert!(b.p_empty < 0.08);
    }

    #[test]
    fn unstable_rejected() {
        let p = LineNetworkParams::new(0.4, 0.25, 0.3, 0.4);
        assert!(matches!(analyze(&p, &ModelOptions::default()), Err(Error::Instability(_))));
        let tc = build_chain(&p, 5, DEFAULT_EPS_TAIL).unwrap();
        assert!(!tc.stable);
    }
}
