//! Genie-aided intra-session-coded two-hop queue.
//!
//! S₂ keeps one queue per flow and serves exactly one of them per slot, so the
//! state grows to `(i1, i2, i3)`: flow-1 dof at S₁, flow-1 dof at S₂ and
//! flow-2 dof at S₂ (each counted until seen downstream).

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::genie_inter::{transition_unchecked, GenieState};
use crate::kernels::{arrival_law, poisson_pmf, service_prob, ArrivalLaw, LineNetworkParams};
use crate::markov::{stationary, SolverOptions, TransitionOperator};
use crate::truncation::{resolve_caps, CapMetrics, ModelOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IntraState {
    pub i1: u32,
    pub i2: u32,
    pub i3: u32,
}

impl IntraState {
    pub fn new(i1: u32, i2: u32, i3: u32) -> Self {
        IntraState { i1, i2, i3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flow {
    One,
    Two,
}

/// Which flow S₂ serves in a slot.
#[derive(Clone)]
pub enum SchedulingPolicy {
    /// Flow 1 with probability `P_s`, flow 2 otherwise, independent of the state.
    Randomized(f64),
    /// Deterministic choice per state.
    StateBased(Arc<dyn Fn(IntraState) -> Flow + Send + Sync>),
}

impl fmt::Debug for SchedulingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedulingPolicy::Randomized(ps) => write!(f, "Randomized({ps})"),
            SchedulingPolicy::StateBased(_) => write!(f, "StateBased(..)"),
        }
    }
}

impl SchedulingPolicy {
    pub fn state_based(rule: impl Fn(IntraState) -> Flow + Send + Sync + 'static) -> Self {
        SchedulingPolicy::StateBased(Arc::new(rule))
    }

    /// Serve the flow with the longer queue at S₂, flow 1 on ties.
    pub fn longest_queue() -> Self {
        Self::state_based(|s| if s.i2 >= s.i3 { Flow::One } else { Flow::Two })
    }

    pub fn validate(&self) -> Result<()> {
        if let SchedulingPolicy::Randomized(ps) = self {
            if !(0.0..=1.0).contains(ps) {
                return Err(Error::arg(format!("P_s must lie in [0, 1], got {ps}")));
            }
        }
        Ok(())
    }

    /// Probability the policy itself picks flow 1 in `state`.
    fn scheduled_flow1(&self, state: IntraState) -> f64 {
        match self {
            SchedulingPolicy::Randomized(ps) => *ps,
            SchedulingPolicy::StateBased(rule) => match rule(state) {
                Flow::One => 1.0,
                Flow::Two => 0.0,
            },
        }
    }
}

/// What happens in a slot scheduled to a flow whose S₂ queue is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ServiceMode {
    /// The slot goes to the other flow if that one is nonempty.
    #[default]
    Override,
    /// The slot is idle on the second hop.
    Strict,
}

/// Probability that S₂ serves flow 1 in `state`, overrides included.
pub fn effective_flow1(state: IntraState, policy: &SchedulingPolicy, mode: ServiceMode) -> f64 {
    let ps = policy.scheduled_flow1(state);
    match mode {
        ServiceMode::Override if state.i2 == 0 && state.i3 > 0 => 0.0,
        ServiceMode::Override if state.i3 == 0 && state.i2 > 0 => 1.0,
        _ => ps,
    }
}

fn arrival(x: i64, lambda: f64) -> f64 {
    if x < 0 {
        0.0
    } else {
        poisson_pmf(x as u64, lambda)
    }
}

/// `P(Δ | state, flow 1 served)`.
pub fn transition_given_flow1(state: IntraState, delta: (i64, i64, i64), params: &LineNetworkParams) -> Result<f64> {
    params.validate()?;
    Ok(given_flow1(state, delta, params))
}

fn given_flow1(state: IntraState, (d1, d2, d3): (i64, i64, i64), params: &LineNetworkParams) -> f64 {
    let flow1_only = LineNetworkParams {
        lambda2: 0.0,
        ..*params
    };
    arrival(d3, params.lambda2) * transition_unchecked(GenieState::new(state.i1, state.i2), (d1, d2), &flow1_only)
}

/// `P(Δ | state, flow 2 served)`.
pub fn transition_given_flow2(state: IntraState, delta: (i64, i64, i64), params: &LineNetworkParams) -> Result<f64> {
    params.validate()?;
    Ok(given_flow2(state, delta, params))
}

fn given_flow2(state: IntraState, (d1, d2, d3): (i64, i64, i64), params: &LineNetworkParams) -> f64 {
    let (l1, l2) = (params.lambda1, params.lambda2);
    let s30 = service_prob(0, state.i3 as u64, 1, params.p2);
    let s31 = service_prob(1, state.i3 as u64, 1, params.p2);
    let s10 = service_prob(0, state.i1 as u64, 1, params.p1);
    let s11 = service_prob(1, state.i1 as u64, 1, params.p1);
    let flow2 = s31 * arrival(d3 + 1, l2) + s30 * arrival(d3, l2);
    let link1 = match d2 {
        1 => s11 * arrival(d1 + 1, l1),
        0 => s10 * arrival(d1, l1),
        _ => 0.0,
    };
    flow2 * link1
}

/// One-slot kernel under `policy`, with the degenerate-state override applied
/// first in [`ServiceMode::Override`].
pub fn policy_kernel(
    state: IntraState,
    delta: (i64, i64, i64),
    params: &LineNetworkParams,
    policy: &SchedulingPolicy,
    mode: ServiceMode,
) -> Result<f64> {
    params.validate()?;
    policy.validate()?;
    let w1 = effective_flow1(state, policy, mode);
    let mut p = 0.0;
    if w1 > 0.0 {
        p += w1 * given_flow1(state, delta, params);
    }
    if w1 < 1.0 {
        p += (1.0 - w1) * given_flow2(state, delta, params);
    }
    Ok(p)
}

/// Sufficient conditions for a stationary regime under `policy` and `mode`.
///
/// For state-based policies only the throughput conditions are checked; the
/// truncation boundary test covers the rest.
pub fn check_stability(params: &LineNetworkParams, policy: &SchedulingPolicy, mode: ServiceMode) -> Result<()> {
    let (l1, l2) = (params.lambda1, params.lambda2);
    let (q1, q2) = (1.0 - params.p1, 1.0 - params.p2);
    if l1 >= q1 {
        return Err(Error::Instability(format!("flow 1 at S1: lambda1 = {l1} >= 1 - p1 = {q1}")));
    }
    match (mode, policy) {
        (ServiceMode::Strict, SchedulingPolicy::Randomized(ps)) => {
            if l1 >= ps * q2 {
                return Err(Error::Instability(format!(
                    "flow 1 at S2: lambda1 = {l1} >= P_s (1 - p2) = {}",
                    ps * q2
                )));
            }
            if l2 >= (1.0 - ps) * q2 {
                return Err(Error::Instability(format!(
                    "flow 2 at S2: lambda2 = {l2} >= (1 - P_s)(1 - p2) = {}",
                    (1.0 - ps) * q2
                )));
            }
        }
        _ => {
            if l1 + l2 >= q2 {
                return Err(Error::Instability(format!(
                    "S2 shared by both flows: lambda1 + lambda2 = {} >= 1 - p2 = {q2}",
                    l1 + l2
                )));
            }
        }
    }
    Ok(())
}

/// Matrix-free truncated chain on `0..=caps[0] × 0..=caps[1] × 0..=caps[2]`.
///
/// A slot is applied as a service step followed by the two arrival
/// convolutions; mass beyond a cap lands on the cap.
pub struct IntraChain {
    pub caps: [usize; 3],
    params: LineNetworkParams,
    flow1: Vec<f64>,
    law1: ArrivalLaw,
    law2: ArrivalLaw,
}

impl IntraChain {
    pub fn new(
        params: &LineNetworkParams,
        policy: &SchedulingPolicy,
        mode: ServiceMode,
        caps: [usize; 3],
        eps_tail: f64,
    ) -> Result<Self> {
        params.validate()?;
        policy.validate()?;
        crate::kernels::check_eps(eps_tail)?;
        if caps.iter().any(|&c| c < 1) {
            return Err(Error::arg(format!("cap must be >= 1, got {caps:?}")));
        }
        let n = (caps[0] + 1) * (caps[1] + 1) * (caps[2] + 1);
        let mut chain = IntraChain {
            caps,
            params: *params,
            flow1: Vec::with_capacity(n),
            law1: arrival_law(params.lambda1, eps_tail),
            law2: arrival_law(params.lambda2, eps_tail),
        };
        for idx in 0..n {
            let s = chain.state(idx);
            chain.flow1.push(effective_flow1(s, policy, mode));
        }
        Ok(chain)
    }

    pub fn len(&self) -> usize {
        self.flow1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flow1.is_empty()
    }

    pub fn index(&self, s: IntraState) -> usize {
        let [c1, c2, _] = self.caps;
        (s.i3 as usize * (c2 + 1) + s.i2 as usize) * (c1 + 1) + s.i1 as usize
    }

    pub fn state(&self, idx: usize) -> IntraState {
        let [c1, c2, _] = self.caps;
        let i1 = idx % (c1 + 1);
        let rest = idx / (c1 + 1);
        IntraState::new(i1 as u32, (rest % (c2 + 1)) as u32, (rest / (c2 + 1)) as u32)
    }

    fn service_step(&self, x: &[f64], out: &mut [f64]) {
        let [c1, c2, _] = self.caps;
        let (q1, q2) = (1.0 - self.params.p1, 1.0 - self.params.p2);
        let (w1, w2) = (c1 + 1, (c1 + 1) * (c2 + 1));
        out.iter_mut().for_each(|v| *v = 0.0);
        for (idx, &m) in x.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let s = self.state(idx);
            let (i1, i2, i3) = (s.i1 as usize, s.i2 as usize, s.i3 as usize);
            let f1 = self.flow1[idx];
            let qa = if i1 > 0 { q1 } else { 0.0 };
            for (y1, py1) in [(0usize, 1.0 - qa), (1, qa)] {
                if py1 == 0.0 {
                    continue;
                }
                let b1 = i1 - y1;
                let up = (i2 + y1).min(c2);
                // flow 1 served: i2 may drop by one
                if f1 > 0.0 {
                    let qb = if i2 > 0 { q2 } else { 0.0 };
                    let w = m * py1 * f1;
                    out[i3 * w2 + up * w1 + b1] += w * (1.0 - qb);
                    if qb > 0.0 {
                        out[i3 * w2 + (i2 + y1 - 1).min(c2) * w1 + b1] += w * qb;
                    }
                }
                // flow 2 served: i3 may drop by one
                if f1 < 1.0 {
                    let qc = if i3 > 0 { q2 } else { 0.0 };
                    let w = m * py1 * (1.0 - f1);
                    out[i3 * w2 + up * w1 + b1] += w * (1.0 - qc);
                    if qc > 0.0 {
                        out[(i3 - 1) * w2 + up * w1 + b1] += w * qc;
                    }
                }
            }
        }
    }
}

/// Adds arrivals along one axis: `dst[.., min(b + k, cap), ..] += src[.., b, ..] a(k)`.
fn convolve_axis(src: &[f64], dst: &mut [f64], law: &ArrivalLaw, stride: usize, cap: usize) {
    dst.iter_mut().for_each(|v| *v = 0.0);
    let len = cap + 1;
    let block = stride * len;
    for (chunk_src, chunk_dst) in src.chunks(block).zip(dst.chunks_mut(block)) {
        for inner in 0..stride {
            for b in 0..len {
                let m = chunk_src[b * stride + inner];
                if m == 0.0 {
                    continue;
                }
                let mut at_cap = 0.0;
                for (k, p) in law.lumped() {
                    let t = b + k;
                    if t >= cap {
                        at_cap += p;
                    } else {
                        chunk_dst[t * stride + inner] += m * p;
                    }
                }
                chunk_dst[cap * stride + inner] += m * at_cap;
            }
        }
    }
}

impl TransitionOperator for IntraChain {
    fn dim(&self) -> usize {
        self.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let [c1, c2, c3] = self.caps;
        let mut a = vec![0.0; x.len()];
        self.service_step(x, &mut a);
        convolve_axis(&a, out, &self.law1, 1, c1);
        convolve_axis(out, &mut a, &self.law2, (c1 + 1) * (c2 + 1), c3);
        out.copy_from_slice(&a);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntraFlowMetrics {
    /// E[D₁¹]: flow-1 delay at S₁.
    pub d1_flow1: f64,
    /// E[D₂¹]: flow-1 delay at S₂.
    pub d2_flow1: f64,
    /// E[D₂²]: flow-2 delay at S₂.
    pub d2_flow2: f64,
    pub flow1_total: f64,
    pub flow2_total: f64,
    pub fairness_gap: f64,
}

#[derive(Debug, Clone)]
pub struct IntraReport {
    pub caps: [usize; 3],
    pub residual: f64,
    pub iterations: usize,
    pub mean_queue: [f64; 3],
    /// Stationary P(i_k = 0) per coordinate.
    pub p_empty: [f64; 3],
    pub metrics: IntraFlowMetrics,
    pub boundary_mass: f64,
}

impl CapMetrics for IntraReport {
    fn convergence_metrics(&self) -> Vec<f64> {
        let m = &self.metrics;
        let mut v = vec![m.d1_flow1, m.d2_flow1, m.d2_flow2];
        v.extend(self.mean_queue);
        v.extend(self.p_empty);
        v.retain(|x| x.is_finite());
        v
    }

    fn boundary_mass(&self) -> f64 {
        self.boundary_mass
    }
}

/// Starting cap for every axis when caps are chosen automatically.
pub const DEFAULT_CAP: usize = 16;

#[derive(Debug, Clone, Default)]
pub struct IntraOptions {
    pub model: ModelOptions,
    pub mode: ServiceMode,
}

/// Little's-law delays from the stationary queue means.
///
/// A flow with zero arrival rate gets `NaN` delays (no packet ever arrives).
pub fn little_delays(mean_queue: [f64; 3], params: &LineNetworkParams) -> IntraFlowMetrics {
    let per = |q: f64, l: f64| if l > 0.0 { q / l } else { f64::NAN };
    let d1_flow1 = per(mean_queue[0], params.lambda1);
    let d2_flow1 = per(mean_queue[1], params.lambda1);
    let d2_flow2 = per(mean_queue[2], params.lambda2);
    let flow1_total = d1_flow1 + d2_flow1;
    IntraFlowMetrics {
        d1_flow1,
        d2_flow1,
        d2_flow2,
        flow1_total,
        flow2_total: d2_flow2,
        fairness_gap: (flow1_total - d2_flow2).abs(),
    }
}

fn initial_guess(caps: [usize; 3]) -> Vec<f64> {
    let [c1, c2, c3] = caps;
    let mut v = Vec::with_capacity((c1 + 1) * (c2 + 1) * (c3 + 1));
    for i3 in 0..=c3 {
        for i2 in 0..=c2 {
            for i1 in 0..=c1 {
                v.push(0.5f64.powi((i1 + i2 + i3) as i32));
            }
        }
    }
    v
}

/// Solves the chain at fixed caps.
pub fn analyze_at(
    params: &LineNetworkParams,
    policy: &SchedulingPolicy,
    caps: [usize; 3],
    opts: &IntraOptions,
    solver: SolverOptions,
) -> Result<IntraReport> {
    let chain = IntraChain::new(params, policy, opts.mode, caps, opts.model.eps_tail)?;
    let st = stationary(&chain, Some(&initial_guess(caps)), solver)?;
    let mut mean = [0.0; 3];
    let mut empty = [0.0; 3];
    let mut boundary = 0.0;
    for (idx, &p) in st.pi.iter().enumerate() {
        let s = chain.state(idx);
        let c = [s.i1 as usize, s.i2 as usize, s.i3 as usize];
        for k in 0..3 {
            mean[k] += p * c[k] as f64;
            if c[k] == 0 {
                empty[k] += p;
            }
        }
        if (0..3).any(|k| c[k] == caps[k]) {
            boundary += p;
        }
    }
    Ok(IntraReport {
        caps,
        residual: st.residual,
        iterations: st.iterations,
        mean_queue: mean,
        p_empty: empty,
        metrics: little_delays(mean, params),
        boundary_mass: boundary,
    })
}

/// Steady-state per-flow delays with caps chosen per `opts.model.caps`.
pub fn intra_metrics(params: &LineNetworkParams, policy: &SchedulingPolicy, opts: &IntraOptions) -> Result<IntraReport> {
    params.validate()?;
    policy.validate()?;
    opts.model.validate()?;
    check_stability(params, policy, opts.mode)?;
    let solver = opts.model.solver;
    resolve_caps(&opts.model.caps, DEFAULT_CAP, opts.model.boundary_eps, |caps| {
        analyze_at(params, policy, caps, opts, solver)
    })
    .map(|(_, r)| r)
}

#[derive(Debug, Clone, PartialEq)]
pub enum FairPoint {
    Found {
        ps: f64,
        /// Signed `flow1_total − flow2_total` at `ps`.
        gap: f64,
        evaluations: usize,
    },
    /// The signed gap keeps one sign on every probe in (0, 1).
    NoFairPoint { gap_low: f64, gap_high: f64 },
}

/// Finds `P_s` with `|flow1_total − flow2_total| ≤ tol` by bracketing and
/// bisection on the signed gap, which falls as flow 1 gets more service.
pub fn fairness_solve(params: &LineNetworkParams, opts: &IntraOptions, tol: f64) -> Result<FairPoint> {
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::arg("fairness tolerance must be >= 0"));
    }
    if params.lambda1 <= 0.0 || params.lambda2 <= 0.0 {
        return Err(Error::domain("delay fairness needs both flows to carry traffic"));
    }
    let evaluations = std::cell::Cell::new(0usize);
    let gap = |ps: f64| -> Result<f64> {
        evaluations.set(evaluations.get() + 1);
        let m = intra_metrics(params, &SchedulingPolicy::Randomized(ps), opts)?.metrics;
        Ok(m.flow1_total - m.flow2_total)
    };
    let found = |ps: f64, gap: f64| FairPoint::Found {
        ps,
        gap,
        evaluations: evaluations.get(),
    };
    let mid = 0.5;
    let g_mid = gap(mid)?;
    if g_mid.abs() <= tol {
        return Ok(found(mid, g_mid));
    }
    // walk towards the side that shrinks the gap until its sign flips
    let dir = if g_mid > 0.0 { 1.0 } else { -1.0 };
    let (mut inner, mut g_inner) = (mid, g_mid);
    let mut outer = None;
    let mut step = 0.25;
    for _ in 0..8 {
        let probe = inner + dir * step;
        let g = gap(probe)?;
        if g.abs() <= tol {
            return Ok(found(probe, g));
        }
        if (g > 0.0) != (g_mid > 0.0) {
            outer = Some(probe);
            break;
        }
        inner = probe;
        g_inner = g;
        step /= 2.0;
    }
    let Some(mut outer) = outer else {
        let (gap_low, gap_high) = if dir > 0.0 { (g_mid, g_inner) } else { (g_inner, g_mid) };
        return Ok(FairPoint::NoFairPoint { gap_low, gap_high });
    };
    loop {
        let m = 0.5 * (inner + outer);
        let g = gap(m)?;
        if g.abs() <= tol || (outer - inner).abs() < 1e-12 {
            return Ok(found(m, g));
        }
        if (g > 0.0) == (g_inner > 0.0) {
            inner = m;
            g_inner = g;
        } else {
            outer = m;
        }
    }
}
