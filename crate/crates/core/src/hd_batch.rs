//! Half-duplex batch-by-batch scheme.
//!
//! S₁ starts with `M1` dof for S₂, S₂ with `M2` dof of its own, and nothing new
//! arrives. The turn-by-turn chain on `(i1, i2, turn)` is absorbed once every
//! dof reached R; burst sizes are chosen per state.

use crate::error::{Error, Result};
use crate::hd_online::{HdState, Turn};
use crate::kernels::{binomial_pmf, check_erasure, service_row, EnergyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BatchObjective {
    #[default]
    Time,
    Energy,
    /// Mean time times mean energy from the start state.
    Product,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchConfig {
    pub m1: u32,
    pub m2: u32,
    pub p1: f64,
    pub p2: f64,
    pub energy: EnergyParams,
    pub objective: BatchObjective,
}

impl BatchConfig {
    pub fn new(m1: u32, m2: u32, p1: f64, p2: f64) -> Self {
        BatchConfig {
            m1,
            m2,
            p1,
            p2,
            energy: EnergyParams::default(),
            objective: BatchObjective::Time,
        }
    }

    pub fn with_energy(mut self, energy: EnergyParams) -> Self {
        self.energy = energy;
        self
    }

    pub fn with_objective(mut self, objective: BatchObjective) -> Self {
        self.objective = objective;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_erasure("p1", self.p1)?;
        check_erasure("p2", self.p2)?;
        self.energy.validate()?;
        if self.m1 == 0 && self.m2 == 0 {
            return Err(Error::arg("M1 and M2 cannot both be 0"));
        }
        Ok(())
    }

    /// Largest dof count S₂ can hold.
    pub fn total(&self) -> u32 {
        self.m1 + self.m2
    }

    pub fn start(&self) -> HdState {
        HdState::new(self.m1, self.m2, Turn::S1)
    }
}

/// Burst sizes `N1[i1]` and `N2[i1][i2]`; index 0 entries are unused.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PolicyTable {
    pub n1: Vec<u32>,
    pub n2: Vec<Vec<u32>>,
}

impl PolicyTable {
    /// `N1(i) = i`, `N2(i1, i2) = i2`: the starting point of the alternating search.
    pub fn identity(config: &BatchConfig) -> Self {
        let t = config.total();
        PolicyTable {
            n1: (0..=config.m1).collect(),
            n2: (0..=config.m1).map(|i1| (0..=t - i1).collect()).collect(),
        }
    }

    pub fn constant(config: &BatchConfig, n: u32) -> Self {
        let mut p = Self::identity(config);
        for v in p.n1.iter_mut().skip(1) {
            *v = n;
        }
        for row in &mut p.n2 {
            for v in row.iter_mut().skip(1) {
                *v = n;
            }
        }
        p
    }

    pub fn n1_at(&self, i1: u32) -> u32 {
        self.n1[i1 as usize]
    }

    pub fn n2_at(&self, i1: u32, i2: u32) -> u32 {
        self.n2[i1 as usize][i2 as usize]
    }

    pub fn validate(&self, config: &BatchConfig) -> Result<()> {
        let t = config.total() as usize;
        if self.n1.len() != config.m1 as usize + 1 || self.n2.len() != config.m1 as usize + 1 {
            return Err(Error::arg("policy table does not match M1"));
        }
        for (i1, row) in self.n2.iter().enumerate() {
            if row.len() != t - i1 + 1 {
                return Err(Error::arg(format!("N2 row {i1} must cover i2 = 0..={}", t - i1)));
            }
            if row.iter().skip(1).any(|&n| n == 0) {
                return Err(Error::arg(format!("N2({i1}, i2) must be >= 1 for i2 >= 1")));
            }
        }
        if self.n1.iter().skip(1).any(|&n| n == 0) {
            return Err(Error::arg("N1(i1) must be >= 1 for i1 >= 1"));
        }
        Ok(())
    }

    /// 64-bit FNV-1a digest of the table entries, for compact reporting.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u32| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        feed(self.n1.len() as u32);
        for &n in &self.n1 {
            feed(n);
        }
        for row in &self.n2 {
            feed(row.len() as u32);
            for &n in row {
                feed(n);
            }
        }
        h
    }
}

/// One turn: expected cost, and the distribution of the number of dof moved.
#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub slots: f64,
    pub energy: f64,
    /// `(m, P(m))` for `m = 0..`.
    pub moves: Vec<(u32, f64)>,
}

/// How one turn plays out from a nonempty queue.
pub trait RoundModel {
    /// S₁ turn with `i1 ≥ 1`.
    fn s1(&self, i1: u32, i2: u32) -> Round;
    /// S₂ turn with `i2 ≥ 1`.
    fn s2(&self, i1: u32, i2: u32) -> Round;
}

/// Coded rounds under a burst table.
pub struct CodedRounds<'a> {
    pub policy: &'a PolicyTable,
    pub config: &'a BatchConfig,
}

fn coded_moves(i: u32, n: u32, p: f64) -> Vec<(u32, f64)> {
    service_row(i as u64, n as u64, p)
        .into_iter()
        .enumerate()
        .map(|(m, pm)| (m as u32, pm))
        .collect()
}

impl RoundModel for CodedRounds<'_> {
    fn s1(&self, i1: u32, _i2: u32) -> Round {
        let n = self.policy.n1_at(i1);
        Round {
            slots: n as f64,
            energy: n as f64 * self.config.energy.e1,
            moves: coded_moves(i1, n, self.config.p1),
        }
    }

    fn s2(&self, i1: u32, i2: u32) -> Round {
        let n = self.policy.n2_at(i1, i2);
        let e = &self.config.energy;
        Round {
            slots: n as f64 + 1.0,
            energy: n as f64 * e.e2 + e.e_ack,
            moves: coded_moves(i2, n, self.config.p2),
        }
    }
}

/// Uncoded selective repeat: every unacknowledged packet is sent once per
/// turn and gets through independently.
pub struct SelectiveRepeatRounds<'a> {
    pub config: &'a BatchConfig,
}

fn bernoulli_successes(k: u32, p: f64) -> Vec<(u32, f64)> {
    (0..=k).map(|m| (m, binomial_pmf(m as u64, k as u64, 1.0 - p))).collect()
}

impl RoundModel for SelectiveRepeatRounds<'_> {
    fn s1(&self, b1: u32, _b2: u32) -> Round {
        Round {
            slots: b1 as f64,
            energy: b1 as f64 * self.config.energy.e1,
            moves: bernoulli_successes(b1, self.config.p1),
        }
    }

    fn s2(&self, _b1: u32, b2: u32) -> Round {
        let e = &self.config.energy;
        Round {
            slots: b2 as f64 + 1.0,
            energy: b2 as f64 * e.e2 + e.e_ack,
            moves: bernoulli_successes(b2, self.config.p2),
        }
    }
}

/// One-turn transition of the absorbing chain as `(Δ, probability)` pairs;
/// the turn always flips. Empty-queue turns pass with `Δ = (0, 0)`.
pub fn absorbing_kernel(state: HdState, policy: &PolicyTable, config: &BatchConfig) -> Result<Vec<((i64, i64), f64)>> {
    config.validate()?;
    policy.validate(config)?;
    if state.i1 > config.m1 || state.i1 + state.i2 > config.total() {
        return Err(Error::arg(format!("state {state:?} lies outside the batch")));
    }
    let rounds = CodedRounds { policy, config };
    let stay = vec![((0, 0), 1.0)];
    Ok(match state.turn {
        Turn::S1 if state.i1 == 0 => stay,
        Turn::S2 if state.i2 == 0 => stay,
        Turn::S1 => rounds
            .s1(state.i1, state.i2)
            .moves
            .into_iter()
            .map(|(m, p)| ((-(m as i64), m as i64), p))
            .collect(),
        Turn::S2 => rounds
            .s2(state.i1, state.i2)
            .moves
            .into_iter()
            .map(|(m, p)| ((0, -(m as i64)), p))
            .collect(),
    })
}

/// Mean completion time and energy from every start state.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionStats {
    pub m1: u32,
    pub m2: u32,
    /// `[S1, S2]` values per `(i1, i2)`, row-major with `total + 1` columns.
    time: Vec<[f64; 2]>,
    energy: Vec<[f64; 2]>,
    pub mean_time: f64,
    pub mean_energy: f64,
    pub product: f64,
}

impl CompletionStats {
    fn slot(&self, s: HdState) -> usize {
        s.i1 as usize * (self.m1 + self.m2 + 1) as usize + s.i2 as usize
    }

    fn turn(s: HdState) -> usize {
        match s.turn {
            Turn::S1 => 0,
            Turn::S2 => 1,
        }
    }

    pub fn time_from(&self, s: HdState) -> f64 {
        self.time[self.slot(s)][Self::turn(s)]
    }

    pub fn energy_from(&self, s: HdState) -> f64 {
        self.energy[self.slot(s)][Self::turn(s)]
    }

    pub fn objective(&self, obj: BatchObjective) -> f64 {
        match obj {
            BatchObjective::Time => self.mean_time,
            BatchObjective::Energy => self.mean_energy,
            BatchObjective::Product => self.product,
        }
    }
}

/// Expected additive cost to absorption from every state, for a per-round
/// cost `weigh(round)`. States are visited by total dof, then by `i1`: an S₁
/// turn keeps the total and lowers `i1`, an S₂ turn lowers the total, so only
/// the two turn states of the same `(i1, i2)` are coupled (through the
/// `m = 0` outcomes) and are solved jointly.
fn absorb_with(m1: u32, m2: u32, model: &dyn RoundModel, weigh: &dyn Fn(&Round) -> f64) -> Result<Vec<[f64; 2]>> {
    let t = m1 + m2;
    let w = (t + 1) as usize;
    let mut v = vec![[0.0f64; 2]; (m1 as usize + 1) * w];
    let at = |i1: u32, i2: u32| i1 as usize * w + i2 as usize;
    for total in 1..=t {
        for i1 in 0..=m1.min(total) {
            let i2 = total - i1;
            // T1 = r1 + q1 T2, T2 = r2 + q2 T1
            let (r1, q1) = if i1 == 0 {
                (0.0, 1.0)
            } else {
                let r = model.s1(i1, i2);
                let mut acc = weigh(&r);
                let mut q = 0.0;
                for &(m, p) in &r.moves {
                    if m == 0 {
                        q += p;
                    } else {
                        acc += p * v[at(i1 - m, i2 + m)][1];
                    }
                }
                (acc, q)
            };
            let (r2, q2) = if i2 == 0 {
                (0.0, 1.0)
            } else {
                let r = model.s2(i1, i2);
                let mut acc = weigh(&r);
                let mut q = 0.0;
                for &(m, p) in &r.moves {
                    if m == 0 {
                        q += p;
                    } else {
                        acc += p * v[at(i1, i2 - m)][0];
                    }
                }
                (acc, q)
            };
            let denom = 1.0 - q1 * q2;
            if denom <= 0.0 {
                return Err(Error::domain(format!(
                    "state ({i1}, {i2}) never makes progress under this policy"
                )));
            }
            let t1 = (r1 + q1 * r2) / denom;
            let t2 = r2 + q2 * t1;
            v[at(i1, i2)] = [t1, t2];
        }
    }
    Ok(v)
}

fn stats_from(config: &BatchConfig, model: &dyn RoundModel) -> Result<CompletionStats> {
    let time = absorb_with(config.m1, config.m2, model, &|r| r.slots)?;
    let energy = absorb_with(config.m1, config.m2, model, &|r| r.energy)?;
    let mut s = CompletionStats {
        m1: config.m1,
        m2: config.m2,
        time,
        energy,
        mean_time: 0.0,
        mean_energy: 0.0,
        product: 0.0,
    };
    let start = config.start();
    s.mean_time = s.time_from(start);
    s.mean_energy = s.energy_from(start);
    s.product = s.mean_time * s.mean_energy;
    Ok(s)
}

/// Exact completion time and energy tables for a coded burst policy.
pub fn completion_stats(policy: &PolicyTable, config: &BatchConfig) -> Result<CompletionStats> {
    config.validate()?;
    policy.validate(config)?;
    stats_from(config, &CodedRounds { policy, config })
}

pub fn completion_time(policy: &PolicyTable, config: &BatchConfig, start: HdState) -> Result<f64> {
    Ok(completion_stats(policy, config)?.time_from(start))
}

pub fn completion_energy(policy: &PolicyTable, config: &BatchConfig, start: HdState) -> Result<f64> {
    Ok(completion_stats(policy, config)?.energy_from(start))
}

/// Per-round costs of a single half-duplex link, in the units of the
/// objective being minimized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkCosts {
    /// Cost of each transmitted packet (1 for time, the slot energy otherwise).
    pub per_packet: f64,
    /// Cost added once per round by the link itself (the ACK slot).
    pub round_overhead: f64,
    /// Cost of waiting for the other node's turn between two rounds.
    pub waiting: f64,
}

impl LinkCosts {
    pub fn time(round_overhead: f64, waiting: f64) -> Self {
        LinkCosts {
            per_packet: 1.0,
            round_overhead,
            waiting,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkPlan {
    /// `n[i]` for `i = 0..=dof`; `n[0] = 0`.
    pub n: Vec<u32>,
    /// Optimal expected cost to deliver `i` dof.
    pub cost: Vec<f64>,
    /// Some level still had its argmin at the hard burst cap.
    pub boundary: bool,
}

/// Burst limit searched at dof level `i` before any widening.
pub fn default_n_max(i: u32, p: f64) -> u32 {
    (3.0 * i as f64 / (1.0 - p)).ceil() as u32 + 10
}

const HARD_N_CAP: u32 = 4096;
const TIE_RTOL: f64 = 1e-12;

/// Dynamic program upward in the dof count; `waiting(i, moves)` gives the
/// waiting cost of a round from level `i` with outcome law `moves`.
fn link_dp(
    dof: u32,
    p: f64,
    per_packet: f64,
    round_overhead: f64,
    waiting: &dyn Fn(u32, &[(u32, f64)]) -> f64,
    n_max: Option<u32>,
) -> LinkPlan {
    let mut n_tab = vec![0u32; dof as usize + 1];
    let mut cost = vec![0.0f64; dof as usize + 1];
    let mut boundary = false;
    for i in 1..=dof {
        let mut limit = n_max.unwrap_or_else(|| default_n_max(i, p)).max(1);
        loop {
            let mut best = (0u32, f64::INFINITY);
            for n in 1..=limit {
                let moves = coded_moves(i, n, p);
                let mut acc = per_packet * n as f64 + round_overhead + waiting(i, &moves);
                let mut stay = 0.0;
                for &(m, pm) in &moves {
                    if m == 0 {
                        stay += pm;
                    } else {
                        acc += pm * cost[(i - m) as usize];
                    }
                }
                if stay >= 1.0 {
                    continue;
                }
                let c = acc / (1.0 - stay);
                if best.0 == 0 || c < best.1 - TIE_RTOL * best.1.abs() {
                    best = (n, c);
                }
            }
            let at_edge = best.0 == limit;
            if at_edge && n_max.is_none() && limit < HARD_N_CAP {
                limit = (limit * 2).min(HARD_N_CAP);
                continue;
            }
            if at_edge && (n_max.is_some() || limit >= HARD_N_CAP) {
                boundary = boundary || n_max.is_none();
            }
            n_tab[i as usize] = best.0;
            cost[i as usize] = best.1;
            break;
        }
    }
    LinkPlan {
        n: n_tab,
        cost,
        boundary,
    }
}

/// Optimal burst per dof level for one half-duplex link with erasure `p`.
///
/// With `n_max = None` each level searches `1..=default_n_max(i, p)` and
/// widens the range while the argmin sits on its edge.
pub fn link_optimizer(dof: u32, p: f64, costs: LinkCosts, n_max: Option<u32>) -> Result<LinkPlan> {
    check_erasure("p", p)?;
    if dof < 1 {
        return Err(Error::arg("link_optimizer needs dof >= 1"));
    }
    for (name, v) in [
        ("per_packet", costs.per_packet),
        ("round_overhead", costs.round_overhead),
        ("waiting", costs.waiting),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::arg(format!("{name} must be finite and >= 0")));
        }
    }
    if n_max == Some(0) {
        return Err(Error::arg("N_max must be >= 1"));
    }
    let w = costs.waiting;
    Ok(link_dp(dof, p, costs.per_packet, costs.round_overhead, &|_, _| w, n_max))
}

/// Which waiting cost the S₂ step of the alternating search charges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum S2Waiting {
    /// The intervening S₁ turn, `N1(i1')` slots (S₁'s count is frozen while S₂ speaks).
    #[default]
    InterveningTurn,
    /// `Σ_{i2'} N2(i1', i2') P((i1', i2, S1) → (i1', i2', S1))`, as printed.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub max_iterations: usize,
    pub s2_waiting: S2Waiting,
    /// Burst limit per level; `None` uses [`default_n_max`] with widening.
    pub n_max: Option<u32>,
    /// After the link alternation settles, sweep single table entries against
    /// the exact objective until none improves.
    pub refine: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            max_iterations: 50,
            s2_waiting: S2Waiting::InterveningTurn,
            n_max: None,
            refine: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub policy: PolicyTable,
    pub stats: CompletionStats,
    /// Rounds of the link alternation.
    pub iterations: usize,
    /// Sweeps of the exact refinement (0 when disabled).
    pub refine_passes: usize,
    /// Some link level hit the hard burst cap.
    pub boundary: bool,
}

/// Weights `(time, energy)` of the additive per-round cost being minimized.
fn weights(config: &BatchConfig, current: &PolicyTable) -> Result<(f64, f64)> {
    Ok(match config.objective {
        BatchObjective::Time => (1.0, 0.0),
        BatchObjective::Energy => (0.0, 1.0),
        BatchObjective::Product => {
            // d(TE) = E dT + T dE: minimize E + (E/T) T around the current policy
            let s = completion_stats(current, config)?;
            if s.mean_time > 0.0 && s.mean_energy > 0.0 {
                (s.mean_energy / s.mean_time, 1.0)
            } else {
                (1.0, 1.0)
            }
        }
    })
}

/// Alternating per-link search for the burst tables.
pub fn algorithm1(config: &BatchConfig, opts: &SearchOptions) -> Result<SearchResult> {
    config.validate()?;
    if opts.n_max == Some(0) {
        return Err(Error::arg("N_max must be >= 1"));
    }
    let (m1, m2, t) = (config.m1, config.m2, config.total());
    let e = config.energy;
    let mut policy = PolicyTable::identity(config);
    let mut boundary = false;
    for iteration in 1..=opts.max_iterations {
        let previous = policy.clone();
        let (wt, we) = weights(config, &policy)?;

        // S1 step: S₁'s link sees S₂'s turn at (i1', M2) as waiting
        if m1 > 0 {
            let n2 = &policy.n2;
            let s2_cost = |i1p: u32| -> f64 {
                if m2 == 0 {
                    return 0.0;
                }
                let n = n2[i1p as usize][m2 as usize] as f64;
                wt * (n + 1.0) + we * (n * e.e2 + e.e_ack)
            };
            let waiting = |i1: u32, moves: &[(u32, f64)]| -> f64 {
                moves.iter().map(|&(m, pm)| pm * s2_cost(i1 - m)).sum()
            };
            let plan = link_dp(m1, config.p1, wt + we * e.e1, 0.0, &waiting, opts.n_max);
            boundary |= plan.boundary;
            policy.n1 = plan.n;
        }

        // S2 step: one link per frozen i1'
        for i1p in 0..=m1 {
            let top = t - i1p;
            if top == 0 {
                continue;
            }
            let n1 = policy.n1[i1p as usize] as f64;
            let s1_cost = wt * n1 + we * n1 * e.e1;
            let plan = match opts.s2_waiting {
                S2Waiting::InterveningTurn => link_dp(
                    top,
                    config.p2,
                    wt + we * e.e2,
                    wt + we * e.e_ack,
                    &|_, _| if i1p == 0 { 0.0 } else { s1_cost },
                    opts.n_max,
                ),
                S2Waiting::Printed => {
                    let row = previous.n2[i1p as usize].clone();
                    let nw = policy.n1[i1p as usize];
                    let p1 = config.p1;
                    let printed = move |i2: u32, _moves: &[(u32, f64)]| -> f64 {
                        if i1p == 0 {
                            return 0.0;
                        }
                        // S₁'s burst moves m dof, landing S₂ at i2 + m
                        coded_moves(i1p, nw, p1)
                            .iter()
                            .map(|&(m, pm)| {
                                let j = ((i2 + m) as usize).min(row.len() - 1);
                                pm * (wt + we * e.e2) * row[j] as f64
                            })
                            .sum()
                    };
                    link_dp(top, config.p2, wt + we * e.e2, wt + we * e.e_ack, &printed, opts.n_max)
                }
            };
            boundary |= plan.boundary;
            policy.n2[i1p as usize] = plan.n;
        }

        if policy == previous {
            let (policy, stats, refine_passes) = if opts.refine {
                refine(config, policy, opts)?
            } else {
                let stats = completion_stats(&policy, config)?;
                (policy, stats, 0)
            };
            return Ok(SearchResult {
                policy,
                stats,
                iterations: iteration,
                refine_passes,
                boundary,
            });
        }
    }
    Err(Error::PolicyNonConvergence {
        iterations: opts.max_iterations,
    })
}

/// Coordinate sweeps over the table entries on the exact objective. Each
/// entry takes the best burst in its search range, keeping the current value
/// on ties, so the result cannot be improved by changing any single entry.
fn refine(config: &BatchConfig, mut policy: PolicyTable, opts: &SearchOptions) -> Result<(PolicyTable, CompletionStats, usize)> {
    #[derive(Clone, Copy)]
    enum Entry {
        N1(usize),
        N2(usize, usize),
    }
    fn set(t: &mut PolicyTable, e: Entry, n: u32) {
        match e {
            Entry::N1(i1) => t.n1[i1] = n,
            Entry::N2(i1, i2) => t.n2[i1][i2] = n,
        }
    }
    let obj = config.objective;
    let eval = |p: &PolicyTable| -> Result<f64> { Ok(completion_stats(p, config)?.objective(obj)) };
    let mut current = eval(&policy)?;
    let mut entries: Vec<Entry> = (1..=config.m1 as usize).map(Entry::N1).collect();
    for (i1, row) in policy.n2.iter().enumerate() {
        entries.extend((1..row.len()).map(|i2| Entry::N2(i1, i2)));
    }
    for pass in 1..=opts.max_iterations {
        let mut changed = false;
        for &e in &entries {
            let (level, p, original) = match e {
                Entry::N1(i1) => (i1 as u32, config.p1, policy.n1[i1]),
                Entry::N2(i1, i2) => (i2 as u32, config.p2, policy.n2[i1][i2]),
            };
            let mut limit = opts.n_max.unwrap_or_else(|| default_n_max(level, p)).max(1);
            let mut trial = policy.clone();
            let mut best = (original, current);
            let mut from = 1;
            loop {
                for n in (from..=limit).filter(|&n| n != original) {
                    set(&mut trial, e, n);
                    let v = eval(&trial)?;
                    if v < best.1 - TIE_RTOL * best.1.abs() {
                        best = (n, v);
                    }
                }
                if best.0 == limit && opts.n_max.is_none() && limit < HARD_N_CAP {
                    from = limit + 1;
                    limit = (limit * 2).min(HARD_N_CAP);
                    continue;
                }
                break;
            }
            if best.0 != original {
                set(&mut policy, e, best.0);
                current = best.1;
                changed = true;
            }
        }
        if !changed {
            let stats = completion_stats(&policy, config)?;
            return Ok((policy, stats, pass));
        }
    }
    Err(Error::PolicyNonConvergence {
        iterations: opts.max_iterations,
    })
}

/// Completion statistics of uncoded selective repeat under the same rounds.
pub fn selective_repeat_baseline(config: &BatchConfig) -> Result<CompletionStats> {
    config.validate()?;
    stats_from(config, &SelectiveRepeatRounds { config })
}

/// Genie-aided full-duplex reference: both nodes send every slot they hold
/// something, so each transmission is useful.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenieBound {
    /// `M1 E1 / (1 − p1) + (M1 + M2) E2 / (1 − p2)`.
    pub energy: f64,
    pub mean_time: f64,
}

pub fn genie_full_duplex(config: &BatchConfig) -> Result<GenieBound> {
    config.validate()?;
    let (m1, m2) = (config.m1 as f64, config.m2 as f64);
    let (q1, q2) = (1.0 - config.p1, 1.0 - config.p2);
    let energy = m1 * config.energy.e1 / q1 + (m1 + m2) * config.energy.e2 / q2;
    // T(i1, i2) = 1 + Σ P(y1) P(y2) T(i1 − y1, i2 + y1 − y2), solved by total then i1
    let t = config.total() as usize;
    let w = t + 1;
    let mut v = vec![0.0f64; (config.m1 as usize + 1) * w];
    for total in 1..=t {
        for i1 in 0..=(config.m1 as usize).min(total) {
            let i2 = total - i1;
            let a = if i1 > 0 { q1 } else { 0.0 };
            let b = if i2 > 0 { q2 } else { 0.0 };
            let mut acc = 1.0;
            let mut stay = 0.0;
            for (y1, py1) in [(0usize, 1.0 - a), (1, a)] {
                for (y2, py2) in [(0usize, 1.0 - b), (1, b)] {
                    let pr = py1 * py2;
                    if pr == 0.0 {
                        continue;
                    }
                    let (j1, j2) = (i1 - y1, i2 + y1 - y2);
                    if (j1, j2) == (i1, i2) {
                        stay += pr;
                    } else {
                        acc += pr * v[j1 * w + j2];
                    }
                }
            }
            v[i1 * w + i2] = acc / (1.0 - stay);
        }
    }
    Ok(GenieBound {
        energy,
        mean_time: v[config.m1 as usize * w + config.m2 as usize],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(m2: u32, p2: f64) -> BatchConfig {
        BatchConfig::new(0, m2, 0.3, p2)
    }

    #[test]
    fn kernel_examples() {
        let cfg = BatchConfig::new(1, 1, 0.3, 0.4);
        let pol = PolicyTable::identity(&cfg);
        let k = absorbing_kernel(HdState::new(0, 0, Turn::S1), &pol, &cfg).unwrap();
        assert_eq!(k, vec![((0, 0), 1.0)]);
        let k = absorbing_kernel(HdState::new(1, 0, Turn::S1), &pol, &cfg).unwrap();
        assert_eq!(k.len(), 2);
        assert!((k[0].1 - 0.3).abs() < 1e-15 && k[0].0 == (0, 0));
        assert!((k[1].1 - 0.7).abs() < 1e-15 && k[1].0 == (-1, 1));
    }

    #[test]
    fn kernel_rows_sum_to_one() {
        let cfg = BatchConfig::new(3, 3, 0.35, 0.45);
        let pol = PolicyTable::constant(&cfg, 4);
        for i1 in 0..=3 {
            for i2 in 0..=3 {
                for turn in [Turn::S1, Turn::S2] {
                    let k = absorbing_kernel(HdState::new(i1, i2, turn), &pol, &cfg).unwrap();
                    let s: f64 = k.iter().map(|x| x.1).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_link_closed_forms() {
        let cfg = link(1, 0.5).with_energy(EnergyParams {
            e1: 1.0,
            e2: 2.0,
            e_ack: 0.0,
        });
        let pol = PolicyTable::identity(&cfg);
        let s = completion_stats(&pol, &cfg).unwrap();
        assert!((s.mean_time - 4.0).abs() < 1e-12);
        assert!((s.mean_energy - 4.0).abs() < 1e-12);
        assert_eq!(s.time_from(HdState::new(0, 0, Turn::S2)), 0.0);
    }

    #[test]
    fn zero_energy_costs_nothing() {
        let cfg = BatchConfig::new(2, 2, 0.3, 0.4).with_energy(EnergyParams {
            e1: 0.0,
            e2: 0.0,
            e_ack: 0.0,
        });
        let s = completion_stats(&PolicyTable::identity(&cfg), &cfg).unwrap();
        assert_eq!(s.mean_energy, 0.0);
        assert!(s.mean_time > 0.0);
    }

    #[test]
    fn link_optimizer_tie_breaks_low() {
        let plan = link_optimizer(1, 0.5, LinkCosts::time(0.0, 1.0), None).unwrap();
        assert_eq!(plan.n[1], 1);
        assert!((plan.cost[1] - 4.0).abs() < 1e-12);
        assert!(!plan.boundary);
        let plan = link_optimizer(1, 0.5, LinkCosts::time(0.0, 0.0), None).unwrap();
        assert_eq!(plan.n[1], 1);
        assert!((plan.cost[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lossless_link_sends_exactly() {
        let plan = link_optimizer(6, 0.0, LinkCosts::time(1.0, 2.0), None).unwrap();
        assert_eq!(plan.n, vec![0, 1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn capped_search_reports_edge_without_flag() {
        let plan = link_optimizer(5, 0.6, LinkCosts::time(1.0, 5.0), Some(2)).unwrap();
        assert!(plan.n.iter().skip(1).all(|&n| n <= 2));
        assert!(!plan.boundary);
    }

    #[test]
    fn no_source_packets_reduces_to_link() {
        let cfg = link(4, 0.35);
        let r = algorithm1(&cfg, &SearchOptions::default()).unwrap();
        let plan = link_optimizer(4, 0.35, LinkCosts::time(1.0, 0.0), None).unwrap();
        assert_eq!(r.policy.n2[0], plan.n);
        assert!((r.stats.mean_time - plan.cost[4]).abs() < 1e-9);
    }

    #[test]
    fn selective_repeat_lossless_and_single() {
        let cfg = BatchConfig::new(3, 3, 0.0, 0.0);
        let s = selective_repeat_baseline(&cfg).unwrap();
        // one S1 pass (3 slots), one S2 pass (6 slots + ACK)
        assert!((s.mean_time - 10.0).abs() < 1e-12);
        let cfg = BatchConfig::new(0, 1, 0.2, 0.5);
        let s = selective_repeat_baseline(&cfg).unwrap();
        assert!((s.mean_time - 4.0).abs() < 1e-12);
    }

    #[test]
    fn selective_repeat_equals_identity_coded_counts() {
        let cfg = BatchConfig::new(3, 2, 0.25, 0.45).with_energy(EnergyParams {
            e1: 1.0,
            e2: 2.0,
            e_ack: 0.5,
        });
        let a = selective_repeat_baseline(&cfg).unwrap();
        let b = completion_stats(&PolicyTable::identity(&cfg), &cfg).unwrap();
        assert!((a.mean_time - b.mean_time).abs() < 1e-10);
        assert!((a.mean_energy - b.mean_energy).abs() < 1e-10);
    }

    #[test]
    fn genie_bound_matches_closed_form_and_lossless_time() {
        let cfg = BatchConfig::new(3, 3, 0.0, 0.0);
        let g = genie_full_duplex(&cfg).unwrap();
        // pipelined: S2 sends every slot for 6 slots
        assert!((g.mean_time - 6.0).abs() < 1e-12);
        assert!((g.energy - 9.0).abs() < 1e-12);
    }

    #[test]
    fn product_weights_are_local_gradient() {
        let cfg = BatchConfig::new(2, 2, 0.3, 0.4).with_objective(BatchObjective::Product);
        let pol = PolicyTable::identity(&cfg);
        let (wt, we) = weights(&cfg, &pol).unwrap();
        let s = completion_stats(&pol, &cfg).unwrap();
        assert!((wt - s.mean_energy / s.mean_time).abs() < 1e-12);
        assert_eq!(we, 1.0);
    }

    #[test]
    fn digest_distinguishes_tables() {
        let cfg = BatchConfig::new(2, 2, 0.3, 0.4);
        let a = PolicyTable::identity(&cfg);
        let mut b = a.clone();
        b.n2[1][2] += 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), PolicyTable::identity(&cfg).digest());
    }
}
