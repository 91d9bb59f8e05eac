//! Slot-level Monte Carlo of every model, at the dof level.
//!
//! Randomness comes from ChaCha8 seeded with `seed`; online models draw from
//! stream 0 and batch run `r` draws from stream `r`, so results do not depend
//! on how runs are scheduled across threads.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::genie_inter::{transition_prob, GenieState};
use crate::genie_intra::{effective_flow1, policy_kernel, IntraState, SchedulingPolicy, ServiceMode};
use crate::hd_batch::{absorbing_kernel, BatchConfig, PolicyTable};
use crate::hd_online::{transition_from_s1, transition_from_s2, HdState, OnlinePolicy, Turn};
use crate::kernels::LineNetworkParams;

#[derive(Debug, Clone)]
pub enum SimModel {
    GenieInter,
    GenieIntra { policy: SchedulingPolicy, mode: ServiceMode },
    HdOnline { policy: OnlinePolicy },
    /// Batch models carry their own erasures and energies; `params` is unused.
    HdBatch { config: BatchConfig, policy: PolicyTable },
    SelectiveRepeat { config: BatchConfig },
}

impl SimModel {
    pub fn is_batch(&self) -> bool {
        matches!(self, SimModel::HdBatch { .. } | SimModel::SelectiveRepeat { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    /// Slots for online models, independent runs for batch models.
    pub budget: u64,
    /// Leading slots discarded by online models.
    pub warmup: u64,
    /// Number of contiguous batches for batch-means standard errors.
    pub batches: usize,
    /// A queue longer than this flags the run as unstable and stops it.
    pub occupancy_limit: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            budget: 1_000_000,
            warmup: 10_000,
            batches: 50,
            occupancy_limit: 10_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, batch_model: bool) -> Result<()> {
        if !batch_model && self.budget <= self.warmup {
            return Err(Error::arg("budget must exceed warmup"));
        }
        if self.budget == 0 {
            return Err(Error::arg("budget must be >= 1"));
        }
        if !batch_model && (self.batches < 2 || (self.budget - self.warmup) < self.batches as u64) {
            return Err(Error::arg("need at least 2 batches with one slot each"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    /// Named estimates, in a fixed model-specific order.
    pub metrics: Vec<(&'static str, Estimate)>,
    /// `(completion slots, energy)` per run, batch models only.
    pub runs: Vec<(f64, f64)>,
    /// Visits per state: slot starts (online) or turn starts (batch).
    pub occupancy: BTreeMap<Vec<u32>, u64>,
    /// Some queue passed `occupancy_limit`.
    pub unstable: bool,
}

impl SimReport {
    pub fn get(&self, name: &str) -> Option<Estimate> {
        self.metrics.iter().find(|(n, _)| *n == name).map(|(_, e)| *e)
    }

    /// Raw per-run samples as CSV with header `run,completion_slots,energy`.
    pub fn write_runs_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "run,completion_slots,energy")?;
        for (i, (t, e)) in self.runs.iter().enumerate() {
            writeln!(w, "{i},{t},{e}")?;
        }
        Ok(())
    }
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

fn success(rng: &mut ChaCha8Rng, p_erasure: f64) -> bool {
    rng.random::<f64>() >= p_erasure
}

/// FIFO of arrival slots for one queue, with delay accounting.
#[derive(Debug, Default)]
struct Tagged {
    stamps: VecDeque<u64>,
}

impl Tagged {
    fn len(&self) -> u32 {
        self.stamps.len() as u32
    }

    fn arrive(&mut self, slot: u64, count: u64) {
        for _ in 0..count {
            self.stamps.push_back(slot);
        }
    }

    /// Head departs in `slot`; returns its delay.
    fn depart(&mut self, slot: u64) -> u64 {
        let t = self.stamps.pop_front().expect("departure from an empty queue");
        slot - t
    }
}

/// Per-batch sums for one online run.
#[derive(Debug, Clone, Default)]
struct Acc {
    slots: f64,
    area: [f64; 3],
    empty: [f64; 3],
    delay_sum: [f64; 3],
    delay_n: [f64; 3],
    arrivals: [f64; 3],
    energy: [f64; 3],
    delivered: f64,
}

/// Batch-means bookkeeping over the measured slots.
struct Meter {
    warmup: u64,
    per_batch: u64,
    batches: Vec<Acc>,
    cur: Acc,
    occupancy: BTreeMap<Vec<u32>, u64>,
}

impl Meter {
    fn new(cfg: &SimConfig) -> Self {
        Meter {
            warmup: cfg.warmup,
            per_batch: (cfg.budget - cfg.warmup) / cfg.batches as u64,
            batches: Vec::with_capacity(cfg.batches),
            cur: Acc::default(),
            occupancy: BTreeMap::new(),
        }
    }

    fn on(&self, slot: u64) -> bool {
        slot >= self.warmup
    }

    /// Slot-start sample of the queues.
    fn sample(&mut self, slot: u64, queues: &[u32]) {
        if !self.on(slot) {
            return;
        }
        self.cur.slots += 1.0;
        for (k, &q) in queues.iter().enumerate() {
            self.cur.area[k] += q as f64;
            if q == 0 {
                self.cur.empty[k] += 1.0;
            }
        }
        *self.occupancy.entry(queues.to_vec()).or_insert(0) += 1;
    }

    fn delay(&mut self, slot: u64, k: usize, d: u64) {
        if self.on(slot) {
            self.cur.delay_sum[k] += d as f64;
            self.cur.delay_n[k] += 1.0;
        }
    }

    fn arrivals(&mut self, slot: u64, k: usize, n: u64) {
        if self.on(slot) {
            self.cur.arrivals[k] += n as f64;
        }
    }

    fn energy(&mut self, slot: u64, k: usize, e: f64) {
        if self.on(slot) {
            self.cur.energy[k] += e;
        }
    }

    fn delivered(&mut self, slot: u64) {
        if self.on(slot) {
            self.cur.delivered += 1.0;
        }
    }

    /// Closes the slot; rolls over to a new batch when full.
    fn end_slot(&mut self, slot: u64) {
        if self.on(slot) && self.cur.slots as u64 == self.per_batch {
            self.batches.push(std::mem::take(&mut self.cur));
        }
    }
}

/// Ratio estimate `Σ num / Σ den` with a batch-means standard error.
fn ratio(batches: &[Acc], num: impl Fn(&Acc) -> f64, den: impl Fn(&Acc) -> f64) -> Estimate {
    let (n, d): (f64, f64) = batches.iter().fold((0.0, 0.0), |(a, b), x| (a + num(x), b + den(x)));
    if d <= 0.0 {
        return Estimate {
            mean: 0.0,
            std_err: 0.0,
            samples: batches.len() as u64,
        };
    }
    let mean = n / d;
    let vals: Vec<f64> = batches
        .iter()
        .filter(|x| den(x) > 0.0)
        .map(|x| num(x) / den(x))
        .collect();
    let b = vals.len() as f64;
    let std_err = if b > 1.0 {
        let m = vals.iter().sum::<f64>() / b;
        (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (b - 1.0) / b).sqrt()
    } else {
        0.0
    };
    Estimate {
        mean,
        std_err,
        samples: batches.len() as u64,
    }
}

fn finish(meter: Meter, metrics: impl Fn(&[Acc]) -> Vec<(&'static str, Estimate)>, unstable: bool) -> SimReport {
    let mut batches = meter.batches;
    if batches.is_empty() {
        batches.push(meter.cur);
    }
    SimReport {
        metrics: metrics(&batches),
        runs: Vec::new(),
        occupancy: meter.occupancy,
        unstable,
    }
}

fn simulate_inter(cfg: &SimConfig, params: &LineNetworkParams) -> SimReport {
    let mut rng = rng_for(cfg.seed, 0);
    let mut m = Meter::new(cfg);
    let (mut q1, mut q2) = (Tagged::default(), Tagged::default());
    let e = params.energy;
    let mut unstable = false;
    for slot in 0..cfg.budget {
        m.sample(slot, &[q1.len(), q2.len()]);
        let (busy1, busy2) = (q1.len() > 0, q2.len() > 0);
        let y1 = busy1 && success(&mut rng, params.p1);
        let y2 = busy2 && success(&mut rng, params.p2);
        if busy1 {
            m.energy(slot, 0, e.e1);
        }
        if busy2 {
            m.energy(slot, 1, e.e2);
        }
        if y2 {
            let d = q2.depart(slot);
            m.delay(slot, 1, d);
            m.delivered(slot);
        }
        if y1 {
            let d = q1.depart(slot);
            m.delay(slot, 0, d);
            q2.arrive(slot, 1);
            m.arrivals(slot, 1, 1);
        }
        let a1 = poisson(&mut rng, params.lambda1);
        let a2 = poisson(&mut rng, params.lambda2);
        q1.arrive(slot, a1);
        q2.arrive(slot, a2);
        m.arrivals(slot, 0, a1);
        m.arrivals(slot, 1, a2);
        m.end_slot(slot);
        if q1.len().max(q2.len()) > cfg.occupancy_limit {
            unstable = true;
            break;
        }
    }
    let (l1, l2) = (params.lambda1, params.lambda2);
    finish(
        m,
        |b| {
            vec![
                ("mean_i1", ratio(b, |x| x.area[0], |x| x.slots)),
                ("mean_i2", ratio(b, |x| x.area[1], |x| x.slots)),
                ("p_empty1", ratio(b, |x| x.empty[0], |x| x.slots)),
                ("p_empty2", ratio(b, |x| x.empty[1], |x| x.slots)),
                ("delay_node1", ratio(b, |x| x.delay_sum[0], |x| x.delay_n[0])),
                ("delay_node2", ratio(b, |x| x.delay_sum[1], |x| x.delay_n[1])),
                ("little_node1", ratio(b, |x| x.area[0], |x| x.arrivals[0])),
                ("little_node2", ratio(b, |x| x.area[1], |x| x.arrivals[1])),
                ("energy_per_packet_s1", ratio(b, |x| x.energy[0], |x| x.slots * l1)),
                ("energy_per_packet_s2", ratio(b, |x| x.energy[1], |x| x.slots * (l1 + l2))),
                ("throughput", ratio(b, |x| x.delivered, |x| x.slots)),
            ]
        },
        unstable,
    )
}

fn simulate_intra(cfg: &SimConfig, params: &LineNetworkParams, policy: &SchedulingPolicy, mode: ServiceMode) -> SimReport {
    let mut rng = rng_for(cfg.seed, 0);
    let mut m = Meter::new(cfg);
    // queue 0: S1, 1: flow 1 at S2, 2: flow 2 at S2
    let mut q: [Tagged; 3] = Default::default();
    let mut unstable = false;
    for slot in 0..cfg.budget {
        let s = IntraState::new(q[0].len(), q[1].len(), q[2].len());
        m.sample(slot, &[s.i1, s.i2, s.i3]);
        let w1 = effective_flow1(s, policy, mode);
        let serve1 = rng.random::<f64>() < w1;
        let y1 = s.i1 > 0 && success(&mut rng, params.p1);
        let target = if serve1 { 1 } else { 2 };
        if q[target].len() > 0 && success(&mut rng, params.p2) {
            let d = q[target].depart(slot);
            m.delay(slot, target, d);
            m.delivered(slot);
        }
        if y1 {
            let d = q[0].depart(slot);
            m.delay(slot, 0, d);
            q[1].arrive(slot, 1);
        }
        let a1 = poisson(&mut rng, params.lambda1);
        let a3 = poisson(&mut rng, params.lambda2);
        q[0].arrive(slot, a1);
        q[2].arrive(slot, a3);
        m.arrivals(slot, 0, a1);
        m.arrivals(slot, 2, a3);
        m.end_slot(slot);
        if q.iter().any(|x| x.len() > cfg.occupancy_limit) {
            unstable = true;
            break;
        }
    }
    finish(
        m,
        |b| {
            vec![
                ("mean_i1", ratio(b, |x| x.area[0], |x| x.slots)),
                ("mean_i2", ratio(b, |x| x.area[1], |x| x.slots)),
                ("mean_i3", ratio(b, |x| x.area[2], |x| x.slots)),
                ("d1_flow1", ratio(b, |x| x.delay_sum[0], |x| x.delay_n[0])),
                ("d2_flow1", ratio(b, |x| x.delay_sum[1], |x| x.delay_n[1])),
                ("d2_flow2", ratio(b, |x| x.delay_sum[2], |x| x.delay_n[2])),
                ("flow1_total", ratio(b, |x| x.delay_sum[0] / x.delay_n[0].max(1.0) + x.delay_sum[1] / x.delay_n[1].max(1.0), |_| 1.0)),
                ("little_node1", ratio(b, |x| x.area[0], |x| x.arrivals[0])),
                ("throughput", ratio(b, |x| x.delivered, |x| x.slots)),
            ]
        },
        unstable,
    )
}

fn simulate_online(cfg: &SimConfig, params: &LineNetworkParams, policy: &OnlinePolicy) -> SimReport {
    let mut rng = rng_for(cfg.seed, 0);
    let mut m = Meter::new(cfg);
    let (mut q1, mut q2) = (Tagged::default(), Tagged::default());
    let e = params.energy;
    let window = policy.window.map(|w| [w[0] as u32, w[1] as u32]);
    let mut turn = Turn::S1;
    let mut slot = 0u64;
    let mut unstable = false;
    let admit = |q: &mut Tagged, slot: u64, n: u64, cap: Option<u32>| -> u64 {
        let n = match cap {
            Some(c) => n.min(c.saturating_sub(q.len()) as u64),
            None => n,
        };
        q.arrive(slot, n);
        n
    };
    'run: while slot < cfg.budget {
        let (i1, i2) = (q1.len(), q2.len());
        let (burst, slots) = match turn {
            Turn::S1 => (policy.n1_at(i1) as u64, policy.n1_at(i1) as u64),
            Turn::S2 => {
                let n = policy.n2_at(i1, i2) as u64;
                (n, n + 1)
            }
        };
        let batch = match turn {
            Turn::S1 => i1 as u64,
            Turn::S2 => i2 as u64,
        };
        let mut got = 0u64;
        for t in 0..slots {
            if slot >= cfg.budget {
                break 'run;
            }
            m.sample(slot, &[q1.len(), q2.len()]);
            match turn {
                Turn::S1 => {
                    m.energy(slot, 0, e.e1);
                    if t < burst && success(&mut rng, params.p1) && got < batch {
                        got += 1;
                        let d = q1.depart(slot);
                        m.delay(slot, 0, d);
                        let n = admit(&mut q2, slot, 1, window.map(|w| w[1]));
                        m.arrivals(slot, 1, n);
                    }
                }
                Turn::S2 => {
                    if t < burst {
                        m.energy(slot, 1, e.e2);
                        if success(&mut rng, params.p2) && got < batch {
                            got += 1;
                            let d = q2.depart(slot);
                            m.delay(slot, 1, d);
                            m.delivered(slot);
                        }
                    } else {
                        m.energy(slot, 2, e.e_ack);
                    }
                }
            }
            let a1 = poisson(&mut rng, params.lambda1);
            let a2 = poisson(&mut rng, params.lambda2);
            let a1 = admit(&mut q1, slot, a1, window.map(|w| w[0]));
            let a2 = admit(&mut q2, slot, a2, window.map(|w| w[1]));
            m.arrivals(slot, 0, a1);
            m.arrivals(slot, 1, a2);
            m.end_slot(slot);
            slot += 1;
            if q1.len().max(q2.len()) > cfg.occupancy_limit {
                unstable = true;
                break 'run;
            }
        }
        turn = turn.other();
    }
    let (l1, l2) = (params.lambda1, params.lambda2);
    finish(
        m,
        |b| {
            vec![
                ("mean_i1", ratio(b, |x| x.area[0], |x| x.slots)),
                ("mean_i2", ratio(b, |x| x.area[1], |x| x.slots)),
                ("delay_node1", ratio(b, |x| x.delay_sum[0], |x| x.delay_n[0])),
                ("delay_node2", ratio(b, |x| x.delay_sum[1], |x| x.delay_n[1])),
                ("little_node1", ratio(b, |x| x.area[0], |x| x.arrivals[0])),
                ("little_node2", ratio(b, |x| x.area[1], |x| x.arrivals[1])),
                (
                    "energy_per_packet",
                    ratio(b, |x| x.energy.iter().sum(), |x| x.slots * (l1 + l2)),
                ),
                ("throughput", ratio(b, |x| x.delivered, |x| x.slots)),
            ]
        },
        unstable,
    )
}

/// One batch run to absorption; `burst` gives the `(slots, energy, successes)`
/// law of a turn through a sampler.
fn batch_run(
    cfg: &BatchConfig,
    rng: &mut ChaCha8Rng,
    occupancy: &mut BTreeMap<Vec<u32>, u64>,
    mut turn_outcome: impl FnMut(&mut ChaCha8Rng, HdState) -> (f64, f64, u32),
) -> (f64, f64) {
    let mut s = cfg.start();
    let (mut slots, mut energy) = (0.0, 0.0);
    while s.i1 + s.i2 > 0 {
        let empty = match s.turn {
            Turn::S1 => s.i1 == 0,
            Turn::S2 => s.i2 == 0,
        };
        if !empty {
            *occupancy.entry(vec![s.i1, s.i2, s.turn as u32]).or_insert(0) += 1;
            let (t, e, moved) = turn_outcome(rng, s);
            slots += t;
            energy += e;
            match s.turn {
                Turn::S1 => {
                    s.i1 -= moved;
                    s.i2 += moved;
                }
                Turn::S2 => s.i2 -= moved,
            }
        }
        s.turn = s.turn.other();
    }
    (slots, energy)
}

fn simulate_batch<F>(cfg: &SimConfig, batch: &BatchConfig, outcome: F) -> SimReport
where
    F: Fn(&mut ChaCha8Rng, HdState) -> (f64, f64, u32) + Sync,
{
    let chunk = 1024u64;
    let chunks = cfg.budget.div_ceil(chunk);
    let parts: Vec<(Vec<(f64, f64)>, BTreeMap<Vec<u32>, u64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut occ = BTreeMap::new();
            let runs = (c * chunk..((c + 1) * chunk).min(cfg.budget))
                .map(|r| {
                    let mut rng = rng_for(cfg.seed, r);
                    batch_run(batch, &mut rng, &mut occ, &outcome)
                })
                .collect();
            (runs, occ)
        })
        .collect();
    let mut runs = Vec::with_capacity(cfg.budget as usize);
    let mut occupancy = BTreeMap::new();
    for (r, occ) in parts {
        runs.extend(r);
        for (k, v) in occ {
            *occupancy.entry(k).or_insert(0) += v;
        }
    }
    let stat = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let n = runs.len() as f64;
        let mean = runs.iter().map(f).sum::<f64>() / n;
        let var = if n > 1.0 {
            runs.iter().map(|x| (f(x) - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Estimate {
            mean,
            std_err: (var / n).sqrt(),
            samples: runs.len() as u64,
        }
    };
    let t = stat(&|x| x.0);
    let e = stat(&|x| x.1);
    SimReport {
        metrics: vec![("completion_slots", t), ("energy", e)],
        runs,
        occupancy,
        unstable: false,
    }
}

fn coded_turn(cfg: &BatchConfig, policy: &PolicyTable, rng: &mut ChaCha8Rng, s: HdState) -> (f64, f64, u32) {
    let e = cfg.energy;
    let (n, batch, p) = match s.turn {
        Turn::S1 => (policy.n1_at(s.i1), s.i1, cfg.p1),
        Turn::S2 => (policy.n2_at(s.i1, s.i2), s.i2, cfg.p2),
    };
    let hits = (0..n).filter(|_| success(rng, p)).count() as u32;
    let moved = hits.min(batch);
    match s.turn {
        Turn::S1 => (n as f64, n as f64 * e.e1, moved),
        Turn::S2 => (n as f64 + 1.0, n as f64 * e.e2 + e.e_ack, moved),
    }
}

fn repeat_turn(cfg: &BatchConfig, rng: &mut ChaCha8Rng, s: HdState) -> (f64, f64, u32) {
    let e = cfg.energy;
    match s.turn {
        Turn::S1 => {
            let ok = (0..s.i1).filter(|_| success(rng, cfg.p1)).count() as u32;
            (s.i1 as f64, s.i1 as f64 * e.e1, ok)
        }
        Turn::S2 => {
            let ok = (0..s.i2).filter(|_| success(rng, cfg.p2)).count() as u32;
            (s.i2 as f64 + 1.0, s.i2 as f64 * e.e2 + e.e_ack, ok)
        }
    }
}

/// Runs the model for `config.budget` slots (online) or runs (batch).
pub fn simulate(config: &SimConfig, params: &LineNetworkParams, model: &SimModel) -> Result<SimReport> {
    config.validate(model.is_batch())?;
    if !model.is_batch() {
        params.validate()?;
    }
    Ok(match model {
        SimModel::GenieInter => simulate_inter(config, params),
        SimModel::GenieIntra { policy, mode } => {
            policy.validate()?;
            simulate_intra(config, params, policy, *mode)
        }
        SimModel::HdOnline { policy } => {
            policy.validate(None)?;
            simulate_online(config, params, policy)
        }
        SimModel::HdBatch { config: b, policy } => {
            b.validate()?;
            policy.validate(b)?;
            simulate_batch(config, b, |rng, s| coded_turn(b, policy, rng, s))
        }
        SimModel::SelectiveRepeat { config: b } => {
            b.validate()?;
            simulate_batch(config, b, |rng, s| repeat_turn(b, rng, s))
        }
    })
}

/// Empirical one-step increments from a fixed state.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionEstimate {
    /// Increment (one entry per queue) → count.
    pub histogram: BTreeMap<Vec<i64>, u64>,
    pub samples: u64,
    /// Total-variation distance to the analytical kernel.
    pub tv_distance: f64,
}

/// Where the one-step probe starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeState {
    Inter(GenieState),
    Intra(IntraState),
    /// Online and batch turn states.
    Turn(HdState),
}

fn tv(histogram: &BTreeMap<Vec<i64>, u64>, samples: u64, analytic: impl Fn(&[i64]) -> Result<f64>) -> Result<f64> {
    let mut seen_mass = 0.0;
    let mut dist = 0.0;
    for (k, &c) in histogram {
        let p = analytic(k)?;
        seen_mass += p;
        dist += (c as f64 / samples as f64 - p).abs();
    }
    Ok(0.5 * (dist + (1.0 - seen_mass).max(0.0)))
}

/// Samples one transition of `model` from `state` `samples` times.
pub fn estimate_transition(
    config: &SimConfig,
    params: &LineNetworkParams,
    model: &SimModel,
    state: ProbeState,
    samples: u64,
) -> Result<TransitionEstimate> {
    if samples < 10_000 {
        return Err(Error::arg("estimate_transition needs at least 10^4 samples"));
    }
    let mut rng = rng_for(config.seed, 0);
    let mut histogram: BTreeMap<Vec<i64>, u64> = BTreeMap::new();
    let mut record = |k: Vec<i64>| *histogram.entry(k).or_insert(0) += 1;
    let tv_distance = match (model, state) {
        (SimModel::GenieInter, ProbeState::Inter(s)) => {
            params.validate()?;
            for _ in 0..samples {
                let y1 = s.i1 > 0 && success(&mut rng, params.p1);
                let y2 = s.i2 > 0 && success(&mut rng, params.p2);
                let a1 = poisson(&mut rng, params.lambda1) as i64;
                let a2 = poisson(&mut rng, params.lambda2) as i64;
                record(vec![a1 - y1 as i64, a2 + y1 as i64 - y2 as i64]);
            }
            tv(&histogram, samples, |k| transition_prob(s, (k[0], k[1]), params))?
        }
        (SimModel::GenieIntra { policy, mode }, ProbeState::Intra(s)) => {
            params.validate()?;
            policy.validate()?;
            let w1 = effective_flow1(s, policy, *mode);
            for _ in 0..samples {
                let serve1 = rng.random::<f64>() < w1;
                let y1 = s.i1 > 0 && success(&mut rng, params.p1);
                let backlog = if serve1 { s.i2 } else { s.i3 };
                let y2 = backlog > 0 && success(&mut rng, params.p2);
                let a1 = poisson(&mut rng, params.lambda1) as i64;
                let a3 = poisson(&mut rng, params.lambda2) as i64;
                let (y1, y2) = (y1 as i64, y2 as i64);
                let d = if serve1 {
                    vec![a1 - y1, y1 - y2, a3]
                } else {
                    vec![a1 - y1, y1, a3 - y2]
                };
                record(d);
            }
            tv(&histogram, samples, |k| policy_kernel(s, (k[0], k[1], k[2]), params, policy, *mode))?
        }
        (SimModel::HdOnline { policy }, ProbeState::Turn(s)) => {
            params.validate()?;
            policy.validate(None)?;
            let (burst, slots, batch, p) = match s.turn {
                Turn::S1 => {
                    let n = policy.n1_at(s.i1) as u64;
                    (n, n, s.i1, params.p1)
                }
                Turn::S2 => {
                    let n = policy.n2_at(s.i1, s.i2) as u64;
                    (n, n + 1, s.i2, params.p2)
                }
            };
            for _ in 0..samples {
                let hits = (0..burst).filter(|_| success(&mut rng, p)).count() as i64;
                let moved = hits.min(batch as i64);
                let a1 = poisson(&mut rng, params.lambda1 * slots as f64) as i64;
                let a2 = poisson(&mut rng, params.lambda2 * slots as f64) as i64;
                record(match s.turn {
                    Turn::S1 => vec![a1 - moved, a2 + moved],
                    Turn::S2 => vec![a1, a2 - moved],
                });
            }
            tv(&histogram, samples, |k| match s.turn {
                Turn::S1 => transition_from_s1(s, (k[0], k[1]), policy, params),
                Turn::S2 => transition_from_s2(s, (k[0], k[1]), policy, params),
            })?
        }
        (SimModel::HdBatch { config: b, policy }, ProbeState::Turn(s)) => {
            let law = absorbing_kernel(s, policy, b)?;
            let empty = match s.turn {
                Turn::S1 => s.i1 == 0,
                Turn::S2 => s.i2 == 0,
            };
            for _ in 0..samples {
                let moved = if empty { 0 } else { coded_turn(b, policy, &mut rng, s).2 as i64 };
                record(match s.turn {
                    Turn::S1 => vec![-moved, moved],
                    Turn::S2 => vec![0, -moved],
                });
            }
            tv(&histogram, samples, |k| {
                Ok(law.iter().filter(|(d, _)| d.0 == k[0] && d.1 == k[1]).map(|x| x.1).sum())
            })?
        }
        _ => return Err(Error::arg("probe state does not match the model")),
    };
    Ok(TransitionEstimate {
        histogram,
        samples,
        tv_distance,
    })
}
