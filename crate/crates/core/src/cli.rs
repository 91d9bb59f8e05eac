//! Scenario files, sweeps and the result tables behind the command-line tool.
//!
//! A scenario is line-oriented `key=value` text with `#` comments. Every
//! subcommand turns a scenario (plus an optional one-key sweep) into a CSV
//! table whose rows follow the sweep order.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::genie_inter;
use crate::genie_intra::{fairness_solve, intra_metrics, FairPoint, IntraOptions, SchedulingPolicy, ServiceMode};
use crate::hd_batch::{
    algorithm1, genie_full_duplex, selective_repeat_baseline, BatchConfig, BatchObjective, SearchOptions,
};
use crate::hd_online::{online_metrics, OnlinePolicy};
use crate::kernels::{check_eps, check_erasure, check_rate, EnergyParams, LineNetworkParams, DEFAULT_EPS_TAIL};
use crate::simulator::{simulate, Estimate, SimConfig, SimModel};
use crate::truncation::ModelOptions;

/// Environment variable naming the scenario file used when `--config` is absent.
pub const CONFIG_ENV: &str = "CODED_FLOWS_CONFIG";

const KEYS: [&str; 16] = [
    "lambda1", "lambda2", "p1", "p2", "E1", "E2", "E_ack", "Ps", "M1", "M2", "cap", "eps_tail", "objective", "seed",
    "runs", "slots",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub lambda1: f64,
    pub lambda2: f64,
    pub p1: f64,
    pub p2: f64,
    pub energy: EnergyParams,
    pub ps: f64,
    pub m1: u32,
    pub m2: u32,
    /// Fixed cap on every queue; `None` means automatic.
    pub cap: Option<usize>,
    pub eps_tail: f64,
    pub objective: BatchObjective,
    pub seed: u64,
    pub runs: u64,
    pub slots: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            lambda1: 0.1,
            lambda2: 0.25,
            p1: 0.3,
            p2: 0.4,
            energy: EnergyParams::default(),
            ps: 0.5,
            m1: 3,
            m2: 3,
            cap: None,
            eps_tail: DEFAULT_EPS_TAIL,
            objective: BatchObjective::Time,
            seed: 1,
            runs: 100_000,
            slots: 1_000_000,
        }
    }
}

fn message(e: Error) -> String {
    match e {
        Error::Argument(m) | Error::Domain(m) | Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn number(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("{key}: `{value}` is not a number")))
}

fn integer<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("{key}: `{value}` is not a non-negative integer")))
}

pub fn parse_objective(value: &str) -> Result<BatchObjective> {
    match value {
        "time" => Ok(BatchObjective::Time),
        "energy" => Ok(BatchObjective::Energy),
        "product" => Ok(BatchObjective::Product),
        _ => Err(Error::Config(format!(
            "objective: `{value}` is not one of time, energy, product"
        ))),
    }
}

pub fn objective_name(o: BatchObjective) -> &'static str {
    match o {
        BatchObjective::Time => "time",
        BatchObjective::Energy => "energy",
        BatchObjective::Product => "product",
    }
}

impl Scenario {
    /// Sets one key, validating the value with the owning model's check.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "lambda1" | "lambda2" => {
                let v = number(key, value)?;
                check_rate(key, v)?;
                if key == "lambda1" {
                    self.lambda1 = v;
                } else {
                    self.lambda2 = v;
                }
            }
            "p1" | "p2" => {
                let v = number(key, value)?;
                check_erasure(key, v)?;
                if key == "p1" {
                    self.p1 = v;
                } else {
                    self.p2 = v;
                }
            }
            "E1" | "E2" | "E_ack" => {
                let v = number(key, value)?;
                let mut e = self.energy;
                match key {
                    "E1" => e.e1 = v,
                    "E2" => e.e2 = v,
                    _ => e.e_ack = v,
                }
                e.validate()?;
                self.energy = e;
            }
            "Ps" => {
                let v = number(key, value)?;
                SchedulingPolicy::Randomized(v).validate()?;
                self.ps = v;
            }
            "M1" => self.m1 = integer(key, value)?,
            "M2" => self.m2 = integer(key, value)?,
            "cap" => {
                if value == "auto" {
                    self.cap = None;
                } else {
                    let c: usize = integer(key, value)?;
                    if c < 1 {
                        return Err(Error::arg(format!("every cap must be >= 1, got [{c}]")));
                    }
                    self.cap = Some(c);
                }
            }
            "eps_tail" => {
                let v = number(key, value)?;
                check_eps(v)?;
                self.eps_tail = v;
            }
            "objective" => self.objective = parse_objective(value)?,
            "seed" => self.seed = integer(key, value)?,
            "runs" | "slots" => {
                let v: u64 = integer(key, value)?;
                if v < 1 {
                    return Err(Error::arg(format!("{key} must be >= 1")));
                }
                if key == "runs" {
                    self.runs = v;
                } else {
                    self.slots = v;
                }
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses scenario text; errors name the offending line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sc = Scenario::default();
        let mut seen: Vec<(String, usize)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {line_no}: expected key=value, got `{line}`")));
            };
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("line {line_no}: unknown key `{k}`")));
            }
            if let Some((_, first)) = seen.iter().find(|(s, _)| s == k) {
                return Err(Error::Config(format!(
                    "line {line_no}: duplicate key `{k}` (first set on line {first})"
                )));
            }
            seen.push((k.to_string(), line_no));
            sc.set(k, v)
                .map_err(|e| Error::Config(format!("line {line_no}: {}", message(e))))?;
        }
        Ok(sc)
    }

    /// Reads `path`, else the file named by [`CONFIG_ENV`], else the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let from_env = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty());
        let chosen = path.map(Path::to_path_buf).or_else(|| from_env.map(Into::into));
        match chosen {
            Some(p) => {
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text).map_err(|e| Error::Config(format!("{}: {}", p.display(), message(e))))
            }
            None => Ok(Scenario::default()),
        }
    }

    pub fn params(&self) -> LineNetworkParams {
        LineNetworkParams::new(self.lambda1, self.lambda2, self.p1, self.p2).with_energy(self.energy)
    }

    pub fn batch(&self) -> BatchConfig {
        BatchConfig::new(self.m1, self.m2, self.p1, self.p2)
            .with_energy(self.energy)
            .with_objective(self.objective)
    }

    pub fn model_options(&self) -> ModelOptions {
        let mut o = match self.cap {
            Some(c) => ModelOptions::fixed(c),
            None => ModelOptions::default(),
        };
        o.eps_tail = self.eps_tail;
        o
    }
}

/// `key=start:stop:step`, inclusive of `stop` up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<f64>,
}

const MAX_SWEEP_POINTS: usize = 100_000;

impl Sweep {
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || Error::Config(format!("sweep `{spec}`: expected key=start:stop:step"));
        let (key, range) = spec.split_once('=').ok_or_else(bad)?;
        let key = key.trim();
        if !KEYS.contains(&key) || key == "objective" {
            return Err(Error::Config(format!("sweep: `{key}` is not a numeric scenario key")));
        }
        let parts: Vec<&str> = range.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let a = number(key, parts[0])?;
        let b = number(key, parts[1])?;
        let step = number(key, parts[2])?;
        if !(step > 0.0) || !(b >= a) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Config(format!("sweep `{spec}`: need step > 0 and stop >= start")));
        }
        let count = ((b - a) / step + 1e-9).floor() as usize + 1;
        if count > MAX_SWEEP_POINTS {
            return Err(Error::Config(format!("sweep `{spec}`: more than {MAX_SWEEP_POINTS} points")));
        }
        Ok(Sweep {
            key: key.to_string(),
            values: (0..count).map(|k| a + k as f64 * step).collect(),
        })
    }

    /// One scenario per sweep value, in order; a missing sweep is one point.
    pub fn scenarios(sweep: Option<&Sweep>, base: &Scenario) -> Result<Vec<Scenario>> {
        match sweep {
            None => Ok(vec![base.clone()]),
            Some(s) => s
                .values
                .iter()
                .map(|&v| {
                    let mut sc = base.clone();
                    sc.set(&s.key, &fmt_num(v))
                        .map_err(|e| Error::Config(format!("sweep {}={}: {}", s.key, fmt_num(v), message(e))))?;
                    Ok(sc)
                })
                .collect(),
        }
    }
}

/// Decimal with 12 significant digits, trailing zeros trimmed.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let rounded: f64 = sci.parse().expect("valid float");
        trim(format!("{rounded:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mantissa.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ResultTable {
    fn new(header: &[&str]) -> Self {
        ResultTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }
}

fn caps_cell(caps: &[usize]) -> String {
    caps.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("x")
}

/// Columns `lambda1,ED1,ED2,flow1_total,flow2_total,E1_per_pkt,E2_per_pkt,p_empty1,p_empty2,cap,residual`.
pub fn genie_inter_table(base: &Scenario, sweep: Option<&Sweep>) -> Result<ResultTable> {
    let points = Sweep::scenarios(sweep, base)?;
    let rows: Vec<Result<Vec<String>>> = points
        .par_iter()
        .map(|sc| {
            let r = genie_inter::analyze(&sc.params(), &sc.model_options())?;
            let m = &r.metrics;
            Ok(vec![
                fmt_num(sc.lambda1),
                fmt_num(m.delay_node1),
                fmt_num(m.delay_node2),
                fmt_num(m.flow1_end_to_end),
                fmt_num(m.flow2_end_to_end),
                fmt_num(m.energy_per_packet_s1),
                fmt_num(m.energy_per_packet_s2),
                fmt_num(r.stationary_empty[0]),
                fmt_num(r.stationary_empty[1]),
                caps_cell(&r.caps),
                fmt_num(r.residual),
            ])
        })
        .collect();
    let mut t = ResultTable::new(&[
        "lambda1", "ED1", "ED2", "flow1_total", "flow2_total", "E1_per_pkt", "E2_per_pkt", "p_empty1", "p_empty2",
        "cap", "residual",
    ]);
    t.rows = rows.into_iter().collect::<Result<_>>()?;
    Ok(t)
}

fn intra_options(sc: &Scenario) -> IntraOptions {
    let mut o = IntraOptions::default();
    o.model = sc.model_options();
    o.mode = ServiceMode::Override;
    o
}

/// Columns `lambda1,Ps,d1_flow1,d2_flow1,d2_flow2,flow1_total,flow2_total,fairness_gap,cap,residual`,
/// plus `fair` (`found` or `none`) when solving for the fair split.
pub fn genie_intra_table(base: &Scenario, sweep: Option<&Sweep>, solve_fair: bool) -> Result<ResultTable> {
    let points = Sweep::scenarios(sweep, base)?;
    let rows: Vec<Result<Vec<String>>> = points
        .par_iter()
        .map(|sc| {
            let params = sc.params();
            let opts = intra_options(sc);
            let (ps, found) = if solve_fair {
                match fairness_solve(&params, &opts, 1e-6)? {
                    FairPoint::Found { ps, .. } => (ps, Some(true)),
                    FairPoint::NoFairPoint { .. } => (f64::NAN, Some(false)),
                }
            } else {
                (sc.ps, None)
            };
            let mut row = vec![fmt_num(sc.lambda1), fmt_num(ps)];
            if ps.is_nan() {
                row.extend(std::iter::repeat_n("NaN".to_string(), 6));
                row.push(String::new());
                row.push("NaN".into());
            } else {
                let r = intra_metrics(&params, &SchedulingPolicy::Randomized(ps), &opts)?;
                let m = &r.metrics;
                row.extend(
                    [m.d1_flow1, m.d2_flow1, m.d2_flow2, m.flow1_total, m.flow2_total, m.fairness_gap]
                        .map(fmt_num),
                );
                row.push(caps_cell(&r.caps));
                row.push(fmt_num(r.residual));
            }
            if let Some(f) = found {
                row.push(if f { "found" } else { "none" }.into());
            }
            Ok(row)
        })
        .collect();
    let mut header = vec![
        "lambda1", "Ps", "d1_flow1", "d2_flow1", "d2_flow2", "flow1_total", "flow2_total", "fairness_gap", "cap",
        "residual",
    ];
    if solve_fair {
        header.push("fair");
    }
    let mut t = ResultTable::new(&header);
    t.rows = rows.into_iter().collect::<Result<_>>()?;
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Uncoded selective repeat.
    Arq,
    /// Genie-aided full-duplex reference.
    Genie,
}

impl Baseline {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "arq" => Ok(Baseline::Arq),
            "genie" => Ok(Baseline::Genie),
            _ => Err(Error::Config(format!("baseline `{s}` is not one of arq, genie"))),
        }
    }
}

/// Columns `p1,objective,mean_time,mean_energy,product,iterations,policy_hash`,
/// plus `scheme` when baselines are requested.
pub fn hd_batch_table(
    base: &Scenario,
    sweep: Option<&Sweep>,
    objectives: &[BatchObjective],
    baselines: &[Baseline],
) -> Result<ResultTable> {
    let points = Sweep::scenarios(sweep, base)?;
    let objectives: Vec<BatchObjective> = if objectives.is_empty() {
        vec![base.objective]
    } else {
        objectives.to_vec()
    };
    let with_scheme = !baselines.is_empty();
    let blocks: Vec<Result<Vec<Vec<String>>>> = points
        .par_iter()
        .map(|sc| {
            let mut rows = Vec::new();
            let tag = |mut r: Vec<String>, scheme: &str| {
                if with_scheme {
                    r.push(scheme.to_string());
                }
                r
            };
            for &obj in &objectives {
                let cfg = sc.batch().with_objective(obj);
                let r = algorithm1(&cfg, &SearchOptions::default())?;
                let s = &r.stats;
                rows.push(tag(
                    vec![
                        fmt_num(sc.p1),
                        objective_name(obj).into(),
                        fmt_num(s.mean_time),
                        fmt_num(s.mean_energy),
                        fmt_num(s.product),
                        r.iterations.to_string(),
                        format!("{:016x}", r.policy.digest()),
                    ],
                    "coded",
                ));
            }
            for &b in baselines {
                let cfg = sc.batch();
                let (t, e, name) = match b {
                    Baseline::Arq => {
                        let s = selective_repeat_baseline(&cfg)?;
                        (s.mean_time, s.mean_energy, "arq")
                    }
                    Baseline::Genie => {
                        let g = genie_full_duplex(&cfg)?;
                        (g.mean_time, g.energy, "genie")
                    }
                };
                rows.push(tag(
                    vec![
                        fmt_num(sc.p1),
                        "-".into(),
                        fmt_num(t),
                        fmt_num(e),
                        fmt_num(t * e),
                        "0".into(),
                        "-".into(),
                    ],
                    name,
                ));
            }
            Ok(rows)
        })
        .collect();
    let mut header = vec!["p1", "objective", "mean_time", "mean_energy", "product", "iterations", "policy_hash"];
    if with_scheme {
        header.push("scheme");
    }
    let mut t = ResultTable::new(&header);
    for b in blocks {
        t.rows.extend(b?);
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimTarget {
    GenieInter,
    GenieIntra,
    HdOnline,
    HdBatch,
    Arq,
}

impl SimTarget {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "genie-inter" => Ok(SimTarget::GenieInter),
            "genie-intra" => Ok(SimTarget::GenieIntra),
            "hd-online" => Ok(SimTarget::HdOnline),
            "hd-batch" => Ok(SimTarget::HdBatch),
            "arq" => Ok(SimTarget::Arq),
            _ => Err(Error::Config(format!(
                "model `{s}` is not one of genie-inter, genie-intra, hd-online, hd-batch, arq"
            ))),
        }
    }
}

/// Relative agreement accepted on top of the 3σ band.
pub const SIM_REL_TOL: f64 = 0.02;

/// Analytic and simulated values per metric, columns
/// `metric,analytic,simulated,std_err,samples,tolerance,pass`. The flag is
/// true when the simulation ran into the occupancy limit.
pub fn simulate_table(sc: &Scenario, target: SimTarget) -> Result<(ResultTable, bool)> {
    let params = sc.params();
    let batch_model = matches!(target, SimTarget::HdBatch | SimTarget::Arq);
    let budget = if batch_model { sc.runs } else { sc.slots };
    let cfg = SimConfig {
        seed: sc.seed,
        budget,
        warmup: if batch_model { 0 } else { (sc.slots / 10).min(10_000) },
        ..Default::default()
    };
    // (simulator metric name, analytic value) pairs; analytics may be unavailable
    let (model, analytic): (SimModel, Result<Vec<(&'static str, f64)>>) = match target {
        SimTarget::GenieInter => (
            SimModel::GenieInter,
            genie_inter::analyze(&params, &sc.model_options()).map(|r| {
                vec![
                    ("mean_i1", r.mean_i1),
                    ("mean_i2", r.mean_i2),
                    ("delay_node1", r.metrics.delay_node1),
                    ("delay_node2", r.metrics.delay_node2),
                    ("energy_per_packet_s1", r.metrics.energy_per_packet_s1),
                    ("energy_per_packet_s2", r.metrics.energy_per_packet_s2),
                ]
            }),
        ),
        SimTarget::GenieIntra => {
            let policy = SchedulingPolicy::Randomized(sc.ps);
            let a = intra_metrics(&params, &policy, &intra_options(sc)).map(|r| {
                vec![
                    ("mean_i1", r.mean_queue[0]),
                    ("mean_i2", r.mean_queue[1]),
                    ("mean_i3", r.mean_queue[2]),
                    ("d1_flow1", r.metrics.d1_flow1),
                    ("d2_flow1", r.metrics.d2_flow1),
                    ("d2_flow2", r.metrics.d2_flow2),
                ]
            });
            (
                SimModel::GenieIntra {
                    policy,
                    mode: ServiceMode::Override,
                },
                a,
            )
        }
        SimTarget::HdOnline => {
            let policy = OnlinePolicy::identity();
            let a = online_metrics(&params, &policy, &sc.model_options()).map(|r| {
                vec![
                    ("mean_i1", r.mean_i1),
                    ("mean_i2", r.mean_i2),
                    ("delay_node1", r.metrics.delay_node1),
                    ("delay_node2", r.metrics.delay_node2),
                    ("energy_per_packet", r.energy_per_packet),
                    ("throughput", r.throughput),
                ]
            });
            (SimModel::HdOnline { policy }, a)
        }
        SimTarget::HdBatch => {
            let cfg_b = sc.batch();
            let r = algorithm1(&cfg_b, &SearchOptions::default())?;
            let a = Ok(vec![("completion_slots", r.stats.mean_time), ("energy", r.stats.mean_energy)]);
            (
                SimModel::HdBatch {
                    config: cfg_b,
                    policy: r.policy,
                },
                a,
            )
        }
        SimTarget::Arq => {
            let cfg_b = sc.batch();
            let s = selective_repeat_baseline(&cfg_b)?;
            let a = Ok(vec![("completion_slots", s.mean_time), ("energy", s.mean_energy)]);
            (SimModel::SelectiveRepeat { config: cfg_b }, a)
        }
    };
    let analytic = match analytic {
        Ok(v) => Some(v),
        Err(Error::Instability(_)) => None,
        Err(e) => return Err(e),
    };
    let report = simulate(&cfg, &params, &model)?;
    let mut t = ResultTable::new(&["metric", "analytic", "simulated", "std_err", "samples", "tolerance", "pass"]);
    let names: Vec<&'static str> = match &analytic {
        Some(v) => v.iter().map(|x| x.0).collect(),
        None => report.metrics.iter().map(|x| x.0).collect(),
    };
    for name in names {
        let a = analytic
            .as_ref()
            .and_then(|v| v.iter().find(|x| x.0 == name).map(|x| x.1))
            .unwrap_or(f64::NAN);
        let Estimate {
            mean,
            std_err,
            samples,
        } = report.get(name).expect("simulator reports every analytic metric");
        let tol = (3.0 * std_err).max(SIM_REL_TOL * a.abs());
        let pass = !report.unstable && (mean - a).abs() <= tol;
        t.rows.push(vec![
            name.into(),
            fmt_num(a),
            fmt_num(mean),
            fmt_num(std_err),
            samples.to_string(),
            fmt_num(tol),
            pass.to_string(),
        ]);
    }
    let stable_a = analytic.is_some();
    let stable_s = !report.unstable;
    t.rows.push(vec![
        "stable".into(),
        (stable_a as u8).to_string(),
        (stable_s as u8).to_string(),
        "0".into(),
        "1".into(),
        "0".into(),
        (stable_a && stable_s).to_string(),
    ]);
    Ok((t, report.unstable || !stable_a))
}
