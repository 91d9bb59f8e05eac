//! C ABI over the `coded-flows` models.
//!
//! Every function returns a [`CfStatus`]. On failure the message is kept per
//! thread and can be read with [`cf_last_error_message`]. Handles are opaque
//! and owned by the caller, who releases them with the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use coded_flows::genie_inter;
use coded_flows::genie_intra::{intra_metrics, IntraOptions, SchedulingPolicy, ServiceMode};
use coded_flows::hd_batch::{algorithm1, BatchConfig, BatchObjective, SearchOptions, SearchResult};
use coded_flows::hd_online::{online_metrics, OnlinePolicy};
use coded_flows::simulator::{simulate, Estimate, SimConfig, SimModel};
use coded_flows::truncation::ModelOptions;
use coded_flows::{EnergyParams, Error, LineNetworkParams};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfStatus {
    Ok = 0,
    InvalidArgument = 1,
    Domain = 2,
    Unstable = 3,
    NonConvergence = 4,
    PolicyNonConvergence = 5,
    Balance = 6,
    Config = 7,
    Io = 8,
    NullPointer = 9,
    Panic = 10,
}

impl From<&Error> for CfStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Argument(_) => CfStatus::InvalidArgument,
            Error::Domain(_) => CfStatus::Domain,
            Error::Instability(_) => CfStatus::Unstable,
            Error::NonConvergence { .. } => CfStatus::NonConvergence,
            Error::PolicyNonConvergence { .. } => CfStatus::PolicyNonConvergence,
            Error::Balance(_) => CfStatus::Balance,
            Error::Config(_) => CfStatus::Config,
            Error::Io(_) => CfStatus::Io,
        }
    }
}

/// Objective of the batch burst-table search.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfObjective {
    Time = 0,
    Energy = 1,
    Product = 2,
}

impl From<CfObjective> for BatchObjective {
    fn from(o: CfObjective) -> Self {
        match o {
            CfObjective::Time => BatchObjective::Time,
            CfObjective::Energy => BatchObjective::Energy,
            CfObjective::Product => BatchObjective::Product,
        }
    }
}

/// Line network parameters (arrival rates, erasure probabilities, energies).
pub struct CfNetwork {
    params: LineNetworkParams,
}

/// Burst tables found by the batch search, with their completion statistics.
pub struct CfBatchPlan {
    config: BatchConfig,
    result: SearchResult,
}

/// Steady-state metrics of the genie-aided scheme with coding across flows.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CfInterMetrics {
    pub mean_i1: f64,
    pub mean_i2: f64,
    pub p_empty1: f64,
    pub p_empty2: f64,
    pub delay_node1: f64,
    pub delay_node2: f64,
    pub flow1_end_to_end: f64,
    pub flow2_end_to_end: f64,
    pub energy_per_packet_s1: f64,
    pub energy_per_packet_s2: f64,
    /// Queue caps the chain was solved at.
    pub cap1: u32,
    pub cap2: u32,
}

/// Steady-state per-flow delays with per-session coding at S2.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CfIntraMetrics {
    pub mean_i1: f64,
    pub mean_i2: f64,
    pub mean_i3: f64,
    pub d1_flow1: f64,
    pub d2_flow1: f64,
    pub d2_flow2: f64,
    pub flow1_total: f64,
    pub flow2_total: f64,
}

/// Long-run metrics of the half-duplex online scheme.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CfOnlineMetrics {
    pub mean_i1: f64,
    pub mean_i2: f64,
    pub delay_node1: f64,
    pub delay_node2: f64,
    pub mean_delay: f64,
    pub energy_per_packet: f64,
    pub throughput: f64,
}

/// Monte Carlo mean with its standard error.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CfEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: u64,
}

impl From<Estimate> for CfEstimate {
    fn from(e: Estimate) -> Self {
        CfEstimate {
            mean: e.mean,
            std_err: e.std_err,
            samples: e.samples,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(CfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(CfStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CfStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CfStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            CfStatus::Panic
        }
    }
}

unsafe fn write<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null, and the caller promises it points to writable storage for a T
    unsafe { out.write(v) };
    Ok(())
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller promises `p` is null or a live handle from this library
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn cf_status_name(status: CfStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        CfStatus::Ok => b"ok\0",
        CfStatus::InvalidArgument => b"invalid argument\0",
        CfStatus::Domain => b"domain error\0",
        CfStatus::Unstable => b"unstable\0",
        CfStatus::NonConvergence => b"no convergence\0",
        CfStatus::PolicyNonConvergence => b"policy search did not converge\0",
        CfStatus::Balance => b"balance check failed\0",
        CfStatus::Config => b"config error\0",
        CfStatus::Io => b"i/o error\0",
        CfStatus::NullPointer => b"null pointer\0",
        CfStatus::Panic => b"internal panic\0",
    };
    s.as_ptr().cast()
}

/// Creates a network with unit slot energies and free ACKs.
///
/// # Safety
/// `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_network_new(
    lambda1: f64,
    lambda2: f64,
    p1: f64,
    p2: f64,
    out: *mut *mut CfNetwork,
) -> CfStatus {
    guard(|| {
        let params = LineNetworkParams::new(lambda1, lambda2, p1, p2);
        params.validate()?;
        let h = Box::into_raw(Box::new(CfNetwork { params }));
        // SAFETY: forwarded caller contract
        unsafe { write(out, h, "out") }.inspect_err(|_| {
            // SAFETY: `h` came from Box::into_raw just above
            drop(unsafe { Box::from_raw(h) });
        })
    })
}

/// Sets the per-slot energies of S1, S2 and the ACK slot.
///
/// # Safety
/// `net` must be null or a live handle from [`cf_network_new`].
#[no_mangle]
pub unsafe extern "C" fn cf_network_set_energy(net: *mut CfNetwork, e1: f64, e2: f64, e_ack: f64) -> CfStatus {
    guard(|| {
        // SAFETY: forwarded caller contract
        let net = unsafe { net.as_mut() }.ok_or_else(|| null("net"))?;
        let energy = EnergyParams { e1, e2, e_ack };
        energy.validate()?;
        net.params.energy = energy;
        Ok(())
    })
}

/// Releases a network handle. Null is ignored.
///
/// # Safety
/// `net` must be null or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cf_network_free(net: *mut CfNetwork) {
    if !net.is_null() {
        // SAFETY: forwarded caller contract
        drop(unsafe { Box::from_raw(net) });
    }
}

/// Genie-aided scheme with coding across flows, caps chosen automatically.
///
/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_genie_inter(net: *const CfNetwork, out: *mut CfInterMetrics) -> CfStatus {
    guard(|| {
        // SAFETY: forwarded caller contract
        let net = unsafe { borrow(net, "net") }?;
        let r = genie_inter::analyze(&net.params, &ModelOptions::default())?;
        let m = CfInterMetrics {
            mean_i1: r.mean_i1,
            mean_i2: r.mean_i2,
            p_empty1: r.stationary_empty[0],
            p_empty2: r.stationary_empty[1],
            delay_node1: r.metrics.delay_node1,
            delay_node2: r.metrics.delay_node2,
            flow1_end_to_end: r.metrics.flow1_end_to_end,
            flow2_end_to_end: r.metrics.flow2_end_to_end,
            energy_per_packet_s1: r.metrics.energy_per_packet_s1,
            energy_per_packet_s2: r.metrics.energy_per_packet_s2,
            cap1: r.caps[0] as u32,
            cap2: r.caps[1] as u32,
        };
        // SAFETY: forwarded caller contract
        unsafe { write(out, m, "out") }
    })
}

/// Genie-aided scheme with per-session coding; S2 serves flow 1 with
/// probability `ps`. With `strict` an empty scheduled flow idles the slot.
///
/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_genie_intra(
    net: *const CfNetwork,
    ps: f64,
    strict: bool,
    out: *mut CfIntraMetrics,
) -> CfStatus {
    guard(|| {
        // SAFETY: forwarded caller contract
        let net = unsafe { borrow(net, "net") }?;
        let opts = IntraOptions {
            model: ModelOptions::default(),
            mode: if strict { ServiceMode::Strict } else { ServiceMode::Override },
        };
        let r = intra_metrics(&net.params, &SchedulingPolicy::Randomized(ps), &opts)?;
        let m = CfIntraMetrics {
            mean_i1: r.mean_queue[0],
            mean_i2: r.mean_queue[1],
            mean_i3: r.mean_queue[2],
            d1_flow1: r.metrics.d1_flow1,
            d2_flow1: r.metrics.d2_flow1,
            d2_flow2: r.metrics.d2_flow2,
            flow1_total: r.metrics.flow1_total,
            flow2_total: r.metrics.flow2_total,
        };
        // SAFETY: forwarded caller contract
        unsafe { write(out, m, "out") }
    })
}

/// Half-duplex online scheme with every burst equal to the backlog.
///
/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_hd_online(net: *const CfNetwork, out: *mut CfOnlineMetrics) -> CfStatus {
    guard(|| {
        // SAFETY: forwarded caller contract
        let net = unsafe { borrow(net, "net") }?;
        let r = online_metrics(&net.params, &OnlinePolicy::identity(), &ModelOptions::default())?;
        let m = CfOnlineMetrics {
            mean_i1: r.mean_i1,
            mean_i2: r.mean_i2,
            delay_node1: r.metrics.delay_node1,
            delay_node2: r.metrics.delay_node2,
            mean_delay: r.mean_delay,
            energy_per_packet: r.energy_per_packet,
            throughput: r.throughput,
        };
        // SAFETY: forwarded caller contract
        unsafe { write(out, m, "out") }
    })
}

/// Searches burst tables for a batch of `m1` + `m2` packets. The arrival
/// rates of `net` are ignored; its erasure probabilities and energies apply.
///
/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_batch_optimize(
    net: *const CfNetwork,
    m1: u32,
    m2: u32,
    objective: CfObjective,
    out: *mut *mut CfBatchPlan,
) -> CfStatus {
    guard(|| {
        // SAFETY: forwarded caller contract
        let net = unsafe { borrow(net, "net") }?;
        let p = &net.params;
        let config = BatchConfig::new(m1, m2, p.p1, p.p2)
            .with_energy(p.energy)
            .with_objective(objective.into());
        let result = algorithm1(&config, &SearchOptions::default())?;
        let h = Box::into_raw(Box::new(CfBatchPlan { config, result }));
        // SAFETY: forwarded caller contract
        unsafe { write(out, h, "out") }.inspect_err(|_| {
            // SAFETY: `h` came from Box::into_raw just above
            drop(unsafe { Box::from_raw(h) });
        })
    })
}

/// Expected completion time (slots) and energy of the plan.
///
/// # Safety
/// `plan` must be a live handle; each output is null or writable.
#[no_mangle]
pub unsafe extern "C" fn cf_batch_plan_stats(
    plan: *const CfBatchPlan,
    mean_time: *mut f64,
    mean_energy: *mut f64,
    iterations: *mut u32,
) -> CfStatus {
    guard(|| {
        // SAFETY: forwarded caller contract
        let plan = unsafe { borrow(plan, "plan") }?;
        let r = &plan.result;
        // SAFETY: each pointer is null or writable per the caller contract
        unsafe {
            if !mean_time.is_null() {
                mean_time.write(r.stats.mean_time);
            }
            if !mean_energy.is_null() {
                mean_energy.write(r.stats.mean_energy);
            }
            if !iterations.is_null() {
                iterations.write(r.iterations as u32);
            }
        }
        Ok(())
    })
}

/// Burst S1 sends with `i1` dof left, or S2 with `(i1, i2)` when `node` is 2.
/// `i2` is ignored for node 1.
///
/// # Safety
/// `plan` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_batch_plan_burst(
    plan: *const CfBatchPlan,
    node: u32,
    i1: u32,
    i2: u32,
    out: *mut u32,
) -> CfStatus {
    guard(|| {
        // SAFETY: forwarded caller contract
        let plan = unsafe { borrow(plan, "plan") }?;
        let cfg = &plan.config;
        let table = &plan.result.policy;
        let n = match node {
            1 if i1 <= cfg.m1 => table.n1_at(i1),
            2 if i1 <= cfg.m1 && i1 + i2 <= cfg.total() => table.n2_at(i1, i2),
            1 | 2 => {
                return Err(Failure(
                    CfStatus::InvalidArgument,
                    format!("state ({i1}, {i2}) is outside the batch"),
                ))
            }
            _ => return Err(Failure(CfStatus::InvalidArgument, format!("node must be 1 or 2, got {node}"))),
        };
        // SAFETY: forwarded caller contract
        unsafe { write(out, n, "out") }
    })
}

/// Monte Carlo completion time and energy of the plan over `runs` batches.
///
/// # Safety
/// `plan` must be a live handle and both outputs writable.
#[no_mangle]
pub unsafe extern "C" fn cf_batch_plan_simulate(
    plan: *const CfBatchPlan,
    seed: u64,
    runs: u64,
    time: *mut CfEstimate,
    energy: *mut CfEstimate,
) -> CfStatus {
    guard(|| {
        // SAFETY: forwarded caller contract
        let plan = unsafe { borrow(plan, "plan") }?;
        let cfg = SimConfig {
            seed,
            budget: runs,
            warmup: 0,
            ..Default::default()
        };
        let params = LineNetworkParams::new(0.0, 0.0, plan.config.p1, plan.config.p2).with_energy(plan.config.energy);
        let model = SimModel::HdBatch {
            config: plan.config,
            policy: plan.result.policy.clone(),
        };
        let rep = simulate(&cfg, &params, &model)?;
        let get = |name: &str| {
            rep.get(name)
                .map(CfEstimate::from)
                .ok_or_else(|| Failure(CfStatus::Panic, format!("simulator did not report {name}")))
        };
        // SAFETY: forwarded caller contract
        unsafe {
            write(time, get("completion_slots")?, "time")?;
            write(energy, get("energy")?, "energy")
        }
    })
}

/// Releases a plan handle. Null is ignored.
///
/// # Safety
/// `plan` must be null or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cf_batch_plan_free(plan: *mut CfBatchPlan) {
    if !plan.is_null() {
        // SAFETY: forwarded caller contract
        drop(unsafe { Box::from_raw(plan) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_error_has_its_own_code() {
        let errors = [
            Error::Argument(String::new()),
            Error::Domain(String::new()),
            Error::Instability(String::new()),
            Error::NonConvergence {
                iterations: 1,
                residual: 1.0,
            },
            Error::PolicyNonConvergence { iterations: 1 },
            Error::Balance(String::new()),
            Error::Config(String::new()),
            Error::Io(String::new()),
        ];
        let codes: Vec<i32> = errors.iter().map(|e| CfStatus::from(e) as i32).collect();
        assert_eq!(codes, (1..=8).collect::<Vec<_>>());
    }

    #[test]
    fn panics_become_status_codes() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, CfStatus::Panic);
        let msg = unsafe { std::ffi::CStr::from_ptr(cf_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("boom"));
        assert_eq!(guard(|| Ok(())), CfStatus::Ok);
        assert!(cf_last_error_message().is_null());
    }
}
