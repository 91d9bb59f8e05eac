//! Queue-length caps for the finite surrogates of the infinite chains.

use crate::error::{Error, Result};
use crate::kernels::{check_eps, DEFAULT_EPS_TAIL};
use crate::markov::SolverOptions;

/// How the per-coordinate queue caps are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum CapChoice {
    /// Same cap on every coordinate.
    Fixed(usize),
    /// One cap per coordinate, in state order.
    PerAxis(Vec<usize>),
    /// Double caps one axis at a time until no reported metric moves by `tol`.
    Auto(AutoCap),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoCap {
    /// Starting cap per axis; `None` uses the model's default.
    pub initial: Option<usize>,
    pub tol: f64,
    pub max_cap: usize,
}

impl Default for AutoCap {
    fn default() -> Self {
        AutoCap {
            initial: None,
            tol: 1e-6,
            max_cap: 1024,
        }
    }
}

impl Default for CapChoice {
    fn default() -> Self {
        CapChoice::Auto(AutoCap::default())
    }
}

/// Knobs common to every steady-state model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOptions {
    pub caps: CapChoice,
    pub eps_tail: f64,
    pub solver: SolverOptions,
    /// Stationary mass allowed on states touching a cap before the
    /// configuration is declared unstable.
    pub boundary_eps: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            caps: CapChoice::default(),
            eps_tail: DEFAULT_EPS_TAIL,
            solver: SolverOptions::default(),
            boundary_eps: 1e-6,
        }
    }
}

impl ModelOptions {
    pub fn fixed(cap: usize) -> Self {
        ModelOptions {
            caps: CapChoice::Fixed(cap),
            ..Default::default()
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        check_eps(self.eps_tail)?;
        if !(self.boundary_eps > 0.0) {
            return Err(Error::arg("boundary_eps must be > 0"));
        }
        if let CapChoice::Auto(a) = &self.caps {
            if !(a.tol > 0.0) {
                return Err(Error::arg("auto-cap tolerance must be > 0"));
            }
        }
        Ok(())
    }
}

/// Something evaluated on a truncated chain whose convergence in the caps
/// can be judged from a flat vector of reported numbers.
pub(crate) trait CapMetrics {
    fn convergence_metrics(&self) -> Vec<f64>;
    /// Stationary mass on states where some coordinate equals its cap.
    fn boundary_mass(&self) -> f64;
}

pub(crate) fn max_metric_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() })
        .fold(0.0, f64::max)
}

/// Resolves `choice` into concrete caps and evaluates the model there.
pub(crate) fn resolve_caps<const D: usize, M, F>(
    choice: &CapChoice,
    default_initial: usize,
    boundary_eps: f64,
    eval: F,
) -> Result<([usize; D], M)>
where
    M: CapMetrics + Send,
    F: Fn([usize; D]) -> Result<M> + Sync,
{
    let checked = |caps: [usize; D], m: M| -> Result<([usize; D], M)> {
        let b = m.boundary_mass();
        if b > boundary_eps {
            return Err(Error::Instability(format!(
                "stationary mass {b:e} at the queue caps {caps:?} exceeds {boundary_eps:e}"
            )));
        }
        Ok((caps, m))
    };
    match choice {
        CapChoice::Fixed(c) => {
            let caps = [*c; D];
            validate_caps(&caps)?;
            let m = eval(caps)?;
            checked(caps, m)
        }
        CapChoice::PerAxis(v) => {
            let caps: [usize; D] = v
                .as_slice()
                .try_into()
                .map_err(|_| Error::arg(format!("expected {D} caps, got {}", v.len())))?;
            validate_caps(&caps)?;
            let m = eval(caps)?;
            checked(caps, m)
        }
        CapChoice::Auto(auto) => {
            let mut caps = [auto.initial.unwrap_or(default_initial); D];
            validate_caps(&caps)?;
            let mut current = eval(caps)?;
            loop {
                let base = current.convergence_metrics();
                let mut grew = false;
                for axis in 0..D {
                    if caps[axis] >= auto.max_cap {
                        continue;
                    }
                    let mut trial = caps;
                    trial[axis] = (caps[axis] * 2).min(auto.max_cap);
                    let m = eval(trial)?;
                    if max_metric_change(&base, &m.convergence_metrics()) >= auto.tol {
                        if trial[axis] == auto.max_cap {
                            return Err(Error::Instability(format!(
                                "metrics still moving at cap {} on axis {axis}",
                                auto.max_cap
                            )));
                        }
                        caps = trial;
                        current = m;
                        grew = true;
                        break;
                    }
                }
                if !grew {
                    return checked(caps, current);
                }
            }
        }
    }
}

fn validate_caps(caps: &[usize]) -> Result<()> {
    if caps.iter().any(|&c| c < 1) {
        return Err(Error::arg(format!("every cap must be >= 1, got {caps:?}")));
    }
    Ok(())
}
