//! Stochastic primitives shared by every chain model: Poisson arrivals,
//! erasure-channel dof service and the one-slot transfer offset.

use crate::error::{Error, Result};
use statrs::function::gamma::ln_gamma;

/// Default Poisson tail mass left out of any enumerated arrival distribution.
pub const DEFAULT_EPS_TAIL: f64 = 1e-10;

/// Per-slot energy costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParams {
    /// Energy per slot in which S₁ transmits.
    pub e1: f64,
    /// Energy per slot in which S₂ transmits.
    pub e2: f64,
    /// Energy per acknowledgment slot (half-duplex schemes only).
    pub e_ack: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            e1: 1.0,
            e2: 1.0,
            e_ack: 0.0,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("E1", self.e1), ("E2", self.e2), ("E_ack", self.e_ack)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::arg(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        EnergyParams {
            e1: self.e1 * c,
            e2: self.e2 * c,
            e_ack: self.e_ack * c,
        }
    }
}

/// The full scenario: S₁ → S₂ → R with Poisson sources at S₁ and S₂.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineNetworkParams {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Erasure probability on S₁ → S₂.
    pub p1: f64,
    /// Erasure probability on S₂ → R.
    pub p2: f64,
    pub energy: EnergyParams,
}

impl LineNetworkParams {
    pub fn new(lambda1: f64, lambda2: f64, p1: f64, p2: f64) -> Self {
        LineNetworkParams {
            lambda1,
            lambda2,
            p1,
            p2,
            energy: EnergyParams::default(),
        }
    }

    pub fn with_energy(mut self, energy: EnergyParams) -> Self {
        self.energy = energy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            check_rate(name, v)?;
        }
        check_erasure("p1", self.p1)?;
        check_erasure("p2", self.p2)?;
        self.energy.validate()
    }

    /// λ₁ < 1 − p₁.
    pub fn stable1(&self) -> bool {
        self.lambda1 < 1.0 - self.p1
    }

    /// λ₁ + λ₂ < 1 − p₂.
    pub fn stable2(&self) -> bool {
        self.lambda1 + self.lambda2 < 1.0 - self.p2
    }

    pub fn is_stable(&self) -> bool {
        self.stable1() && self.stable2()
    }

    pub(crate) fn require_stable(&self) -> Result<()> {
        if !self.stable1() {
            return Err(Error::Instability(format!(
                "S1 queue: lambda1 = {} must be < 1 - p1 = {}",
                self.lambda1,
                1.0 - self.p1
            )));
        }
        if !self.stable2() {
            return Err(Error::Instability(format!(
                "S2 queue: lambda1 + lambda2 = {} must be < 1 - p2 = {}",
                self.lambda1 + self.lambda2,
                1.0 - self.p2
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_rate(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("{name} must be a finite rate >= 0, got {v}")))
    }
}

pub(crate) fn check_erasure(name: &str, p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::arg(format!("{name} must lie in [0, 1), got {p}")))
    }
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("eps_tail must lie in (0, 1), got {eps}")))
    }
}

fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// Poisson(mean) pmf at `x`, no validation.
pub(crate) fn poisson_pmf(x: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if x == 0 { 1.0 } else { 0.0 };
    }
    if x <= 30 && mean <= 30.0 {
        let mut v = (-mean).exp();
        for k in 1..=x {
            v *= mean / k as f64;
        }
        v
    } else {
        (-mean + x as f64 * mean.ln() - ln_factorial(x)).exp()
    }
}

/// Probability of `x` arrivals in `b` slots at rate `lambda` per slot.
pub fn arrival_pmf(x: u64, b: u64, lambda: f64) -> Result<f64> {
    check_rate("lambda", lambda)?;
    Ok(poisson_pmf(x, lambda * b as f64))
}

/// Enumerated Poisson arrival law: `pmf[x]` for `x ≤ cutoff` plus the mass beyond.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalLaw {
    pub pmf: Vec<f64>,
    /// P(X > cutoff); at most the configured tail epsilon.
    pub tail: f64,
}

impl ArrivalLaw {
    pub fn cutoff(&self) -> usize {
        self.pmf.len() - 1
    }

    /// The enumerated terms followed by the unenumerated tail lumped at
    /// `cutoff + 1`, as `(arrivals, probability)` pairs.
    pub fn lumped(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let tail = (self.tail > 0.0).then_some((self.pmf.len(), self.tail));
        self.pmf.iter().copied().enumerate().chain(tail)
    }

    /// Distribution of `min(base + X, cap)` as `(level, probability)` pairs,
    /// with the unenumerated tail lumped at `cutoff + 1` arrivals, and how much
    /// of that lumped mass stays below the cap.
    pub fn clipped(&self, base: usize, cap: usize) -> (Vec<(usize, f64)>, f64) {
        let base = base.min(cap);
        let mut out = Vec::with_capacity(self.pmf.len().min(cap - base + 1) + 1);
        let mut at_cap = 0.0;
        for (a, p) in self.lumped() {
            let t = base + a;
            if t >= cap {
                at_cap += p;
            } else {
                out.push((t, p));
            }
        }
        let truncated = if base + self.pmf.len() < cap { self.tail } else { 0.0 };
        if at_cap > 0.0 {
            out.push((cap, at_cap));
        }
        (out, truncated)
    }
}

/// Smallest `X` with `P(Poisson(mean) > X) ≤ eps`.
pub fn poisson_truncation(mean: f64, eps: f64) -> Result<u64> {
    check_rate("mean", mean)?;
    check_eps(eps)?;
    Ok(arrival_law(mean, eps).cutoff() as u64)
}

/// Arrival law with the shared truncation rule applied. `eps` must be valid.
pub(crate) fn arrival_law(mean: f64, eps: f64) -> ArrivalLaw {
    if mean == 0.0 {
        return ArrivalLaw {
            pmf: vec![1.0],
            tail: 0.0,
        };
    }
    // far enough that the remaining mass is below any representable eps
    let horizon = (mean + 40.0 * mean.sqrt() + 60.0).ceil() as u64;
    let terms: Vec<f64> = (0..=horizon).map(|x| poisson_pmf(x, mean)).collect();
    // suffix[x] = P(X >= x), summed from the top for accuracy in the tail
    let mut suffix = vec![0.0; terms.len() + 1];
    for x in (0..terms.len()).rev() {
        suffix[x] = suffix[x + 1] + terms[x];
    }
    let cutoff = (0..terms.len()).find(|&x| suffix[x + 1] <= eps).unwrap_or(terms.len() - 1);
    ArrivalLaw {
        pmf: terms[..=cutoff].to_vec(),
        tail: suffix[cutoff + 1],
    }
}

/// Binomial(n, q) pmf at k, no validation.
pub(crate) fn binomial_pmf(k: u64, n: u64, q: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    if q == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if q == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    if n <= 60 {
        let k_small = k.min(n - k);
        let mut c = 1.0f64;
        for i in 0..k_small {
            c = c * (n - i) as f64 / (i + 1) as f64;
        }
        c * q.powi(k as i32) * (1.0 - q).powi((n - k) as i32)
    } else {
        let lc = ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k);
        (lc + k as f64 * q.ln() + (n - k) as f64 * (1.0 - q).ln()).exp()
    }
}

/// Number of dof `y` that cross a link in a burst of `b` coded packets when the
/// sender holds `x` dof unseen by the receiver.
///
/// The count saturates at `min(x, b)`: the top value collects the binomial
/// upper tail from `min(x, b)` to `b`.
pub fn service_pmf(y: u64, x: u64, b: u64, p: f64) -> Result<f64> {
    check_erasure("p", p)?;
    Ok(service_prob(y, x, b, p))
}

pub(crate) fn service_prob(y: u64, x: u64, b: u64, p: f64) -> f64 {
    if x == 0 {
        return if y == 0 { 1.0 } else { 0.0 };
    }
    let top = x.min(b);
    let q = 1.0 - p;
    if y < top {
        binomial_pmf(y, b, q)
    } else if y == top {
        (top..=b).map(|m| binomial_pmf(m, b, q)).sum()
    } else {
        0.0
    }
}

/// `service_prob(y, x, b, p)` for `y = 0..=min(x, b)`.
pub(crate) fn service_row(x: u64, b: u64, p: f64) -> Vec<f64> {
    let top = x.min(b);
    (0..=top).map(|y| service_prob(y, x, b, p)).collect()
}

/// Net change of S₂'s queue caused by one slot of service: `y1 − y2`.
pub fn transfer_offset(y1: u8, y2: u8) -> Result<i8> {
    match (y1, y2) {
        (0, 0) | (1, 1) => Ok(0),
        (0, 1) => Ok(-1),
        (1, 0) => Ok(1),
        _ => Err(Error::arg(format!(
            "transfer indicators must be 0 or 1, got ({y1}, {y2})"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn arrival_examples() {
        assert_eq!(arrival_pmf(0, 7, 0.0).unwrap(), 1.0);
        assert_eq!(arrival_pmf(0, 0, 0.3).unwrap(), 1.0);
        assert!((arrival_pmf(0, 1, 0.25).unwrap() - 0.778_800_783_071_404_9).abs() < 1e-15);
        assert!((arrival_pmf(2, 2, 0.5).unwrap() - (-1f64).exp() / 2.0).abs() < 1e-15);
        assert!((arrival_pmf(2, 2, 0.5).unwrap() - 0.183_939_720_585_721_1).abs() < 1e-15);
    }

    #[test]
    fn arrival_rejects_negative_rate() {
        assert!(matches!(arrival_pmf(1, 1, -0.1), Err(Error::Argument(_))));
        assert!(arrival_pmf(1, 1, f64::NAN).is_err());
    }

    #[test]
    fn arrival_log_space_agrees_with_direct() {
        // x > 30 switches to the log-gamma route
        let direct = {
            let mut v = (-20.0f64).exp();
            for k in 1..=31 {
                v *= 20.0 / k as f64;
            }
            v
        };
        assert!((poisson_pmf(31, 20.0) / direct - 1.0).abs() < 1e-12);
        // large bursts do not overflow
        let big = poisson_pmf(1000, 1000.0);
        assert!(big > 0.0 && big < 0.02);
    }

    #[test]
    fn service_examples() {
        assert_eq!(service_pmf(0, 0, 5, 0.3).unwrap(), 1.0);
        assert!((service_pmf(1, 1, 1, 0.3).unwrap() - 0.7).abs() < 1e-15);
        assert!((service_pmf(2, 2, 3, 0.4).unwrap() - 0.648).abs() < 1e-15);
        assert_eq!(service_pmf(3, 2, 3, 0.4).unwrap(), 0.0);
        assert_eq!(service_pmf(1, 0, 3, 0.4).unwrap(), 0.0);
    }

    #[test]
    fn service_short_burst_saturates_at_burst() {
        // fewer packets than dof: y = b needs every packet through
        assert!((service_pmf(2, 5, 2, 0.3).unwrap() - 0.49).abs() < 1e-15);
        assert!((service_pmf(0, 5, 0, 0.3).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn service_rejects_bad_erasure() {
        assert!(service_pmf(0, 1, 1, 1.0).is_err());
        assert!(service_pmf(0, 1, 1, -0.01).is_err());
    }

    #[test]
    fn transfer_offset_table() {
        assert_eq!(transfer_offset(0, 0).unwrap(), 0);
        assert_eq!(transfer_offset(1, 1).unwrap(), 0);
        assert_eq!(transfer_offset(0, 1).unwrap(), -1);
        assert_eq!(transfer_offset(1, 0).unwrap(), 1);
        assert!(transfer_offset(2, 0).is_err());
    }

    #[test]
    fn truncation_is_smallest_cutoff() {
        for &(mean, eps) in &[(0.25, 1e-10), (1.0, 1e-6), (7.5, 1e-10), (0.01, 1e-3)] {
            let x = poisson_truncation(mean, eps).unwrap();
            let cdf = |k: u64| (0..=k).map(|i| poisson_pmf(i, mean)).sum::<f64>();
            assert!(1.0 - cdf(x) <= eps * (1.0 + 1e-6));
            if x > 0 {
                assert!(1.0 - cdf(x - 1) > eps);
            }
        }
        assert_eq!(poisson_truncation(0.0, 1e-10).unwrap(), 0);
        assert!(poisson_truncation(1.0, 0.0).is_err());
    }

    #[test]
    fn clipped_law_preserves_mass() {
        let law = arrival_law(0.8, 1e-10);
        for (base, cap) in [(0, 3), (2, 40), (5, 5), (7, 6)] {
            let (d, trunc) = law.clipped(base, cap);
            let total: f64 = d.iter().map(|x| x.1).sum();
            assert!((total - 1.0).abs() < 1e-14);
            assert!(d.iter().all(|&(t, _)| t <= cap && t >= base.min(cap)));
            assert!(trunc <= 1e-10);
        }
    }

    proptest! {
        #[test]
        fn service_sums_to_one(x in 0u64..40, b in 0u64..=30, p in 0.0f64..0.999) {
            let s: f64 = (0..=x.min(b)).map(|y| service_pmf(y, x, b, p).unwrap()).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn below_saturation_is_pure_binomial(y in 0u64..10, b in 0u64..=30, p in 0.0f64..0.99, extra in 1u64..20) {
            let x = y + 1;
            prop_assume!(y < x.min(b));
            let a = service_pmf(y, x, b, p).unwrap();
            let c = service_pmf(y, x + extra, b, p).unwrap();
            prop_assert_eq!(a, c);
        }

        #[test]
        fn truncated_arrivals_cover_mass(b in 0u64..=20, lambda in 0.0f64..0.5) {
            prop_assume!(lambda * b as f64 <= 10.0);
            let x = poisson_truncation(lambda * b as f64, DEFAULT_EPS_TAIL).unwrap();
            let s: f64 = (0..=x).map(|k| arrival_pmf(k, b, lambda).unwrap()).sum();
            prop_assert!(s >= 1.0 - DEFAULT_EPS_TAIL - 1e-14);
        }
    }
}
