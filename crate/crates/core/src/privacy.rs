//! Noise calibration formulas, sensitivity bounds and the Gaussian sampler.
//!
//! Calibration functions are pure. Every optimizer draws its noise through
//! [`NoiseLedger`], which records the `(site, sigma, dim)` of each draw so a
//! report can be audited against the calibrated values.

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::math;

/// Privacy parameters `(ε, δ)` plus the accountant constant `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    eps: f64,
    delta: f64,
    c: f64,
}

impl PrivacyBudget {
    pub fn new(eps: f64, delta: f64) -> Result<Self> {
        Self::with_constant(eps, delta, 1.0)
    }

    pub fn with_constant(eps: f64, delta: f64, c: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::invalid("eps", "must be positive and finite"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid("delta", "must lie in (0, 1)"));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid("c", "must be positive and finite"));
        }
        Ok(PrivacyBudget { eps, delta, c })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `ln(1/δ)`.
    pub fn log_inv_delta(&self) -> f64 {
        -math::ln(self.delta)
    }

    /// Same budget with `δ` halved.
    pub fn halve_delta(&self) -> Self {
        PrivacyBudget { delta: 0.5 * self.delta, ..*self }
    }
}

fn check_eps_delta(eps: f64, delta: f64) -> Result<()> {
    PrivacyBudget::new(eps, delta).map(|_| ())
}

/// Gaussian mechanism: `σ = s·√(2 ln(1.25/δ))/ε` for a query of ℓ₂-sensitivity `s`.
pub fn gaussian_sigma(sensitivity: f64, eps: f64, delta: f64) -> Result<f64> {
    if !(sensitivity >= 0.0 && sensitivity.is_finite()) {
        return Err(Error::invalid("sensitivity", "must be non-negative and finite"));
    }
    check_eps_delta(eps, delta)?;
    Ok(sensitivity * math::sqrt(2.0 * math::ln(1.25 / delta)) / eps)
}

/// Subsampled-Gaussian accountant noise:
/// `σ = c·λ·√(ln 1/δ)/ε · max{1/b, √T/n}` where `λ` bounds each sample's
/// contribution to the summed query.
pub fn accountant_sigma(lambda: f64, b: usize, t: usize, n: usize, budget: &PrivacyBudget) -> Result<f64> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda", "must be non-negative and finite"));
    }
    if b == 0 || b > n {
        return Err(Error::invalid("b", "must satisfy 1 <= b <= n"));
    }
    if t == 0 {
        return Err(Error::invalid("T", "must be at least 1"));
    }
    let rate = (1.0 / b as f64).max(math::sqrt(t as f64) / n as f64);
    Ok(budget.c * lambda * math::sqrt(budget.log_inv_delta()) / budget.eps * rate)
}

/// ℓ₂-sensitivity `2·L1·step/b2` of a mini-batch mean of gradient variations.
pub fn spider_gv_sensitivity(smoothness: f64, step: f64, b2: usize) -> f64 {
    2.0 * smoothness * step / b2 as f64
}

/// ℓ₂-sensitivity `2β·2^{D/2}/b` of a tree-node gradient variation.
pub fn tree_gv_sensitivity(beta: f64, depth: u32, b: usize) -> f64 {
    2.0 * beta * math::powf(2.0, 0.5 * depth as f64) / b as f64
}

/// One row of the noise ledger: `count` consecutive draws at `site` of
/// `dim`-dimensional noise with standard deviation `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLedgerEntry {
    pub site: &'static str,
    pub sigma: f64,
    pub dim: usize,
    pub count: usize,
}

/// Record of every Gaussian draw made during a run. Consecutive draws with
/// identical `(site, sigma, dim)` share one entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseLedger {
    entries: Vec<NoiseLedgerEntry>,
}

impl NoiseLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[NoiseLedgerEntry] {
        &self.entries
    }

    /// Total number of recorded draws.
    pub fn draws(&self) -> usize {
        self.entries.iter().map(|e| e.count).sum()
    }

    /// Draws at `site`, in order, expanded one per draw.
    pub fn sigmas_at(&self, site: &str) -> Vec<f64> {
        self.entries.iter().filter(|e| e.site == site).flat_map(|e| core::iter::repeat_n(e.sigma, e.count)).collect()
    }

    fn record(&mut self, site: &'static str, sigma: f64, dim: usize) {
        match self.entries.last_mut() {
            Some(e) if e.site == site && e.sigma.to_bits() == sigma.to_bits() && e.dim == dim => e.count += 1,
            _ => self.entries.push(NoiseLedgerEntry { site, sigma, dim, count: 1 }),
        }
    }

    /// Adds `N(0, σ² I)` noise to `out` and records the draw.
    /// With `σ = 0` nothing is added and the generator is not advanced.
    pub fn add_gaussian<R: Rng + ?Sized>(&mut self, site: &'static str, sigma: f64, out: &mut [f64], rng: &mut R) {
        debug_assert!(sigma >= 0.0);
        self.record(site, sigma, out.len());
        if sigma > 0.0 {
            for o in out.iter_mut() {
                *o += sigma * math::standard_normal(rng);
            }
        }
    }

    pub fn draw_gaussian<R: Rng + ?Sized>(
        &mut self,
        site: &'static str,
        dim: usize,
        sigma: f64,
        rng: &mut R,
    ) -> Vec<f64> {
        let mut v = linalg::zeros(dim);
        self.add_gaussian(site, sigma, &mut v, rng);
        v
    }

    /// Appends another ledger, keeping the merge rule.
    pub fn extend(&mut self, other: &NoiseLedger) {
        for e in &other.entries {
            match self.entries.last_mut() {
                Some(l) if l.site == e.site && l.sigma.to_bits() == e.sigma.to_bits() && l.dim == e.dim => {
                    l.count += e.count
                }
                _ => self.entries.push(e.clone()),
            }
        }
    }
}

impl fmt::Display for NoiseLedgerEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.site, self.sigma, self.dim, self.count)
    }
}

/// Isotropic Gaussian vector with standard deviation `sigma` per component.
pub fn draw_gaussian<R: Rng + ?Sized>(dim: usize, sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma", "must be non-negative and finite"));
    }
    let mut ledger = NoiseLedger::new();
    Ok(ledger.draw_gaussian("standalone", dim, sigma, rng))
}
