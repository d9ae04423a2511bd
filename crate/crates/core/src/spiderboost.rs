//! Private SpiderBoost for empirical stationary points.
//!
//! Phases of length `q` start from a noisy mini-batch gradient; within a
//! phase the estimate is advanced by noisy mini-batch gradient variations
//! whose noise scales with the step length `‖w_t − w_{t−1}‖`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::loss::{self, Loss};
use crate::math;
use crate::privacy::{accountant_sigma, NoiseLedger, PrivacyBudget};
use crate::sampling::{batch_mean_grad, batch_mean_variation, BatchSampler, BatchSampling};

pub const SITE_FRESH: &str = "spider.fresh";
pub const SITE_VARIATION: &str = "spider.variation";

#[derive(Debug, Clone, PartialEq)]
pub struct SpiderParams {
    pub eta: f64,
    pub q: usize,
    pub b1: usize,
    pub b2: usize,
    pub t: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma2_hat: f64,
}

impl SpiderParams {
    /// Number of phase starts `⌈T/q⌉`.
    pub fn phases(&self) -> usize {
        self.t.div_ceil(self.q)
    }

    /// `b1·⌈T/q⌉ + 2·b2·(T − ⌈T/q⌉)`.
    pub fn oracle_calls(&self) -> usize {
        self.b1 * self.phases() + 2 * self.b2 * (self.t - self.phases())
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.b1 == 0 || self.b1 > n {
            return Err(Error::invalid("b1", format!("must lie in [1, {n}], got {}", self.b1)));
        }
        if self.b2 == 0 || self.b2 > n {
            return Err(Error::invalid("b2", format!("must lie in [1, {n}], got {}", self.b2)));
        }
        if self.q == 0 {
            return Err(Error::invalid("q", "must be at least 1"));
        }
        if self.t == 0 {
            return Err(Error::invalid("T", "must be at least 1"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta", "must be positive and finite"));
        }
        for (name, s) in [("sigma1", self.sigma1), ("sigma2", self.sigma2), ("sigma2_hat", self.sigma2_hat)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::invalid(name, "must be non-negative and finite"));
            }
        }
        Ok(())
    }
}

/// `ᾱ = √(d ln(1/δ))/(nε)`.
pub fn alpha_bar(n: usize, d: usize, budget: &PrivacyBudget) -> f64 {
    math::sqrt(d as f64 * budget.log_inv_delta()) / (n as f64 * budget.eps())
}

fn check_positive(constants: &[(&'static str, f64)]) -> Result<()> {
    for &(name, v) in constants {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(name, "must be positive and finite"));
        }
    }
    Ok(())
}

/// Parameter settings that balance sampling and privacy error.
///
/// Rejects `(n, d)` outside the sample-size regime where the settings apply;
/// the error message lists every failed bound.
pub fn derive_spider_params(
    n: usize,
    d: usize,
    l0: f64,
    l1: f64,
    f0: f64,
    budget: &PrivacyBudget,
) -> Result<SpiderParams> {
    check_positive(&[("L0", l0), ("L1", l1), ("F0", f0)])?;
    if n == 0 || d == 0 {
        return Err(Error::invalid("n, d", "must be at least 1"));
    }
    let (nf, df) = (n as f64, d as f64);
    let eps = budget.eps();
    let log_d = budget.log_inv_delta();

    let first = (l0 * eps) * (l0 * eps) / (f0 * l1 * df * log_d);
    let second = math::sqrt(df) * 1f64.max(math::sqrt(l1 * f0) / l0) / eps;
    let mut failed: Vec<String> = Vec::new();
    if nf < first {
        failed.push(format!("n = {n} < (L0 eps)^2 / (F0 L1 d ln(1/delta)) = {first}"));
    }
    if nf < second {
        failed.push(format!("n = {n} < sqrt(d) max(1, sqrt(L1 F0)/L0) / eps = {second}"));
    }
    if !failed.is_empty() {
        return Err(Error::Precondition(failed.join("; ")));
    }

    let b2_a = math::powf(l0 * nf * eps / math::sqrt(f0 * l1 * df * log_d), 2.0 / 3.0);
    let b2_b =
        math::powf(l0 * nf * df * log_d, 1.0 / 3.0) / (math::powf(l1 * f0, 1.0 / 6.0) * math::powf(eps, 2.0 / 3.0));
    let b2 = (math::floor(b2_a.max(b2_b)) as usize).clamp(1, n);

    let t_a = math::powf(math::powf(f0 * l1, 0.25) * nf * eps / math::sqrt(l0 * df * log_d), 4.0 / 3.0);
    let t_b = nf * eps / math::sqrt(df * log_d);
    let t = (math::floor(t_a.max(t_b)) as usize).max(1);

    let ab = alpha_bar(n, d, budget);
    let q_raw = 1.0 / (t as f64 * ab * ab);
    let q = if q_raw.is_finite() { (math::floor(q_raw) as usize).max(1) } else { 1 };

    let b1 = n;
    let phases = t.div_ceil(q);
    Ok(SpiderParams {
        eta: 1.0 / (2.0 * l1),
        q,
        b1,
        b2,
        t,
        sigma1: accountant_sigma(l0, b1, phases, n, budget)?,
        sigma2: accountant_sigma(l1, b2, t, n, budget)?,
        sigma2_hat: accountant_sigma(2.0 * l0, b2, t, n, budget)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpiderOptions {
    pub sampling: BatchSampling,
    /// Record the exact ERM gradient norm every `⌈T/200⌉` iterates.
    pub trace: bool,
    /// Keep every iterate `w_0 … w_T` in the report.
    pub record_trajectory: bool,
}

impl Default for SpiderOptions {
    fn default() -> Self {
        SpiderOptions { sampling: BatchSampling::default(), trace: true, record_trajectory: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpiderReport {
    pub w_out: Vec<f64>,
    /// Index in `1..=T` of the returned iterate.
    pub selected_index: usize,
    pub oracle_calls: usize,
    pub noise_ledger: NoiseLedger,
    /// `(t, ‖∇F(w_t; S)‖)` pairs; diagnostics only.
    pub grad_norm_trace: Vec<(usize, f64)>,
    /// `‖w_{t+1} − w_t‖` for `t = 0 … T−1`.
    pub step_norms: Vec<f64>,
    /// Iterations at which a fresh batch gradient was computed.
    pub fresh_at: Vec<usize>,
    pub trajectory: Option<Vec<Vec<f64>>>,
}

/// Runs Private SpiderBoost from `w_0 = 0` for `T` iterations and returns a
/// uniformly chosen iterate among `w_1 … w_T`.
pub fn run_spiderboost<R: Rng + ?Sized>(
    loss: &dyn Loss,
    data: &Dataset,
    params: &SpiderParams,
    options: &SpiderOptions,
    rng: &mut R,
) -> Result<SpiderReport> {
    let n = data.len();
    params.validate(n)?;
    loss::bind(loss, data)?;
    let d = data.dim();
    let p = params;

    let mut sampler = BatchSampler::new(n, options.sampling);
    let mut ledger = NoiseLedger::new();
    let stride = p.t.div_ceil(200).max(1);

    let mut w_prev = linalg::zeros(d);
    let mut w = linalg::zeros(d);
    let mut est = linalg::zeros(d);
    let mut delta = linalg::zeros(d);
    let mut iterates: Vec<Vec<f64>> = Vec::with_capacity(p.t);
    let mut trajectory = options.record_trajectory.then(|| alloc::vec![w.clone()]);
    let mut step_norms: Vec<f64> = Vec::with_capacity(p.t);
    let mut fresh_at = Vec::with_capacity(p.phases());
    let mut trace = Vec::new();
    let mut oracle_calls = 0;

    for t in 0..p.t {
        if t % p.q == 0 {
            let idx = sampler.draw(p.b1, rng);
            batch_mean_grad(loss, data, idx.iter().copied(), p.b1, &w, &mut est);
            ledger.add_gaussian(SITE_FRESH, p.sigma1, &mut est, rng);
            oracle_calls += p.b1;
            fresh_at.push(t);
        } else {
            let idx = sampler.draw(p.b2, rng);
            batch_mean_variation(loss, data, idx.iter().copied(), p.b2, &w, &w_prev, &mut delta);
            let sigma = (p.sigma2 * step_norms[t - 1]).min(p.sigma2_hat);
            ledger.add_gaussian(SITE_VARIATION, sigma, &mut delta, rng);
            linalg::axpy(&mut est, 1.0, &delta);
            oracle_calls += 2 * p.b2;
        }
        w_prev.copy_from_slice(&w);
        linalg::axpy(&mut w, -p.eta, &est);
        step_norms.push(linalg::dist(&w, &w_prev));
        if let Some(tr) = trajectory.as_mut() {
            tr.push(w.clone());
        }
        let k = t + 1;
        if options.trace && (k % stride == 0 || k == p.t) {
            trace.push((k, linalg::norm(&loss::erm_grad(loss, &w, data)?)));
        }
        iterates.push(w.clone());
    }

    let selected_index = rng.random_range(1..=p.t);
    let w_out = iterates.swap_remove(selected_index - 1);
    Ok(SpiderReport {
        w_out,
        selected_index,
        oracle_calls,
        noise_ledger: ledger,
        grad_norm_trace: trace,
        step_norms,
        fresh_at,
        trajectory,
    })
}

/// Estimator values `∇_0 … ∇_m` along a frozen iterate path `w_0 … w_m`.
pub fn estimator_along_path<R: Rng + ?Sized>(
    loss: &dyn Loss,
    data: &Dataset,
    params: &SpiderParams,
    path: &[Vec<f64>],
    sampling: BatchSampling,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    params.validate(data.len())?;
    let d = data.dim();
    if let Some(bad) = path.iter().find(|w| w.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    let mut sampler = BatchSampler::new(data.len(), sampling);
    let mut ledger = NoiseLedger::new();
    let mut est = linalg::zeros(d);
    let mut delta = linalg::zeros(d);
    let mut out = Vec::with_capacity(path.len());
    for (t, w) in path.iter().enumerate() {
        if t % params.q == 0 {
            let idx = sampler.draw(params.b1, rng);
            batch_mean_grad(loss, data, idx.iter().copied(), params.b1, w, &mut est);
            ledger.add_gaussian(SITE_FRESH, params.sigma1, &mut est, rng);
        } else {
            let idx = sampler.draw(params.b2, rng);
            batch_mean_variation(loss, data, idx.iter().copied(), params.b2, w, &path[t - 1], &mut delta);
            let sigma = (params.sigma2 * linalg::dist(w, &path[t - 1])).min(params.sigma2_hat);
            ledger.add_gaussian(SITE_VARIATION, sigma, &mut delta, rng);
            linalg::axpy(&mut est, 1.0, &delta);
        }
        out.push(est.clone());
    }
    Ok(out)
}

/// Monte Carlo estimate versus analytic bound at one path point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPoint {
    pub t: usize,
    /// Mean of `‖∇_t − ∇F(w_t; S)‖²` over trials.
    pub lhs: f64,
    /// Standard error of `lhs`.
    pub stderr: f64,
    /// `τ₂² Σ_{k=s_t+1}^t ‖w_k − w_{k−1}‖² + τ₁²`.
    pub rhs: f64,
}

impl BoundPoint {
    pub fn ratio(&self) -> f64 {
        self.lhs / self.rhs
    }

    /// `lhs ≤ rhs + z·stderr`.
    pub fn holds(&self, z: f64) -> bool {
        self.lhs <= self.rhs + z * self.stderr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBoundCheck {
    pub tau1_sq: f64,
    pub tau2_sq: f64,
    pub trials: usize,
    pub points: Vec<BoundPoint>,
}

impl ErrorBoundCheck {
    pub fn holds(&self, z: f64) -> bool {
        self.points.iter().all(|p| p.holds(z))
    }
}

/// Checks the estimator-error recursion on a frozen path with
/// `τ₁² = L0²/b1 + d·σ1²` and `τ₂² = L1²/b2 + d·σ2²`.
pub fn validate_spider_error_bound<R: Rng + ?Sized>(
    loss: &dyn Loss,
    data: &Dataset,
    params: &SpiderParams,
    path: &[Vec<f64>],
    trials: usize,
    sampling: BatchSampling,
    rng: &mut R,
) -> Result<ErrorBoundCheck> {
    if trials < 100 {
        return Err(Error::invalid("trials", "must be at least 100"));
    }
    let c = loss.constants();
    let d = data.dim() as f64;
    let tau1_sq = c.lipschitz * c.lipschitz / params.b1 as f64 + d * params.sigma1 * params.sigma1;
    let tau2_sq = c.smoothness * c.smoothness / params.b2 as f64 + d * params.sigma2 * params.sigma2;

    let truth: Vec<Vec<f64>> = path.iter().map(|w| loss::erm_grad(loss, w, data)).collect::<Result<_>>()?;
    let m = path.len();
    let mut sum = alloc::vec![0.0; m];
    let mut sum_sq = alloc::vec![0.0; m];
    for _ in 0..trials {
        let est = estimator_along_path(loss, data, params, path, sampling, rng)?;
        for t in 0..m {
            let e = linalg::dist(&est[t], &truth[t]);
            let e2 = e * e;
            sum[t] += e2;
            sum_sq[t] += e2 * e2;
        }
    }
    let tf = trials as f64;
    let mut points = Vec::with_capacity(m);
    let mut drift = 0.0;
    for t in 0..m {
        if t % params.q == 0 {
            drift = 0.0;
        } else {
            let s = linalg::dist(&path[t], &path[t - 1]);
            drift += s * s;
        }
        let mean = sum[t] / tf;
        let var = ((sum_sq[t] / tf - mean * mean) * tf / (tf - 1.0)).max(0.0);
        points.push(BoundPoint { t, lhs: mean, stderr: math::sqrt(var / tf), rhs: tau2_sq * drift + tau1_sq });
    }
    Ok(ErrorBoundCheck { tau1_sq, tau2_sq, trials, points })
}
