//! Recursive regularization for convex population stationarity.
//!
//! Each outer round solves the current regularized objective privately on
//! a fresh slice of the data, then adds a quadratic pull `λ_t/2‖w − w̄_t‖²`
//! toward the new center with a doubled weight. Two private sub-routines
//! are provided: full-batch [`noisy_gd`] and single-pass [`phased_sgd`].

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::linalg;
use crate::loss::{self, Loss, LossConstants};
use crate::math;
use crate::privacy::{NoiseLedger, PrivacyBudget};

pub const SITE_NOISY_GD: &str = "rr.noisy_gd";
pub const SITE_OUTPUT: &str = "rr.output_perturbation";

/// Upper limit on the inner step count `K_t`.
pub const K_CAP: usize = 10_000_000;

/// `f(w; x) + Σ_i λ_i/2 ‖w − w̄_i‖²`.
#[derive(Debug, Clone)]
pub struct RegularizedLoss<B> {
    base: B,
    centers: Vec<Vec<f64>>,
    lambdas: Vec<f64>,
}

/// Wraps `base` with quadratic terms centered at `centers`.
pub fn regularize<B: Loss>(base: B, centers: Vec<Vec<f64>>, lambdas: Vec<f64>) -> Result<RegularizedLoss<B>> {
    if centers.len() != lambdas.len() {
        return Err(Error::DimensionMismatch { expected: centers.len(), got: lambdas.len() });
    }
    if let Some(first) = centers.first() {
        if centers.iter().any(|c| c.len() != first.len()) {
            return Err(Error::invalid("centers", "must share one dimension"));
        }
    }
    if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::invalid("lambdas", "must be non-negative and finite"));
    }
    Ok(RegularizedLoss { base, centers, lambdas })
}

impl<B: Loss> RegularizedLoss<B> {
    pub fn new(base: B) -> Self {
        RegularizedLoss { base, centers: Vec::new(), lambdas: Vec::new() }
    }

    pub fn push(&mut self, center: Vec<f64>, lambda: f64) {
        self.centers.push(center);
        self.lambdas.push(lambda);
    }

    pub fn base(&self) -> &B {
        &self.base
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    /// `λ̄ = Σ λ_i`, the strong-convexity modulus added to the base.
    pub fn total_lambda(&self) -> f64 {
        self.lambdas.iter().sum()
    }

    /// Lipschitz constant over the ball of radius `r`.
    pub fn lipschitz_on_ball(&self, r: f64) -> f64 {
        self.base.constants().lipschitz
            + self.centers.iter().zip(&self.lambdas).map(|(c, l)| l * (r + linalg::norm(c))).sum::<f64>()
    }

    fn add_reg_grad(&self, w: &[f64], scale: f64, out: &mut [f64]) {
        for (c, l) in self.centers.iter().zip(&self.lambdas) {
            for ((o, wi), ci) in out.iter_mut().zip(w).zip(c) {
                *o += scale * l * (wi - ci);
            }
        }
    }
}

impl<B: Loss> Loss for RegularizedLoss<B> {
    fn value(&self, w: &[f64], s: Sample<'_>) -> f64 {
        let reg: f64 = self.centers.iter().zip(&self.lambdas).map(|(c, l)| 0.5 * l * linalg::dist(w, c).powi(2)).sum();
        self.base.value(w, s) + reg
    }

    fn add_grad(&self, w: &[f64], s: Sample<'_>, scale: f64, out: &mut [f64]) {
        self.base.add_grad(w, s, scale, out);
        self.add_reg_grad(w, scale, out);
    }

    /// The regularized loss is not globally Lipschitz; see [`RegularizedLoss::lipschitz_on_ball`].
    fn constants(&self) -> LossConstants {
        let c = self.base.constants();
        LossConstants { lipschitz: f64::INFINITY, smoothness: c.smoothness + self.total_lambda(), gap: None }
    }

    fn dim(&self) -> Option<usize> {
        self.base.dim().or_else(|| self.centers.first().map(Vec::len))
    }

    fn is_convex(&self) -> bool {
        self.base.is_convex()
    }

    fn check_sample(&self, index: usize, s: Sample<'_>) -> Result<()> {
        self.base.check_sample(index, s)
    }

    fn erm_grad_into(&self, w: &[f64], data: &Dataset, out: &mut [f64]) {
        self.base.erm_grad_into(w, data, out);
        self.add_reg_grad(w, 1.0, out);
    }
}

/// Euclidean projection onto the ball of radius `r`.
pub fn project_ball(w: &[f64], r: f64) -> Vec<f64> {
    let mut out = w.to_vec();
    project_ball_in_place(&mut out, r);
    out
}

pub fn project_ball_in_place(w: &mut [f64], r: f64) {
    let n = linalg::norm(w);
    if n > r {
        linalg::scale(w, if n > 0.0 { r / n } else { 0.0 });
    }
}

/// How a sub-routine condenses its iterates into one output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector {
    Last,
    Uniform,
    /// Weights `(1 − ηλ)^{−k}` with the sub-routine's step size `η`.
    Geometric {
        lambda: f64,
    },
}

/// Streaming weighted average: with `ρ = 1 − ηλ`, `u_k = 1 + ρ u_{k−1}` and
/// `avg_k = avg_{k−1}(1 − 1/u_k) + w_k/u_k` equals the normalized
/// geometric average without forming any large weight.
#[derive(Debug, Clone)]
pub struct SelectorAccumulator {
    rho: Option<f64>,
    u: f64,
    avg: Vec<f64>,
    count: usize,
}

impl SelectorAccumulator {
    pub fn new(selector: Selector, eta: f64, dim: usize) -> Result<Self> {
        let rho = match selector {
            Selector::Last => None,
            Selector::Uniform => Some(1.0),
            Selector::Geometric { lambda } => {
                let r = eta * lambda;
                if !(0.0..1.0).contains(&r) {
                    return Err(Error::invalid("eta * lambda", format!("must lie in [0, 1), got {r}")));
                }
                Some(1.0 - r)
            }
        };
        Ok(SelectorAccumulator { rho, u: 0.0, avg: linalg::zeros(dim), count: 0 })
    }

    pub fn push(&mut self, w: &[f64]) {
        self.count += 1;
        match self.rho {
            None => self.avg.copy_from_slice(w),
            Some(rho) => {
                self.u = 1.0 + rho * self.u;
                let a = 1.0 / self.u;
                for (m, x) in self.avg.iter_mut().zip(w) {
                    *m += a * (x - *m);
                }
            }
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(self) -> Vec<f64> {
        self.avg
    }
}

/// `Σ_k (1−ηλ)^{−k} w_k / Σ_k (1−ηλ)^{−k}` over `k = 1 … K`, with weights
/// normalized by the largest before summing.
pub fn selector_weighted_avg(iterates: &[Vec<f64>], eta: f64, lambda: f64) -> Result<Vec<f64>> {
    let r = eta * lambda;
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::invalid("eta * lambda", format!("must lie in (0, 1), got {r}")));
    }
    let Some(first) = iterates.first() else {
        return Err(Error::Degenerate("no iterates".into()));
    };
    let k = iterates.len();
    let rho = 1.0 - r;
    let weights: Vec<f64> = (1..=k).map(|j| math::powi(rho, (k - j) as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut out = linalg::zeros(first.len());
    for (w, x) in weights.iter().zip(iterates) {
        linalg::axpy(&mut out, w / total, x);
    }
    Ok(out)
}

/// Output of one sub-routine call.
#[derive(Debug, Clone, PartialEq)]
pub struct SubOutput {
    pub w: Vec<f64>,
    /// Largest norm among the iterates (before output noise).
    pub max_iterate_norm: f64,
    /// Per-sample gradient evaluations.
    pub gradient_evaluations: usize,
}

/// Noisy projected full-batch gradient descent from `w_1 = 0` producing
/// `w_1 … w_T`, returned through `selector`.
#[allow(clippy::too_many_arguments)]
pub fn noisy_gd<R: Rng + ?Sized>(
    data: &Dataset,
    loss: &dyn Loss,
    radius: f64,
    steps: usize,
    eta: f64,
    selector: Selector,
    sigma: f64,
    ledger: &mut NoiseLedger,
    rng: &mut R,
) -> Result<SubOutput> {
    if steps == 0 {
        return Err(Error::invalid("T", "must be at least 1"));
    }
    if data.is_empty() {
        return Err(Error::Degenerate("empty dataset".into()));
    }
    let d = data.dim();
    let mut acc = SelectorAccumulator::new(selector, eta, d)?;
    let mut w = linalg::zeros(d);
    let mut g = linalg::zeros(d);
    let mut max_norm = 0.0f64;
    acc.push(&w);
    for _ in 1..steps {
        loss.erm_grad_into(&w, data, &mut g);
        ledger.add_gaussian(SITE_NOISY_GD, sigma, &mut g, rng);
        linalg::axpy(&mut w, -eta, &g);
        project_ball_in_place(&mut w, radius);
        max_norm = max_norm.max(linalg::norm(&w));
        acc.push(&w);
    }
    Ok(SubOutput { w: acc.finish(), max_iterate_norm: max_norm, gradient_evaluations: (steps - 1) * data.len() })
}

/// One in-order pass of projected SGD over `data[range]` from `w1`, then
/// Gaussian output perturbation of the selected point.
#[allow(clippy::too_many_arguments)]
pub fn output_perturbed_sgd<R: Rng + ?Sized>(
    w1: &[f64],
    data: &Dataset,
    range: Range<usize>,
    loss: &dyn Loss,
    radius: f64,
    eta: f64,
    sigma: f64,
    selector: Selector,
    ledger: &mut NoiseLedger,
    rng: &mut R,
) -> Result<SubOutput> {
    if range.is_empty() || range.end > data.len() {
        return Err(Error::invalid("range", "must be a non-empty range inside the dataset"));
    }
    if w1.len() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), got: w1.len() });
    }
    let mut acc = SelectorAccumulator::new(selector, eta, w1.len())?;
    let mut w = w1.to_vec();
    let mut g = linalg::zeros(w.len());
    let mut max_norm = linalg::norm(&w);
    acc.push(&w);
    let last = range.end - 1;
    for i in range.start..last {
        g.iter_mut().for_each(|v| *v = 0.0);
        loss.add_grad(&w, data.sample(i), 1.0, &mut g);
        linalg::axpy(&mut w, -eta, &g);
        project_ball_in_place(&mut w, radius);
        max_norm = max_norm.max(linalg::norm(&w));
        acc.push(&w);
    }
    let mut out = acc.finish();
    ledger.add_gaussian(SITE_OUTPUT, sigma, &mut out, rng);
    Ok(SubOutput { w: out, max_iterate_norm: max_norm, gradient_evaluations: last - range.start })
}

/// Phase slices and step-size factors for a dataset of `len` samples:
/// `K = ⌈log₂ len⌉` phases of sizes `⌊len/2⌋, ⌊len/4⌋, …` taken front to back.
pub fn phase_plan(len: usize) -> Vec<(Range<usize>, f64)> {
    let phases = math::ceil(math::log2(len as f64)) as u32;
    let mut plan = Vec::new();
    let mut offset = 0;
    for k in 1..=phases {
        let size = len >> k;
        if size == 0 || offset + size > len {
            break;
        }
        plan.push((offset..offset + size, math::powi(0.25, k as i32)));
        offset += size;
    }
    plan
}

/// Phased SGD from `w = 0`: phase `k` runs [`output_perturbed_sgd`] with
/// step `4^{−k}η` and noise `4^{−k}η·σ` on its slice, warm-started at the
/// previous phase's output projected back onto the ball.
#[allow(clippy::too_many_arguments)]
pub fn phased_sgd<R: Rng + ?Sized>(
    data: &Dataset,
    loss: &dyn Loss,
    radius: f64,
    eta: f64,
    sigma: f64,
    selector: Selector,
    ledger: &mut NoiseLedger,
    rng: &mut R,
) -> Result<SubOutput> {
    if data.len() < 2 {
        return Err(Error::invalid("S", "needs at least 2 samples"));
    }
    let mut w = linalg::zeros(data.dim());
    let mut max_norm = 0.0f64;
    let mut evals = 0;
    for (range, factor) in phase_plan(data.len()) {
        let eta_k = factor * eta;
        project_ball_in_place(&mut w, radius);
        let out = output_perturbed_sgd(&w, data, range, loss, radius, eta_k, eta_k * sigma, selector, ledger, rng)?;
        max_norm = max_norm.max(out.max_iterate_norm);
        evals += out.gradient_evaluations;
        w = out.w;
    }
    Ok(SubOutput { w, max_iterate_norm: max_norm, gradient_evaluations: evals })
}

/// Parameter regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrMode {
    /// Noisy GD inner solver with many full-batch steps.
    Optimal,
    /// Single-pass phased SGD inner solver.
    LinearTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subroutine {
    NoisyGd,
    PhasedSgd,
}

impl RrMode {
    pub fn subroutine(self) -> Subroutine {
        match self {
            RrMode::Optimal => Subroutine::NoisyGd,
            RrMode::LinearTime => Subroutine::PhasedSgd,
        }
    }
}

/// Schedules indexed by `t = 0 … T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RrParams {
    pub mode: RrMode,
    pub t: usize,
    pub lambda: f64,
    pub lambdas: Vec<f64>,
    pub radii: Vec<f64>,
    pub k: Vec<usize>,
    pub eta: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Whether `K_t` hit [`K_CAP`].
    pub k_capped: Vec<bool>,
    pub r_bar: f64,
    /// Samples per round, `⌊n/T⌋`.
    pub slice: usize,
    /// `L0` and `ln(1/δ)/ε²` kept so `K_t` overrides can recompute `η_t`, `σ_t`.
    lipschitz: f64,
    log_delta_over_eps_sq: f64,
}

impl RrParams {
    /// Sets `K_t` and recomputes `η_t = ln K_t/(λ_t K_t)` and `σ_t`.
    pub fn with_k(mut self, t: usize, k: usize) -> Self {
        let k = k.max(1);
        self.k[t] = k;
        self.k_capped[t] = false;
        self.eta[t] = step_size(k, self.lambdas[t]);
        self.sigma[t] = noise_scale(self.lipschitz, k, self.slice, self.log_delta_over_eps_sq);
        self
    }

    /// Zeroes every noise scale.
    pub fn noiseless(mut self) -> Self {
        self.sigma.iter_mut().for_each(|s| *s = 0.0);
        self
    }
}

fn step_size(k: usize, lambda_t: f64) -> f64 {
    math::ln(k as f64) / (lambda_t * k as f64)
}

/// `σ_t = √(64 L0² K² ln(1/δ)/(m² ε²))` with `m` the slice size.
fn noise_scale(l0: f64, k: usize, m: usize, log_delta_over_eps_sq: f64) -> f64 {
    math::sqrt(64.0 * l0 * l0 * (k as f64) * (k as f64) * log_delta_over_eps_sq) / m as f64
}

pub fn derive_rr_params(
    mode: RrMode,
    n: usize,
    d: usize,
    l0: f64,
    l1: f64,
    r_bar: f64,
    budget: &PrivacyBudget,
) -> Result<RrParams> {
    for (name, v) in [("L0", l0), ("L1", l1), ("R_bar", r_bar)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(name, "must be positive and finite"));
        }
    }
    if n < 2 || d == 0 {
        return Err(Error::invalid("n, d", "need n >= 2 and d >= 1"));
    }
    let (nf, df, eps) = (n as f64, d as f64, budget.eps());
    let log_d = budget.log_inv_delta();
    let rate = (1.0 / nf).min(df / (nf * nf * eps * eps));
    let lambda = match mode {
        RrMode::Optimal => l0 * l0 / (l1 * r_bar) * rate,
        RrMode::LinearTime => (l0 * l0 / (l1 * r_bar * r_bar) * rate).max(l1 * math::ln(nf) / nf),
    };
    if lambda >= l1 {
        return Err(Error::Precondition(format!("lambda = {lambda} >= L1 = {l1}, leaving no regularization rounds")));
    }
    let t = (math::floor(math::log2(l1 / lambda)) as usize).max(1);
    let slice = n / t;
    if slice == 0 {
        return Err(Error::Precondition(format!("n = {n} is smaller than T = {t}")));
    }
    let ldes = log_d / (eps * eps);
    let mut p = RrParams {
        mode,
        t,
        lambda,
        lambdas: Vec::with_capacity(t + 1),
        radii: Vec::with_capacity(t + 1),
        k: Vec::with_capacity(t + 1),
        eta: Vec::with_capacity(t + 1),
        sigma: Vec::with_capacity(t + 1),
        k_capped: Vec::with_capacity(t + 1),
        r_bar,
        slice,
        lipschitz: l0,
        log_delta_over_eps_sq: ldes,
    };
    for i in 0..=t {
        let lt = math::powi(2.0, i as i32) * lambda;
        let (k, capped) = match mode {
            RrMode::Optimal => {
                let kappa = (l1 + lt) / lt;
                let a = kappa * math::ln(kappa);
                let b = nf * nf * eps * eps * (l0 * l0 * lambda + math::powf(l1, 1.5))
                    / ((t * t) as f64 * lambda * df * l0 * l0 * log_d);
                let raw = math::ceil(a.max(b));
                if raw > K_CAP as f64 {
                    (K_CAP, true)
                } else {
                    ((raw as usize).max(1), false)
                }
            }
            RrMode::LinearTime => (slice, false),
        };
        p.lambdas.push(lt);
        p.radii.push(math::powi(core::f64::consts::SQRT_2, i as i32) * r_bar);
        p.k.push(k);
        p.eta.push(step_size(k, lt));
        p.sigma.push(noise_scale(l0, k, slice, ldes));
        p.k_capped.push(capped);
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    pub lambda: f64,
    pub radius: f64,
    pub k: usize,
    pub eta: f64,
    pub sigma: f64,
    pub slice: Range<usize>,
    pub center: Vec<f64>,
    pub center_norm: f64,
    pub max_iterate_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RrReport {
    pub w_out: Vec<f64>,
    /// `T = 1`: no round ran and the output is the origin.
    pub empty: bool,
    pub rounds: Vec<RoundRecord>,
    pub gradient_evaluations: usize,
    pub noise_ledger: NoiseLedger,
}

/// Runs `T − 1` outer rounds; round `t` solves `f^{(t−1)}` on its own slice
/// of `⌊n/T⌋` samples over the ball of radius `R_t`. Returns the last center.
pub fn run_recursive_regularization<R: Rng + ?Sized>(
    data: &Dataset,
    loss: &dyn Loss,
    params: &RrParams,
    subroutine: Subroutine,
    rng: &mut R,
) -> Result<RrReport> {
    loss::bind(loss, data)?;
    let d = data.dim();
    if params.slice * params.t > data.len() {
        return Err(Error::StreamExhausted { requested: params.slice * params.t, remaining: data.len() });
    }
    let mut reg = RegularizedLoss::new(loss);
    reg.push(linalg::zeros(d), params.lambdas[0]);
    let mut ledger = NoiseLedger::new();
    let mut rounds = Vec::with_capacity(params.t.saturating_sub(1));
    let mut evals = 0;
    let mut w_out = linalg::zeros(d);
    let mut offset = 0;
    for t in 1..params.t {
        let range = offset..offset + params.slice;
        offset = range.end;
        let selector = Selector::Geometric { lambda: params.lambdas[t] };
        let out = match subroutine {
            Subroutine::NoisyGd => {
                let slice = data.slice(range.clone())?;
                noisy_gd(
                    &slice,
                    &reg,
                    params.radii[t],
                    params.k[t],
                    params.eta[t],
                    selector,
                    params.sigma[t],
                    &mut ledger,
                    rng,
                )?
            }
            Subroutine::PhasedSgd => {
                let slice = data.slice(range.clone())?;
                phased_sgd(&slice, &reg, params.radii[t], params.eta[t], params.sigma[t], selector, &mut ledger, rng)?
            }
        };
        evals += out.gradient_evaluations;
        rounds.push(RoundRecord {
            t,
            lambda: params.lambdas[t],
            radius: params.radii[t],
            k: params.k[t],
            eta: params.eta[t],
            sigma: params.sigma[t],
            slice: range,
            center: out.w.clone(),
            center_norm: linalg::norm(&out.w),
            max_iterate_norm: out.max_iterate_norm,
        });
        reg.push(out.w.clone(), params.lambdas[t]);
        w_out = out.w;
    }
    Ok(RrReport { w_out, empty: params.t == 1, rounds, gradient_evaluations: evals, noise_ledger: ledger })
}
