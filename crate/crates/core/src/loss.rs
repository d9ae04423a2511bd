//! Per-sample losses with closed-form gradients and declared regularity
//! constants.
//!
//! Every loss reports a Lipschitz bound (`lipschitz`, written L0 in the
//! docs below), a smoothness bound (`smoothness`, L1) and optionally a bound
//! on the initial suboptimality gap `F(0) − inf F`. The optimizers calibrate
//! step sizes and noise from these declared values, so they must be true
//! upper bounds; [`crate::gradcheck`] audits them numerically.

use alloc::vec::Vec;

use crate::dataset::{Dataset, FiniteDistribution, Sample};
use crate::error::{Error, Result};
use crate::linalg;
use crate::math;

/// Declared regularity constants of a loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConstants {
    /// Lipschitz constant of `w ↦ f(w; x)` (L0).
    pub lipschitz: f64,
    /// Smoothness constant, i.e. Lipschitz constant of the gradient (L1).
    pub smoothness: f64,
    /// Upper bound on `F(0) − inf_w F(w)` when known.
    pub gap: Option<f64>,
}

/// A differentiable per-sample loss `f(w; x)`.
pub trait Loss: Send + Sync {
    fn value(&self, w: &[f64], s: Sample<'_>) -> f64;

    /// `out += scale * ∇f(w; s)`.
    fn add_grad(&self, w: &[f64], s: Sample<'_>, scale: f64, out: &mut [f64]);

    fn constants(&self) -> LossConstants;

    fn grad(&self, w: &[f64], s: Sample<'_>) -> Vec<f64> {
        let mut g = linalg::zeros(w.len());
        self.add_grad(w, s, 1.0, &mut g);
        g
    }

    /// Dimension the loss is bound to, if it is not dimension-generic.
    fn dim(&self) -> Option<usize> {
        None
    }

    /// Caller-asserted convexity in `w`.
    fn is_convex(&self) -> bool {
        false
    }

    /// Per-sample admissibility check, run when a dataset is bound to the loss.
    fn check_sample(&self, _index: usize, _s: Sample<'_>) -> Result<()> {
        Ok(())
    }

    /// Overwrites `out` with the exact empirical gradient `(1/n) Σ ∇f(w; x_i)`.
    fn erm_grad_into(&self, w: &[f64], data: &Dataset, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let inv = 1.0 / data.len() as f64;
        for s in data.iter() {
            self.add_grad(w, s, inv, out);
        }
    }
}

impl<L: Loss + ?Sized> Loss for &L {
    fn value(&self, w: &[f64], s: Sample<'_>) -> f64 {
        (**self).value(w, s)
    }
    fn add_grad(&self, w: &[f64], s: Sample<'_>, scale: f64, out: &mut [f64]) {
        (**self).add_grad(w, s, scale, out)
    }
    fn constants(&self) -> LossConstants {
        (**self).constants()
    }
    fn dim(&self) -> Option<usize> {
        (**self).dim()
    }
    fn is_convex(&self) -> bool {
        (**self).is_convex()
    }
    fn check_sample(&self, index: usize, s: Sample<'_>) -> Result<()> {
        (**self).check_sample(index, s)
    }
    fn erm_grad_into(&self, w: &[f64], data: &Dataset, out: &mut [f64]) {
        (**self).erm_grad_into(w, data, out)
    }
}

/// Checks that `data` is admissible for `loss` (dimension and per-sample constraints).
pub fn bind(loss: &dyn Loss, data: &Dataset) -> Result<()> {
    if let Some(d) = loss.dim() {
        if d != data.dim() {
            return Err(Error::DimensionMismatch { expected: d, got: data.dim() });
        }
    }
    for (i, s) in data.iter().enumerate() {
        loss.check_sample(i, s)?;
    }
    Ok(())
}

/// Exact empirical-risk gradient `(1/n) Σ_i ∇f(w; x_i)`.
pub fn erm_grad(loss: &dyn Loss, w: &[f64], data: &Dataset) -> Result<Vec<f64>> {
    if w.len() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), got: w.len() });
    }
    if let Some(d) = loss.dim() {
        if d != data.dim() {
            return Err(Error::DimensionMismatch { expected: d, got: data.dim() });
        }
    }
    if data.is_empty() {
        return Err(Error::Degenerate("empty dataset".into()));
    }
    let mut g = linalg::zeros(w.len());
    loss.erm_grad_into(w, data, &mut g);
    Ok(g)
}

pub fn erm_value(loss: &dyn Loss, w: &[f64], data: &Dataset) -> f64 {
    data.iter().map(|s| loss.value(w, s)).sum::<f64>() / data.len() as f64
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, "must be positive and finite"))
    }
}

/// Huber distance to the sample: quadratic `(L1/2)‖w−x‖²` within radius
/// `B = L0/L1`, linear `L0‖w−x‖ − L0²/(2 L1)` outside. Its empirical
/// minimizer is the dataset mean whenever all samples lie within `B/4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberMean {
    lipschitz: f64,
    smoothness: f64,
}

impl HuberMean {
    pub fn new(lipschitz: f64, smoothness: f64) -> Result<Self> {
        positive("lipschitz", lipschitz)?;
        positive("smoothness", smoothness)?;
        Ok(HuberMean { lipschitz, smoothness })
    }

    /// Seam radius `B = L0 / L1`.
    pub fn radius(&self) -> f64 {
        self.lipschitz / self.smoothness
    }
}

impl Loss for HuberMean {
    fn value(&self, w: &[f64], s: Sample<'_>) -> f64 {
        let r = linalg::dist(w, s.x);
        if r <= self.radius() {
            0.5 * self.smoothness * r * r
        } else {
            self.lipschitz * r - self.lipschitz * self.lipschitz / (2.0 * self.smoothness)
        }
    }

    fn add_grad(&self, w: &[f64], s: Sample<'_>, scale: f64, out: &mut [f64]) {
        let r = linalg::dist(w, s.x);
        let coef = if r <= self.radius() { self.smoothness } else { self.lipschitz / r };
        for ((o, wi), xi) in out.iter_mut().zip(w).zip(s.x) {
            *o += scale * coef * (wi - xi);
        }
    }

    fn constants(&self) -> LossConstants {
        LossConstants { lipschitz: self.lipschitz, smoothness: self.smoothness, gap: None }
    }

    fn is_convex(&self) -> bool {
        true
    }
}

/// One-dimensional instance `f(w; x) = (L0/2) w x + (L1/2) Δ(w)` with the
/// Huber regularizer `Δ`, paired with the two-point distribution
/// `x = +1` w.p. `(1 + v p)/2`, `x = −1` otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Huber1d {
    lipschitz: f64,
    smoothness: f64,
    bias: f64,
    sign: f64,
}

impl Huber1d {
    pub fn new(lipschitz: f64, smoothness: f64, bias: f64, sign: i8) -> Result<Self> {
        positive("lipschitz", lipschitz)?;
        positive("smoothness", smoothness)?;
        if !(0.0..=1.0).contains(&bias) {
            return Err(Error::invalid("p", "must lie in [0, 1]"));
        }
        let sign = match sign {
            1 => 1.0,
            -1 => -1.0,
            _ => return Err(Error::invalid("v", "must be +1 or -1")),
        };
        Ok(Huber1d { lipschitz, smoothness, bias, sign })
    }

    fn knee(&self) -> f64 {
        self.lipschitz / (2.0 * self.smoothness)
    }

    fn reg(&self, w: f64) -> f64 {
        let a = math::abs(w);
        if a <= self.knee() {
            a * a
        } else {
            self.lipschitz * a / self.smoothness
                - self.lipschitz * self.lipschitz / (4.0 * self.smoothness * self.smoothness)
        }
    }

    fn reg_derivative(&self, w: f64) -> f64 {
        if math::abs(w) <= self.knee() {
            2.0 * w
        } else {
            self.lipschitz / self.smoothness * w.signum()
        }
    }

    /// `E[x] = v p`.
    pub fn mean(&self) -> f64 {
        self.sign * self.bias
    }

    /// The two-point data distribution.
    pub fn sampler(&self) -> FiniteDistribution {
        let support = Dataset::new(1, alloc::vec![1.0, -1.0], None).expect("static support");
        let p_plus = 0.5 * (1.0 + self.mean());
        FiniteDistribution::new(support, alloc::vec![p_plus, 1.0 - p_plus]).expect("valid weights")
    }

    /// Closed-form population gradient `(L0/2) v p + (L1/2) Δ'(w)`.
    pub fn population_grad(&self, w: f64) -> f64 {
        0.5 * self.lipschitz * self.mean() + 0.5 * self.smoothness * self.reg_derivative(w)
    }
}

impl Loss for Huber1d {
    fn value(&self, w: &[f64], s: Sample<'_>) -> f64 {
        0.5 * self.lipschitz * w[0] * s.x[0] + 0.5 * self.smoothness * self.reg(w[0])
    }

    fn add_grad(&self, w: &[f64], s: Sample<'_>, scale: f64, out: &mut [f64]) {
        out[0] += scale * (0.5 * self.lipschitz * s.x[0] + 0.5 * self.smoothness * self.reg_derivative(w[0]));
    }

    fn constants(&self) -> LossConstants {
        LossConstants { lipschitz: self.lipschitz, smoothness: self.smoothness, gap: None }
    }

    fn dim(&self) -> Option<usize> {
        Some(1)
    }

    fn is_convex(&self) -> bool {
        true
    }
}

/// Scalar link `φ_y(z)` of a generalized linear model.
pub trait Link: Send + Sync {
    fn value(&self, z: f64, y: f64) -> f64;
    fn derivative(&self, z: f64, y: f64) -> f64;
    fn lipschitz(&self) -> f64;
    fn smoothness(&self) -> f64;
    fn is_convex(&self) -> bool;
    /// `sup φ − inf φ` when finite.
    fn range(&self) -> Option<f64> {
        None
    }
}

/// `φ_y(z) = log cosh(z − y)`, so `φ'_y(z) = tanh(z − y)`. 1-Lipschitz, 1-smooth, convex.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TanhLink;

impl Link for TanhLink {
    fn value(&self, z: f64, y: f64) -> f64 {
        math::ln_cosh(z - y)
    }
    fn derivative(&self, z: f64, y: f64) -> f64 {
        math::tanh(z - y)
    }
    fn lipschitz(&self) -> f64 {
        1.0
    }
    fn smoothness(&self) -> f64 {
        1.0
    }
    fn is_convex(&self) -> bool {
        true
    }
}

/// Truncated square: `u²/2` for `|u| ≤ c`, `c|u| − c²/2` beyond, with `u = z − y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberLink {
    threshold: f64,
}

impl HuberLink {
    pub fn new(threshold: f64) -> Result<Self> {
        positive("threshold", threshold)?;
        Ok(HuberLink { threshold })
    }
}

impl Link for HuberLink {
    fn value(&self, z: f64, y: f64) -> f64 {
        let u = z - y;
        let c = self.threshold;
        if math::abs(u) <= c {
            0.5 * u * u
        } else {
            c * math::abs(u) - 0.5 * c * c
        }
    }
    fn derivative(&self, z: f64, y: f64) -> f64 {
        (z - y).clamp(-self.threshold, self.threshold)
    }
    fn lipschitz(&self) -> f64 {
        self.threshold
    }
    fn smoothness(&self) -> f64 {
        1.0
    }
    fn is_convex(&self) -> bool {
        true
    }
}

/// Bounded nonconvex link `ψ(u) = u²/(1+u²)` with `u = z − y`.
///
/// `ψ'(u) = 2u/(1+u²)²` peaks at `u = 1/√3` with value `3√3/8`, and
/// `ψ''(u) = 2(1−3u²)/(1+u²)³` has largest magnitude 2 at `u = 0`.
/// Since `0 ≤ ψ < 1`, the empirical gap `F(0) − inf F` is below 1.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BoundedNonconvexLink;

impl BoundedNonconvexLink {
    pub const LIPSCHITZ: f64 = 0.649_519_052_838_329; // 3√3/8
    pub const SMOOTHNESS: f64 = 2.0;
}

impl Link for BoundedNonconvexLink {
    fn value(&self, z: f64, y: f64) -> f64 {
        let u = z - y;
        let u2 = u * u;
        u2 / (1.0 + u2)
    }
    fn derivative(&self, z: f64, y: f64) -> f64 {
        let u = z - y;
        let den = 1.0 + u * u;
        2.0 * u / (den * den)
    }
    fn lipschitz(&self) -> f64 {
        Self::LIPSCHITZ
    }
    fn smoothness(&self) -> f64 {
        Self::SMOOTHNESS
    }
    fn is_convex(&self) -> bool {
        false
    }
    fn range(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// GLM loss `f(w; (x, y)) = φ_y(⟨w, x⟩)` for features with `‖x‖ ≤ norm_bound`.
///
/// Declared constants are `L0 = L0_φ·‖X‖` and `L1 = L1_φ·‖X‖²` unless
/// overridden with [`Glm::with_declared`].
#[derive(Debug, Clone, PartialEq)]
pub struct Glm<L> {
    link: L,
    norm_bound: f64,
    dim: Option<usize>,
    declared: Option<LossConstants>,
}

impl<L: Link> Glm<L> {
    pub fn new(link: L, norm_bound: f64) -> Result<Self> {
        positive("norm_bound", norm_bound)?;
        Ok(Glm { link, norm_bound, dim: None, declared: None })
    }

    /// Binds the loss to dimension `d`.
    pub fn with_dim(mut self, d: usize) -> Self {
        self.dim = Some(d);
        self
    }

    /// Replaces the declared constants.
    pub fn with_declared(mut self, constants: LossConstants) -> Self {
        self.declared = Some(constants);
        self
    }

    pub fn link(&self) -> &L {
        &self.link
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }
}

impl<L: Link> Loss for Glm<L> {
    fn value(&self, w: &[f64], s: Sample<'_>) -> f64 {
        self.link.value(linalg::dot(w, s.x), s.y)
    }

    fn add_grad(&self, w: &[f64], s: Sample<'_>, scale: f64, out: &mut [f64]) {
        let d = self.link.derivative(linalg::dot(w, s.x), s.y);
        linalg::axpy(out, scale * d, s.x);
    }

    fn constants(&self) -> LossConstants {
        self.declared.unwrap_or(LossConstants {
            lipschitz: self.link.lipschitz() * self.norm_bound,
            smoothness: self.link.smoothness() * self.norm_bound * self.norm_bound,
            gap: self.link.range(),
        })
    }

    fn dim(&self) -> Option<usize> {
        self.dim
    }

    fn is_convex(&self) -> bool {
        self.link.is_convex()
    }

    fn check_sample(&self, index: usize, s: Sample<'_>) -> Result<()> {
        let norm = linalg::norm(s.x);
        // relative slack for rows normalized to exactly the bound
        if norm > self.norm_bound * (1.0 + 1e-12) {
            return Err(Error::NormBound { index, norm, bound: self.norm_bound });
        }
        Ok(())
    }
}

/// The benchmark nonconvex loss: [`BoundedNonconvexLink`] on unit-norm features in `R^d`.
/// Declared `L0 = 3√3/8`, `L1 = 2`, gap bound 1.
pub fn synthetic_nonconvex_loss(d: usize) -> Result<Glm<BoundedNonconvexLink>> {
    if d == 0 {
        return Err(Error::invalid("d", "must be at least 1"));
    }
    Ok(Glm::new(BoundedNonconvexLink, 1.0)?.with_dim(d))
}

/// `f(w; x) = ⟨g, w⟩`: constant gradient, zero curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLoss {
    g: Vec<f64>,
}

impl LinearLoss {
    pub fn new(g: Vec<f64>) -> Self {
        LinearLoss { g }
    }
}

impl Loss for LinearLoss {
    fn value(&self, w: &[f64], _s: Sample<'_>) -> f64 {
        linalg::dot(&self.g, w)
    }

    fn add_grad(&self, _w: &[f64], _s: Sample<'_>, scale: f64, out: &mut [f64]) {
        linalg::axpy(out, scale, &self.g);
    }

    fn constants(&self) -> LossConstants {
        LossConstants { lipschitz: linalg::norm(&self.g), smoothness: 0.0, gap: None }
    }

    fn dim(&self) -> Option<usize> {
        Some(self.g.len())
    }

    fn is_convex(&self) -> bool {
        true
    }
}
