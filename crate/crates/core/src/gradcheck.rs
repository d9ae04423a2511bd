//! Finite-difference gradient checks and random-probe audits of declared
//! Lipschitz, smoothness and convexity claims.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::linalg;
use crate::loss::Loss;
use crate::math;

/// Default central-difference step.
pub const DEFAULT_H: f64 = 1e-5;

/// Denominator floor for relative errors near zero gradients.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub probe_count: usize,
}

/// Largest observed difference quotients over random probe pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsAudit {
    pub lipschitz_observed: f64,
    pub smoothness_observed: f64,
    pub pairs: usize,
}

impl ConstantsAudit {
    /// True when neither observation exceeds the declared value by more than `rel` relative.
    pub fn within(&self, lipschitz: f64, smoothness: f64, rel: f64) -> bool {
        self.lipschitz_observed <= lipschitz * (1.0 + rel) + f64::MIN_POSITIVE
            && self.smoothness_observed <= smoothness * (1.0 + rel) + f64::MIN_POSITIVE
    }
}

/// Random probe generator: `w` Gaussian with per-coordinate scale `w_scale`,
/// `x` uniform in the ball of radius `feature_radius`, `y` standard normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub dim: usize,
    pub w_scale: f64,
    pub feature_radius: f64,
}

impl Probe {
    pub fn new(dim: usize) -> Self {
        Probe { dim, w_scale: 1.0 / math::sqrt(dim.max(1) as f64), feature_radius: 1.0 }
    }

    pub fn feature_radius(mut self, r: f64) -> Self {
        self.feature_radius = r;
        self
    }

    pub fn w_scale(mut self, s: f64) -> Self {
        self.w_scale = s;
        self
    }

    fn point<R: Rng>(&self, scale: f64, rng: &mut R) -> Vec<f64> {
        (0..self.dim).map(|_| scale * math::standard_normal(rng)).collect::<Vec<f64>>()
    }

    fn feature<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut x = self.point(1.0, rng);
        let n = linalg::norm(&x);
        let u: f64 = rng.random();
        let r = self.feature_radius * math::powf(u, 1.0 / self.dim as f64);
        if n > 0.0 {
            linalg::scale(&mut x, r / n);
        }
        x
    }
}

fn resolve_dim(loss: &dyn Loss, dim: usize) -> Result<usize> {
    match loss.dim() {
        Some(d) if d != dim => Err(Error::DimensionMismatch { expected: d, got: dim }),
        _ if dim == 0 => Err(Error::invalid("dim", "must be at least 1")),
        _ => Ok(dim),
    }
}

/// Central-difference check of `grad` against `value` at `probes` random `(w, x)` pairs.
pub fn fd_check(loss: &dyn Loss, dim: usize, probes: usize, h: f64, seed: u64) -> Result<GradCheckReport> {
    fd_check_with(loss, Probe::new(dim), probes, h, seed)
}

pub fn fd_check_with(loss: &dyn Loss, probe: Probe, probes: usize, h: f64, seed: u64) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::invalid("h", "must be positive"));
    }
    let d = resolve_dim(loss, probe.dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let mut w = probe.point(probe.w_scale, &mut rng);
        let x = probe.feature(&mut rng);
        let y: f64 = math::standard_normal(&mut rng);
        let s = Sample::new(&x, y);
        let g = loss.grad(&w, s);
        let mut fd = linalg::zeros(d);
        for i in 0..d {
            let wi = w[i];
            w[i] = wi + h;
            let up = loss.value(&w, s);
            w[i] = wi - h;
            let down = loss.value(&w, s);
            w[i] = wi;
            fd[i] = (up - down) / (2.0 * h);
        }
        let den = linalg::norm(&g).max(linalg::norm(&fd)).max(REL_FLOOR);
        worst = worst.max(linalg::dist(&g, &fd) / den);
    }
    Ok(GradCheckReport { max_rel_err: worst, probe_count: probes })
}

/// Random-probe estimate of the Lipschitz and smoothness constants.
///
/// Half of the pairs are far apart and half are local perturbations, so
/// both global and infinitesimal quotients are explored.
pub fn audit_constants(loss: &dyn Loss, probe: Probe, pairs: usize, seed: u64) -> Result<ConstantsAudit> {
    resolve_dim(loss, probe.dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lip = 0.0f64;
    let mut smooth = 0.0f64;
    for k in 0..pairs {
        let spread = math::powf(10.0, rng.random_range(-2.0..1.0));
        let a = probe.point(probe.w_scale * spread, &mut rng);
        let step = if k % 2 == 0 { probe.w_scale * spread } else { 1e-4 * probe.w_scale };
        let b: Vec<f64> = a.iter().map(|v| v + step * math::standard_normal(&mut rng)).collect::<Vec<f64>>();
        let x = probe.feature(&mut rng);
        let y: f64 = math::standard_normal(&mut rng);
        let s = Sample::new(&x, y);
        let dw = linalg::dist(&a, &b);
        if dw == 0.0 {
            continue;
        }
        lip = lip.max(math::abs(loss.value(&a, s) - loss.value(&b, s)) / dw);
        smooth = smooth.max(linalg::dist(&loss.grad(&a, s), &loss.grad(&b, s)) / dw);
    }
    Ok(ConstantsAudit { lipschitz_observed: lip, smoothness_observed: smooth, pairs })
}

/// Counts random midpoint probes with `f((a+b)/2) > (f(a)+f(b))/2 + tol`.
pub fn midpoint_convexity_violations(
    loss: &dyn Loss,
    probe: Probe,
    probes: usize,
    tol: f64,
    seed: u64,
) -> Result<usize> {
    resolve_dim(loss, probe.dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..probes {
        let a = probe.point(probe.w_scale * 3.0, &mut rng);
        let b = probe.point(probe.w_scale * 3.0, &mut rng);
        let x = probe.feature(&mut rng);
        let y: f64 = math::standard_normal(&mut rng);
        let s = Sample::new(&x, y);
        let mid: Vec<f64> = a.iter().zip(&b).map(|(p, q)| 0.5 * (p + q)).collect();
        if loss.value(&mid, s) > 0.5 * (loss.value(&a, s) + loss.value(&b, s)) + tol {
            bad += 1;
        }
    }
    Ok(bad)
}
