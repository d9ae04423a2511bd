//! Seeded synthetic datasets and finite-support populations.

use dpstat_core::jl::orthonormalize;
use dpstat_core::{Dataset, FiniteDistribution};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SynthKind {
    /// Unit-norm features in a planted rank-`r` subspace, labels `⟨w*, x⟩ + noise`.
    GlmLowrank,
    /// Same with `r = d`.
    GlmFullrank,
    /// Unlabeled points uniform in the ball of radius `B/4`.
    HuberCluster,
}

/// Generator settings beyond the kind and shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    /// Huber radius `B = L0/L1`.
    pub huber_b: f64,
    /// `‖w*‖` of the planted labels.
    pub label_scale: f64,
    pub label_noise: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { huber_b: 1.0, label_scale: 1.0, label_noise: 0.1 }
    }
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    dpstat_core::math::standard_normal(rng)
}

fn unit(v: &mut [f64]) {
    let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if r > 0.0 {
        v.iter_mut().for_each(|a| *a /= r);
    }
}

/// Draws the planted structure (basis and `w*`) first, then the rows.
pub fn gen_synthetic(kind: SynthKind, n: usize, d: usize, rank: usize, rng: &mut ChaCha20Rng) -> Result<Dataset> {
    gen_with(kind, n, d, rank, &SynthOptions::default(), rng)
}

pub fn gen_with(
    kind: SynthKind,
    n: usize,
    d: usize,
    rank: usize,
    opts: &SynthOptions,
    rng: &mut ChaCha20Rng,
) -> Result<Dataset> {
    if d == 0 || n == 0 {
        return Err(HarnessError::Config("n and d must be at least 1".into()));
    }
    match kind {
        SynthKind::HuberCluster => {
            let radius = opts.huber_b / 4.0;
            let mut feats = Vec::with_capacity(n * d);
            for _ in 0..n {
                let mut v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
                unit(&mut v);
                let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
                feats.extend(v.iter().map(|a| a * r));
            }
            Ok(Dataset::new(d, feats, None)?)
        }
        SynthKind::GlmLowrank | SynthKind::GlmFullrank => {
            let r = if kind == SynthKind::GlmFullrank { d } else { rank };
            if r == 0 || r > d {
                return Err(HarnessError::Config(format!("rank must lie in [1, d = {d}], got {r}")));
            }
            let basis: Vec<Vec<f64>> = if r == d {
                (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
            } else {
                let raw: Vec<Vec<f64>> = (0..r).map(|_| (0..d).map(|_| normal(rng)).collect()).collect();
                orthonormalize(&raw, d)?
            };
            let mut a: Vec<f64> = (0..r).map(|_| normal(rng)).collect();
            unit(&mut a);
            a.iter_mut().for_each(|v| *v *= opts.label_scale);
            let mut feats = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let mut z: Vec<f64> = (0..r).map(|_| normal(rng)).collect();
                unit(&mut z);
                let mut x = vec![0.0; d];
                for (c, e) in z.iter().zip(&basis) {
                    x.iter_mut().zip(e).for_each(|(xi, ei)| *xi += c * ei);
                }
                let y = z.iter().zip(&a).map(|(p, q)| p * q).sum::<f64>() + opts.label_noise * normal(rng);
                feats.extend_from_slice(&x);
                labels.push(y);
            }
            Ok(Dataset::new(d, feats, Some(labels))?)
        }
    }
}

/// Uniform distribution over `support` generated points.
pub fn gen_population(
    kind: SynthKind,
    support: usize,
    d: usize,
    rank: usize,
    opts: &SynthOptions,
    rng: &mut ChaCha20Rng,
) -> Result<FiniteDistribution> {
    Ok(FiniteDistribution::uniform(gen_with(kind, support, d, rank, opts, rng)?)?)
}
