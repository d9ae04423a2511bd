//! Immutable datasets, index cursors for single-pass consumption, and
//! finite-support distributions with exact population expectations.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::loss::Loss;

/// One sample: a feature vector and a scalar label (0 when the dataset is unlabeled).
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub y: f64,
}

impl<'a> Sample<'a> {
    pub fn new(x: &'a [f64], y: f64) -> Self {
        Sample { x, y }
    }

    pub fn unlabeled(x: &'a [f64]) -> Self {
        Sample { x, y: 0.0 }
    }
}

/// Ordered collection of `n` samples in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    labels: Option<Vec<f64>>,
}

impl Dataset {
    /// Builds a dataset from a flat row-major feature buffer.
    pub fn new(dim: usize, features: Vec<f64>, labels: Option<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        if !features.len().is_multiple_of(dim) {
            return Err(Error::invalid(
                "features",
                format!("length {} is not a multiple of dim {}", features.len(), dim),
            ));
        }
        let n = features.len() / dim;
        if let Some(y) = &labels {
            if y.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: y.len() });
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features", "non-finite value"));
        }
        Ok(Dataset { dim, features, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or_else(|| Error::Degenerate("no rows".into()))?;
        let mut features = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            features.extend_from_slice(r);
        }
        Dataset::new(dim, features, labels)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn has_labels(&self) -> bool {
        self.labels.is_some()
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels.as_ref().map_or(0.0, |y| y[i])
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn raw_features(&self) -> &[f64] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        Sample { x: self.features(i), y: self.label(i) }
    }

    pub fn iter(&self) -> impl Iterator<Item = Sample<'_>> + '_ {
        (0..self.len()).map(move |i| self.sample(i))
    }

    /// Copies the samples in `range` into a new dataset.
    pub fn slice(&self, range: Range<usize>) -> Result<Dataset> {
        if range.start > range.end || range.end > self.len() {
            return Err(Error::invalid(
                "range",
                format!("{}..{} out of bounds for {} samples", range.start, range.end, self.len()),
            ));
        }
        let features = self.features[range.start * self.dim..range.end * self.dim].to_vec();
        let labels = self.labels.as_ref().map(|y| y[range.clone()].to_vec());
        Ok(Dataset { dim: self.dim, features, labels })
    }

    /// Copy of the dataset with sample `i` replaced (a neighboring dataset).
    pub fn with_replaced(&self, i: usize, x: &[f64], y: f64) -> Result<Dataset> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let mut out = self.clone();
        out.features[i * self.dim..(i + 1) * self.dim].copy_from_slice(x);
        if let Some(labels) = &mut out.labels {
            labels[i] = y;
        }
        Ok(out)
    }

    /// Applies `f` to every feature vector, keeping labels.
    pub fn map_features<F>(&self, out_dim: usize, mut f: F) -> Result<Dataset>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let mut features = alloc::vec![0.0; self.len() * out_dim];
        for i in 0..self.len() {
            f(self.features(i), &mut features[i * out_dim..(i + 1) * out_dim]);
        }
        Dataset::new(out_dim, features, self.labels.clone())
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = linalg::zeros(self.dim);
        for i in 0..self.len() {
            linalg::axpy(&mut m, 1.0, self.features(i));
        }
        linalg::scale(&mut m, 1.0 / self.len() as f64);
        m
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.len()).map(|i| linalg::norm(self.features(i))).fold(0.0, f64::max)
    }
}

/// Front-to-back consumption of a dataset by index. Each index is handed
/// out at most once; the dataset itself is never mutated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cursor {
    next: usize,
    len: usize,
}

impl Cursor {
    pub fn new(len: usize) -> Self {
        Cursor { next: 0, len }
    }

    pub fn over(data: &Dataset) -> Self {
        Cursor::new(data.len())
    }

    /// Takes the next `k` unused indices.
    pub fn take(&mut self, k: usize) -> Result<Range<usize>> {
        if k > self.remaining() {
            return Err(Error::StreamExhausted { requested: k, remaining: self.remaining() });
        }
        let r = self.next..self.next + k;
        self.next += k;
        Ok(r)
    }

    pub fn consumed(&self) -> usize {
        self.next
    }

    pub fn remaining(&self) -> usize {
        self.len - self.next
    }
}

/// Distribution with finite support and explicit probabilities.
#[derive(Debug, Clone)]
pub struct FiniteDistribution {
    support: Dataset,
    weights: Vec<f64>,
    cdf: Vec<f64>,
}

impl FiniteDistribution {
    /// `weights` are normalized internally; they must be non-negative with positive sum.
    pub fn new(support: Dataset, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != support.len() {
            return Err(Error::DimensionMismatch { expected: support.len(), got: weights.len() });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights", "must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("weights", "sum must be positive"));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Ok(FiniteDistribution { support, weights, cdf })
    }

    pub fn uniform(support: Dataset) -> Result<Self> {
        let n = support.len();
        FiniteDistribution::new(support, alloc::vec![1.0; n])
    }

    pub fn support(&self) -> &Dataset {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }

    /// Draws `n` i.i.d. samples.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Dataset {
        let d = self.support.dim();
        let mut features = Vec::with_capacity(n * d);
        let mut labels = self.support.has_labels().then(|| Vec::with_capacity(n));
        for _ in 0..n {
            let i = self.sample_index(rng);
            features.extend_from_slice(self.support.features(i));
            if let Some(y) = &mut labels {
                y.push(self.support.label(i));
            }
        }
        Dataset { dim: d, features, labels }
    }

    /// Exact `∇F(w; D) = Σ_i p_i ∇f(w; x_i)`.
    pub fn population_grad(&self, loss: &dyn Loss, w: &[f64]) -> Vec<f64> {
        let mut g = linalg::zeros(w.len());
        for (i, p) in self.weights.iter().enumerate() {
            if *p > 0.0 {
                loss.add_grad(w, self.support.sample(i), *p, &mut g);
            }
        }
        g
    }

    pub fn population_value(&self, loss: &dyn Loss, w: &[f64]) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, p)| p * loss.value(w, self.support.sample(i)))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Dataset {
        Dataset::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 3.0]], Some(vec![1.0, 2.0, 3.0])).unwrap()
    }

    #[test]
    fn slicing_is_deterministic_and_disjoint() {
        let d = small();
        let a = d.slice(0..1).unwrap();
        let b = d.slice(1..3).unwrap();
        assert_eq!(a.len() + b.len(), d.len());
        assert_eq!(a.features(0), d.features(0));
        assert_eq!(b.features(1), d.features(2));
        assert_eq!(b.label(0), 2.0);
        assert_eq!(d.slice(1..3).unwrap(), b);
        assert!(d.slice(2..4).is_err());
    }

    #[test]
    fn cursor_yields_each_index_once() {
        let mut c = Cursor::new(10);
        let mut seen = [0u8; 10];
        for k in [3, 4, 3] {
            for i in c.take(k).unwrap() {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
        assert_eq!(c.remaining(), 0);
        assert_eq!(c.take(1), Err(Error::StreamExhausted { requested: 1, remaining: 0 }));
    }

    #[test]
    fn rejects_ragged_input() {
        assert!(Dataset::new(3, vec![1.0; 4], None).is_err());
        assert!(Dataset::new(2, vec![1.0; 4], Some(vec![1.0])).is_err());
        assert!(Dataset::from_rows(&[vec![1.0], vec![1.0, 2.0]], None).is_err());
    }

    #[test]
    fn finite_distribution_sampling_matches_weights() {
        let support = Dataset::from_rows(&[vec![1.0], vec![-1.0]], None).unwrap();
        let dist = FiniteDistribution::new(support, vec![3.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 40_000;
        let hits = (0..n).filter(|_| dist.sample_index(&mut rng) == 0).count();
        let freq = hits as f64 / n as f64;
        // binomial sd = sqrt(0.75 * 0.25 / n) ~ 0.0022
        assert!((freq - 0.75).abs() < 0.011, "{freq}");
    }
}
