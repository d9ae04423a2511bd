//! Mini-batch index sampling and batch-mean gradient helpers.

use alloc::vec::Vec;

use rand::Rng;

use crate::dataset::Dataset;
use crate::loss::Loss;

/// How the indices of one mini-batch are drawn. Batches at different
/// steps are always independent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum BatchSampling {
    /// A uniform `b`-subset. A batch of size `n` is the whole dataset in order.
    #[default]
    WithoutReplacement,
    /// `b` i.i.d. uniform indices.
    WithReplacement,
}

/// Reusable sampler holding a permutation buffer for partial Fisher–Yates draws.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    mode: BatchSampling,
    perm: Vec<usize>,
    batch: Vec<usize>,
}

impl BatchSampler {
    pub fn new(n: usize, mode: BatchSampling) -> Self {
        BatchSampler { mode, perm: (0..n).collect(), batch: Vec::new() }
    }

    /// Draws a batch of size `b ≤ n` and returns its indices.
    pub fn draw<R: Rng + ?Sized>(&mut self, b: usize, rng: &mut R) -> &[usize] {
        let n = self.perm.len();
        debug_assert!(b <= n || self.mode == BatchSampling::WithReplacement);
        self.batch.clear();
        match self.mode {
            BatchSampling::WithoutReplacement if b == n => self.batch.extend(0..n),
            BatchSampling::WithoutReplacement => {
                for i in 0..b {
                    let j = rng.random_range(i..n);
                    self.perm.swap(i, j);
                }
                self.batch.extend_from_slice(&self.perm[..b]);
            }
            BatchSampling::WithReplacement => {
                for _ in 0..b {
                    self.batch.push(rng.random_range(0..n));
                }
            }
        }
        &self.batch
    }
}

/// `out = (1/|I|) Σ_{i∈I} ∇f(w; x_i)`.
pub fn batch_mean_grad<I>(loss: &dyn Loss, data: &Dataset, idx: I, len: usize, w: &[f64], out: &mut [f64])
where
    I: IntoIterator<Item = usize>,
{
    out.iter_mut().for_each(|v| *v = 0.0);
    let inv = 1.0 / len as f64;
    for i in idx {
        loss.add_grad(w, data.sample(i), inv, out);
    }
}

/// `out = (1/|I|) Σ_{i∈I} [∇f(w; x_i) − ∇f(w_prev; x_i)]`.
pub fn batch_mean_variation<I>(
    loss: &dyn Loss,
    data: &Dataset,
    idx: I,
    len: usize,
    w: &[f64],
    w_prev: &[f64],
    out: &mut [f64],
) where
    I: IntoIterator<Item = usize>,
{
    out.iter_mut().for_each(|v| *v = 0.0);
    let inv = 1.0 / len as f64;
    for i in idx {
        let s = data.sample(i);
        loss.add_grad(w, s, inv, out);
        loss.add_grad(w_prev, s, -inv, out);
    }
}
