//! Random-projection wrapper for GLM losses.
//!
//! Features are mapped through a scaled Gaussian matrix `Φ ∈ R^{k×d}`, a base
//! optimizer runs in `R^k` with rebound constants and half the `δ`, and its
//! output is lifted back by `Φᵀ`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::loss::{Glm, Link, LossConstants};
use crate::math;
use crate::privacy::PrivacyBudget;

/// Dense `k × d` projection, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JlMatrix {
    k: usize,
    d: usize,
    entries: Vec<f64>,
    seed: Option<u64>,
}

impl JlMatrix {
    /// Entries i.i.d. `N(0, 1/k)`.
    pub fn sample<R: Rng + ?Sized>(k: usize, d: usize, rng: &mut R) -> Result<Self> {
        check_shape(k, d)?;
        let s = 1.0 / math::sqrt(k as f64);
        let entries = (0..k * d).map(|_| s * math::standard_normal(rng)).collect();
        Ok(JlMatrix { k, d, entries, seed: None })
    }

    pub fn from_seed(k: usize, d: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = JlMatrix::sample(k, d, &mut rng)?;
        m.seed = Some(seed);
        Ok(m)
    }

    /// `Φ = I_d`, the test-mode embedding.
    pub fn identity(d: usize) -> Result<Self> {
        check_shape(d, d)?;
        let mut entries = alloc::vec![0.0; d * d];
        for i in 0..d {
            entries[i * d + i] = 1.0;
        }
        Ok(JlMatrix { k: d, d, entries, seed: None })
    }

    pub fn from_entries(k: usize, d: usize, entries: Vec<f64>) -> Result<Self> {
        check_shape(k, d)?;
        if entries.len() != k * d {
            return Err(Error::DimensionMismatch { expected: k * d, got: entries.len() });
        }
        Ok(JlMatrix { k, d, entries, seed: None })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.d..(i + 1) * self.d]
    }

    /// `Φx`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = linalg::zeros(self.k);
        self.apply_into(x, &mut out);
        out
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = linalg::dot(self.row(i), x);
        }
    }

    /// `Φᵀw`.
    pub fn transpose_apply(&self, w: &[f64]) -> Vec<f64> {
        let mut out = linalg::zeros(self.d);
        for (i, wi) in w.iter().enumerate() {
            linalg::axpy(&mut out, *wi, self.row(i));
        }
        out
    }

    /// `{(Φx_i, y_i)}`.
    pub fn project(&self, data: &Dataset) -> Result<Dataset> {
        if data.dim() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: data.dim() });
        }
        data.map_features(self.k, |x, out| self.apply_into(x, out))
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.k, self.d, &self.entries)
    }
}

fn check_shape(k: usize, d: usize) -> Result<()> {
    if k == 0 || d == 0 {
        return Err(Error::invalid("k, d", "must both be at least 1"));
    }
    Ok(())
}

/// Base optimizer whose rate function drives the choice of `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseKind {
    SpiderBoost,
    RecursiveReg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JlParams {
    pub k: usize,
    pub rank: usize,
    pub norm_x: f64,
    pub base_kind: BaseKind,
    /// Outputs `w̃` with a larger norm are scaled back onto this radius.
    pub output_bound: f64,
}

impl JlParams {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.k == 0 || self.k > d {
            return Err(Error::invalid("k", format!("must lie in [1, {d}], got {}", self.k)));
        }
        if !(self.norm_x > 0.0) {
            return Err(Error::invalid("normX", "must be positive"));
        }
        if !(self.output_bound > 0.0) {
            return Err(Error::invalid("output_bound", "must be positive"));
        }
        Ok(())
    }
}

/// Empirical-stationarity rate `g(j)` of the base method in dimension `j`,
/// evaluated with the rebound Lipschitz constant `2L0‖X‖` and budget `(ε, δ/2)`.
pub fn base_rate(kind: BaseKind, j: usize, n: usize, l0: f64, norm_x: f64, budget: &PrivacyBudget) -> f64 {
    let lip = 2.0 * l0 * norm_x;
    let log_d = math::ln(2.0 / budget.delta());
    let x = math::sqrt(j as f64) * log_d / (n as f64 * budget.eps());
    match kind {
        BaseKind::SpiderBoost => lip * math::powf(x, 2.0 / 3.0),
        BaseKind::RecursiveReg => lip * x,
    }
}

/// `g(j) + L0‖X‖ ln n/√j`.
pub fn jl_objective(kind: BaseKind, j: usize, n: usize, l0: f64, norm_x: f64, budget: &PrivacyBudget) -> f64 {
    base_rate(kind, j, n, l0, norm_x, budget) + l0 * norm_x * math::ln(n as f64) / math::sqrt(j as f64)
}

/// `k = ⌈min{argmin_j objective(j), rank·ln(2n/δ)}⌉`, scanning `j ∈ [1, d]`
/// exhaustively and capping the result at `d`.
#[allow(clippy::too_many_arguments)]
pub fn choose_k(
    kind: BaseKind,
    n: usize,
    rank: usize,
    d: usize,
    l0: f64,
    _l1: f64,
    norm_x: f64,
    budget: &PrivacyBudget,
) -> Result<usize> {
    if rank == 0 {
        return Err(Error::invalid("rank", "must be at least 1"));
    }
    if d == 0 || n < 2 {
        return Err(Error::invalid("n, d", "need n >= 2 and d >= 1"));
    }
    let mut best = (1usize, f64::INFINITY);
    for j in 1..=d {
        let v = jl_objective(kind, j, n, l0, norm_x, budget);
        if v < best.1 {
            best = (j, v);
        }
    }
    let rank_cap = rank as f64 * math::ln(2.0 * n as f64 / budget.delta());
    let k = math::ceil((best.0 as f64).min(rank_cap)) as usize;
    Ok(k.clamp(1, d))
}

/// What the base optimizer receives.
#[derive(Debug, Clone)]
pub struct JlProblem {
    pub data: Dataset,
    /// `2L0‖X‖`.
    pub lipschitz: f64,
    /// `2L1‖X‖²`.
    pub smoothness: f64,
    /// `(ε, δ/2)`.
    pub budget: PrivacyBudget,
    /// Largest projected feature norm.
    pub max_norm: f64,
}

impl JlProblem {
    /// GLM over the projected features with the rebound constants declared.
    pub fn glm<L: Link>(&self, link: L) -> Result<Glm<L>> {
        let bound = self.max_norm.max(f64::MIN_POSITIVE);
        Ok(Glm::new(link, bound)?.with_dim(self.data.dim()).with_declared(LossConstants {
            lipschitz: self.lipschitz,
            smoothness: self.smoothness,
            gap: None,
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JlReport<T> {
    /// `Φᵀw̃`.
    pub w_out: Vec<f64>,
    pub w_tilde: Vec<f64>,
    pub k: usize,
    pub clamped: bool,
    pub max_projected_norm: f64,
    pub base: T,
}

/// Projects `data`, hands the result to `base`, clamps and lifts its output.
/// `base` returns its point in `R^k` together with any report it wants kept.
#[allow(clippy::too_many_arguments)]
pub fn run_jl<F, T>(
    base: F,
    data: &Dataset,
    phi: &JlMatrix,
    l0: f64,
    l1: f64,
    params: &JlParams,
    budget: &PrivacyBudget,
) -> Result<JlReport<T>>
where
    F: FnOnce(&JlProblem) -> Result<(Vec<f64>, T)>,
{
    params.validate(data.dim())?;
    if phi.k() != params.k {
        return Err(Error::DimensionMismatch { expected: params.k, got: phi.k() });
    }
    let projected = phi.project(data)?;
    let max_norm = projected.max_norm();
    let problem = JlProblem {
        data: projected,
        lipschitz: 2.0 * l0 * params.norm_x,
        smoothness: 2.0 * l1 * params.norm_x * params.norm_x,
        budget: budget.halve_delta(),
        max_norm,
    };
    let (mut w_tilde, report) = base(&problem)?;
    if w_tilde.len() != phi.k() {
        return Err(Error::DimensionMismatch { expected: phi.k(), got: w_tilde.len() });
    }
    let norm = linalg::norm(&w_tilde);
    let clamped = norm > params.output_bound;
    if clamped {
        linalg::scale(&mut w_tilde, params.output_bound / norm);
    }
    Ok(JlReport {
        w_out: phi.transpose_apply(&w_tilde),
        w_tilde,
        k: phi.k(),
        clamped,
        max_projected_norm: max_norm,
        base: report,
    })
}

/// Orthonormal basis of `span(basis)`; rejects an empty or rank-deficient list.
pub fn orthonormalize(basis: &[Vec<f64>], d: usize) -> Result<Vec<Vec<f64>>> {
    if basis.is_empty() {
        return Err(Error::Degenerate("empty basis".into()));
    }
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    for v in basis {
        if v.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: v.len() });
        }
        let scale = linalg::norm(v);
        let mut u = v.clone();
        // two passes of Gram-Schmidt
        for _ in 0..2 {
            for e in &q {
                let c = linalg::dot(&u, e);
                linalg::axpy(&mut u, -c, e);
            }
        }
        let r = linalg::norm(&u);
        if !(r > 1e-10 * scale) {
            return Err(Error::Degenerate("basis vectors are linearly dependent or zero".into()));
        }
        linalg::scale(&mut u, 1.0 / r);
        q.push(u);
    }
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingCheck {
    /// Largest `|‖Φv‖² − 1|` seen.
    pub worst_distortion: f64,
    pub tau: f64,
    pub probes: usize,
}

impl EmbeddingCheck {
    pub fn passed(&self) -> bool {
        self.worst_distortion <= self.tau
    }
}

/// Samples `probes` uniform unit vectors in `span(basis)` and records the
/// worst squared-norm distortion under `Φ`.
pub fn check_subspace_embedding<R: Rng + ?Sized>(
    phi: &JlMatrix,
    basis: &[Vec<f64>],
    tau: f64,
    probes: usize,
    rng: &mut R,
) -> Result<EmbeddingCheck> {
    let q = orthonormalize(basis, phi.d())?;
    let images: Vec<Vec<f64>> = q.iter().map(|e| phi.apply(e)).collect();
    let mut worst = 0.0f64;
    let mut coef = linalg::zeros(q.len());
    let mut img = linalg::zeros(phi.k());
    for _ in 0..probes {
        coef.iter_mut().for_each(|c| *c = math::standard_normal(rng));
        let r = linalg::norm(&coef);
        if r == 0.0 {
            continue;
        }
        img.iter_mut().for_each(|v| *v = 0.0);
        for (c, e) in coef.iter().zip(&images) {
            linalg::axpy(&mut img, c / r, e);
        }
        worst = worst.max((linalg::norm_sq(&img) - 1.0).abs());
    }
    Ok(EmbeddingCheck { worst_distortion: worst, tau, probes })
}

/// Exact worst distortion over the whole subspace: `max_i |s_i(ΦQ)² − 1|`
/// with `Q` an orthonormal basis.
pub fn subspace_distortion_exact(phi: &JlMatrix, basis: &[Vec<f64>]) -> Result<f64> {
    let q = orthonormalize(basis, phi.d())?;
    let r = q.len();
    let mut qm = DMatrix::<f64>::zeros(phi.d(), r);
    for (j, e) in q.iter().enumerate() {
        for (i, v) in e.iter().enumerate() {
            qm[(i, j)] = *v;
        }
    }
    let m = phi.to_matrix() * qm;
    let sv = m.svd(false, false).singular_values;
    let mut worst = 0.0f64;
    for i in 0..r {
        let s = if i < sv.len() { sv[i] } else { 0.0 };
        worst = worst.max((s * s - 1.0).abs());
    }
    Ok(worst)
}

/// Singular values above `1e-10·σ_max`.
pub fn numeric_rank(data: &Dataset) -> usize {
    if data.is_empty() {
        return 0;
    }
    let m = DMatrix::from_row_slice(data.len(), data.dim(), data.raw_features());
    let sv = m.svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > 1e-10 * max).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identity_round_trip() {
        let phi = JlMatrix::identity(3).unwrap();
        let x = [1.0, -2.0, 0.5];
        assert_eq!(phi.apply(&x), x.to_vec());
        assert_eq!(phi.transpose_apply(&x), x.to_vec());
        let basis = vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]];
        assert!(subspace_distortion_exact(&phi, &basis).unwrap() < 1e-14);
    }

    #[test]
    fn seeded_matrix_is_reproducible() {
        let a = JlMatrix::from_seed(4, 7, 11).unwrap();
        let b = JlMatrix::from_seed(4, 7, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seed(), Some(11));
        assert!(JlMatrix::from_seed(0, 7, 1).is_err());
    }

    #[test]
    fn transpose_is_adjoint() {
        let phi = JlMatrix::from_seed(3, 5, 2).unwrap();
        let x = [0.3, -1.0, 2.0, 0.0, 1.5];
        let w = [1.0, 0.5, -0.25];
        let lhs = linalg::dot(&phi.apply(&x), &w);
        let rhs = linalg::dot(&x, &phi.transpose_apply(&w));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn degenerate_basis_rejected() {
        let phi = JlMatrix::from_seed(3, 3, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(check_subspace_embedding(&phi, &[], 0.5, 10, &mut rng).is_err());
        assert!(check_subspace_embedding(&phi, &[vec![0.0; 3]], 0.5, 10, &mut rng).is_err());
        assert!(check_subspace_embedding(&phi, &[vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]], 0.5, 10, &mut rng).is_err());
    }

    #[test]
    fn rank_branch_and_dimension_cap() {
        let budget = PrivacyBudget::new(1.0, 1e-6).unwrap();
        assert_eq!(choose_k(BaseKind::SpiderBoost, 1000, 1, 1, 1.0, 1.0, 1.0, &budget).unwrap(), 1);
        // with a huge d the balance point sits far above rank·ln(2n/δ)
        let k = choose_k(BaseKind::SpiderBoost, 1 << 20, 1, 100_000, 1.0, 1.0, 1.0, &budget).unwrap();
        let cap = (2.0 * (1u64 << 20) as f64 / 1e-6).ln();
        assert_eq!(k, cap.ceil() as usize);
        assert!(choose_k(BaseKind::RecursiveReg, 100, 0, 10, 1.0, 1.0, 1.0, &budget).is_err());
    }

    #[test]
    fn rank_of_planted_design() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let a = (i as f64).sin();
                let b = (i as f64 * 0.7).cos();
                vec![a, b, a + b, a - 2.0 * b, 0.0]
            })
            .collect();
        let data = Dataset::from_rows(&rows, None).unwrap();
        assert_eq!(numeric_rank(&data), 2);
    }
}
