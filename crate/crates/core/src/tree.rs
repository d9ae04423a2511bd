//! Tree-based Private Spider for population stationary points.
//!
//! Each round builds a binary tree of depth `D` and walks it depth-first.
//! Left children inherit the parent's iterate and estimate; right children
//! draw fresh samples and add a noisy gradient variation. Every leaf takes a
//! normalized step, so each estimate absorbs at most `D` updates per `2^D`
//! steps.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use rand::Rng;

use crate::dataset::{Cursor, Dataset, FiniteDistribution};
use crate::error::{Error, Result};
use crate::linalg;
use crate::loss::{self, Loss};
use crate::math;
use crate::privacy::{gaussian_sigma, tree_gv_sensitivity, NoiseLedger, PrivacyBudget};
use crate::sampling::{batch_mean_grad, batch_mean_variation};

pub const SITE_ROOT: &str = "tree.root";
pub const SITE_DELTA: &str = "tree.delta";

/// Bit string `s ∈ {0,1}^{≤64}`, first bit most significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString {
    bits: u64,
    len: u32,
}

impl BitString {
    pub const ROOT: BitString = BitString { bits: 0, len: 0 };

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_root(&self) -> bool {
        self.len == 0
    }

    pub fn child(&self, bit: bool) -> BitString {
        BitString { bits: (self.bits << 1) | bit as u64, len: self.len + 1 }
    }

    pub fn parent(&self) -> Option<BitString> {
        (self.len > 0).then(|| BitString { bits: self.bits >> 1, len: self.len - 1 })
    }

    /// Last bit; `None` at the root.
    pub fn last(&self) -> Option<bool> {
        (self.len > 0).then_some(self.bits & 1 == 1)
    }

    /// Integer value of the bits, i.e. `k` for the leaf `ℓ(k)`.
    pub fn value(&self) -> u64 {
        self.bits
    }

    /// Parses a string over `{0,1}`.
    pub fn parse(s: &str) -> Option<BitString> {
        s.chars().try_fold(BitString::ROOT, |acc, c| match c {
            '0' => Some(acc.child(false)),
            '1' => Some(acc.child(true)),
            _ => None,
        })
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in (0..self.len).rev() {
            write!(f, "{}", (self.bits >> i) & 1)?;
        }
        Ok(())
    }
}

/// Node `u_{t,s}`: round `t ≥ 1` and bit string `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeAddress {
    pub round: usize,
    pub s: BitString,
}

impl fmt::Display for NodeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.round, self.s)
    }
}

/// Depth-first visiting order of the non-root nodes of a depth-`D` tree.
pub fn dfs_order(depth: u32) -> Vec<BitString> {
    fn visit(node: BitString, depth: u32, out: &mut Vec<BitString>) {
        for bit in [false, true] {
            let c = node.child(bit);
            out.push(c);
            if c.len < depth {
                visit(c, depth, out);
            }
        }
    }
    let mut out = Vec::new();
    if depth > 0 {
        visit(BitString::ROOT, depth, &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    pub b: usize,
    pub depth: u32,
    pub rounds: usize,
    pub alpha: f64,
    pub alpha_tilde: f64,
    pub beta: f64,
    pub c_tilde: f64,
    pub sigma_root: f64,
    pub sigma_delta: f64,
    pub p: f64,
    /// Smoothness used in the step size.
    pub smoothness: f64,
}

impl TreeParams {
    /// Batch size `⌊b/2^{|s|}⌋` of a right child at depth `level`.
    pub fn batch_at(&self, level: u32) -> usize {
        self.b >> level
    }

    /// Samples consumed by one full round.
    pub fn per_round_samples(&self) -> usize {
        (1..=self.depth).map(|j| (1usize << (j - 1)) * self.batch_at(j)).sum::<usize>() + self.b
    }

    /// Length `β/(2^{D/2} L1)` of every leaf step.
    pub fn step_length(&self) -> f64 {
        self.beta / (math::powf(2.0, 0.5 * self.depth as f64) * self.smoothness)
    }

    pub fn leaves_per_tree(&self) -> usize {
        1 << self.depth
    }

    /// Replaces `C̃` and rescales `α̃ = C̃ α`.
    pub fn with_c_tilde(mut self, c_tilde: f64) -> Self {
        self.c_tilde = c_tilde;
        self.alpha_tilde = c_tilde * self.alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth > 30 {
            return Err(Error::invalid("D", "depth above 30 is not supported"));
        }
        if (self.depth as usize) << (self.depth + 1) > self.b {
            return Err(Error::invalid("D", format!("D 2^(D+1) exceeds b = {}", self.b)));
        }
        if self.batch_at(self.depth) == 0 {
            return Err(Error::invalid("b", "deepest right child would receive no samples"));
        }
        if self.rounds == 0 {
            return Err(Error::invalid("T", "must be at least 1"));
        }
        if !(self.smoothness > 0.0) || !(self.beta >= 0.0) || !(self.alpha_tilde >= 0.0) {
            return Err(Error::invalid("params", "smoothness must be positive, beta and alpha_tilde non-negative"));
        }
        if self.beta > math::powf(2.0, 0.5 * self.depth as f64) * self.alpha_tilde * (1.0 + 1e-12) {
            return Err(Error::invalid("beta", "must not exceed 2^(D/2) alpha_tilde"));
        }
        if !(self.sigma_root >= 0.0 && self.sigma_delta >= 0.0) {
            return Err(Error::invalid("sigma", "must be non-negative"));
        }
        Ok(())
    }
}

/// Largest `D` with `D·2^{D+1} ≤ b`.
pub fn max_depth(b: usize) -> u32 {
    let mut depth = 0u32;
    while ((depth + 1) as usize) << (depth + 2) <= b {
        depth += 1;
    }
    depth
}

/// Parameter settings for a single pass over `n` samples.
///
/// `b` is rounded down to a multiple of `2^D` so that a round uses exactly
/// `b(D/2 + 1)` samples.
pub fn derive_tree_params(
    n: usize,
    d: usize,
    l0: f64,
    l1: f64,
    f0: f64,
    budget: &PrivacyBudget,
    p: f64,
) -> Result<TreeParams> {
    for (name, v) in [("L0", l0), ("L1", l1), ("F0", f0)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(name, "must be positive and finite"));
        }
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid("p", "must lie in (0, 1)"));
    }
    if n == 0 || d == 0 {
        return Err(Error::invalid("n, d", "must be at least 1"));
    }
    let (nf, df, eps) = (n as f64, d as f64, budget.eps());
    let b_raw = (math::powf(nf, 2.0 / 3.0)).max(math::sqrt(nf) * math::powf(df, 0.25) / math::sqrt(eps));
    // guard exact powers such as 4096^(2/3) against rounding below the integer
    let b_floor = math::floor(b_raw * (1.0 + 1e-12)) as usize;
    let depth = max_depth(b_floor);
    let b = (b_floor >> depth) << depth;
    let half = depth as f64 / 2.0 + 1.0;

    let mut failed: Vec<String> = Vec::new();
    let need_a = math::sqrt(df) * half * half / eps;
    let need_b = half * half * half;
    if nf < need_a {
        failed.push(format!("n = {n} < sqrt(d) (D/2+1)^2 / eps = {need_a}"));
    }
    if nf < need_b {
        failed.push(format!("n = {n} < (D/2+1)^3 = {need_b}"));
    }
    let per_round = b + (depth as usize * b) / 2;
    let rounds = n / per_round.max(1);
    if rounds == 0 {
        failed.push(format!("n = {n} leaves no complete round of b (D/2+1) = {} samples", b as f64 * half));
    }
    if !failed.is_empty() {
        return Err(Error::Precondition(failed.join("; ")));
    }

    let alpha =
        core::f64::consts::SQRT_2 * l0 * math::powf(nf, -1.0 / 3.0).max(math::sqrt(math::sqrt(df) / (nf * eps)));
    let beta = alpha * 1f64.min(math::sqrt(b as f64) * eps / math::sqrt(df));
    let leaves_log = math::ln(2.0 * rounds as f64 * math::powf(2.0, (depth + 1) as f64) / p);
    let c_tilde = 256.0 * math::ln(1.25 / budget.delta()) * leaves_log
        + 8.0 * l1 * f0 * math::sqrt(2.0 * depth as f64) * half / (2.0 * l0 * l0);
    let params = TreeParams {
        b,
        depth,
        rounds,
        alpha,
        alpha_tilde: c_tilde * alpha,
        beta,
        c_tilde,
        sigma_root: gaussian_sigma(2.0 * l0 / b as f64, eps, budget.delta())?,
        sigma_delta: gaussian_sigma(tree_gv_sensitivity(beta, depth, b), eps, budget.delta())?,
        p,
        smoothness: l1,
    };
    params.validate()?;
    Ok(params)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TreeOptions {
    /// Keep a per-node trace in the report.
    pub trace: bool,
}

/// State of one visited node.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceNode {
    pub address: NodeAddress,
    /// Stream indices drawn at this node (root and right children).
    pub batch: Option<Range<usize>>,
    pub w: Vec<f64>,
    pub grad: Vec<f64>,
    /// Parent iterate, kept for right children.
    pub w_parent: Option<Vec<f64>>,
    /// Number of variation updates folded into `grad` since the root.
    pub updates: u32,
    /// Length of the step taken at this leaf.
    pub step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeRunReport {
    pub w_out: Vec<f64>,
    pub stopped_early: bool,
    pub stop_address: Option<NodeAddress>,
    pub samples_consumed: usize,
    /// Per-sample gradient oracle calls, counting each fresh sample once.
    pub oracle_calls: usize,
    /// Per-sample gradient evaluations (a variation costs two).
    pub gradient_evaluations: usize,
    pub leaf_count_visited: usize,
    pub leaves_per_tree: usize,
    pub rounds_completed: usize,
    /// Index into the visited leaves when the output was sampled uniformly.
    pub selected_leaf: Option<usize>,
    pub noise_ledger: NoiseLedger,
    pub trace: Vec<TraceNode>,
}

struct Node {
    w: Vec<f64>,
    grad: Vec<f64>,
    updates: u32,
}

/// Runs the tree-based method over the unread part of `cursor`.
pub fn run_tree_spider<R: Rng + ?Sized>(
    loss: &dyn Loss,
    data: &Dataset,
    cursor: &mut Cursor,
    params: &TreeParams,
    options: &TreeOptions,
    rng: &mut R,
) -> Result<TreeRunReport> {
    params.validate()?;
    loss::bind(loss, data)?;
    let need = params.rounds * params.per_round_samples();
    if cursor.remaining() < need {
        return Err(Error::StreamExhausted { requested: need, remaining: cursor.remaining() });
    }
    let d = data.dim();
    let order = dfs_order(params.depth);
    let step_len = params.step_length();
    let threshold = 2.0 * params.alpha_tilde;
    let start = cursor.consumed();

    let mut ledger = NoiseLedger::new();
    let mut trace = Vec::new();
    let mut stack: Vec<Node> = Vec::with_capacity(params.depth as usize + 1);
    let mut w_last = linalg::zeros(d);
    let mut leaves: Vec<Vec<f64>> = Vec::new();
    let mut delta = linalg::zeros(d);
    let mut grad_evals = 0;
    let mut rounds_completed = 0;

    for round in 1..=params.rounds {
        stack.clear();
        let range = cursor.take(params.b)?;
        let mut g = linalg::zeros(d);
        batch_mean_grad(loss, data, range.clone(), params.b, &w_last, &mut g);
        ledger.add_gaussian(SITE_ROOT, params.sigma_root, &mut g, rng);
        grad_evals += params.b;
        stack.push(Node { w: w_last.clone(), grad: g, updates: 0 });
        let root = NodeAddress { round, s: BitString::ROOT };
        let mut pending = Some((root, Some(range), None));

        let mut nodes = order.iter();
        loop {
            let (address, batch, w_parent) = match pending.take() {
                Some(p) => p,
                None => {
                    let Some(&s) = nodes.next() else { break };
                    let level = s.len() as usize;
                    stack.truncate(level);
                    let parent = &stack[level - 1];
                    if s.last() == Some(false) {
                        let node = Node { w: parent.w.clone(), grad: parent.grad.clone(), updates: parent.updates };
                        stack.push(node);
                        (NodeAddress { round, s }, None, None)
                    } else {
                        let m = params.batch_at(s.len());
                        let range = cursor.take(m)?;
                        batch_mean_variation(loss, data, range.clone(), m, &w_last, &parent.w, &mut delta);
                        ledger.add_gaussian(SITE_DELTA, params.sigma_delta, &mut delta, rng);
                        grad_evals += 2 * m;
                        let grad = linalg::add(&parent.grad, &delta);
                        let w_parent = options.trace.then(|| parent.w.clone());
                        let updates = parent.updates + 1;
                        stack.push(Node { w: w_last.clone(), grad, updates });
                        (NodeAddress { round, s }, Some(range), w_parent)
                    }
                }
            };

            let node = stack.last().expect("node pushed");
            let is_leaf = address.s.len() == params.depth;
            let mut step = None;
            if is_leaf {
                let gn = linalg::norm(&node.grad);
                if gn <= threshold {
                    if options.trace {
                        trace.push(trace_node(address, batch, node, w_parent, None));
                    }
                    let consumed = cursor.consumed() - start;
                    return Ok(TreeRunReport {
                        w_out: node.w.clone(),
                        stopped_early: true,
                        stop_address: Some(address),
                        samples_consumed: consumed,
                        oracle_calls: consumed,
                        gradient_evaluations: grad_evals,
                        leaf_count_visited: leaves.len() + 1,
                        leaves_per_tree: params.leaves_per_tree(),
                        rounds_completed,
                        selected_leaf: None,
                        noise_ledger: ledger,
                        trace,
                    });
                }
                leaves.push(node.w.clone());
                w_last = node.w.clone();
                linalg::axpy(&mut w_last, -step_len / gn, &node.grad);
                step = Some(linalg::dist(&w_last, &node.w));
            }
            if options.trace {
                trace.push(trace_node(address, batch, node, w_parent, step));
            }
        }
        rounds_completed += 1;
    }

    let selected = rng.random_range(0..leaves.len());
    let consumed = cursor.consumed() - start;
    Ok(TreeRunReport {
        w_out: leaves.swap_remove(selected),
        stopped_early: false,
        stop_address: None,
        samples_consumed: consumed,
        oracle_calls: consumed,
        gradient_evaluations: grad_evals,
        leaf_count_visited: rounds_completed * params.leaves_per_tree(),
        leaves_per_tree: params.leaves_per_tree(),
        rounds_completed,
        selected_leaf: Some(selected),
        noise_ledger: ledger,
        trace,
    })
}

fn trace_node(
    address: NodeAddress,
    batch: Option<Range<usize>>,
    node: &Node,
    w_parent: Option<Vec<f64>>,
    step: Option<f64>,
) -> TraceNode {
    TraceNode { address, batch, w: node.w.clone(), grad: node.grad.clone(), w_parent, updates: node.updates, step }
}

/// Where validation batches come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSource {
    /// Fresh i.i.d. draws from the distribution.
    Sampled,
    /// Exact population expectations (the infinite-batch limit).
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeErrorCheck {
    pub violations: usize,
    pub checks: usize,
    /// `α·α̃`.
    pub threshold: f64,
}

impl TreeErrorCheck {
    pub fn rate(&self) -> f64 {
        self.violations as f64 / self.checks as f64
    }
}

/// Iterates of one round along a deterministic path started at `w0`:
/// leaf steps follow the exact population gradient with the algorithm's
/// step length.
pub fn frozen_tree_path(
    loss: &dyn Loss,
    dist: &FiniteDistribution,
    params: &TreeParams,
    w0: &[f64],
) -> Vec<(BitString, Vec<f64>)> {
    let step_len = params.step_length();
    let mut w_last = w0.to_vec();
    let mut out = alloc::vec![(BitString::ROOT, w_last.clone())];
    let mut stack = alloc::vec![w_last.clone()];
    let visit_leaf = |w: &[f64], w_last: &mut Vec<f64>| {
        let g = dist.population_grad(loss, w);
        let gn = linalg::norm(&g);
        *w_last = w.to_vec();
        if gn > 0.0 {
            linalg::axpy(w_last, -step_len / gn, &g);
        }
    };
    if params.depth == 0 {
        visit_leaf(&out[0].1.clone(), &mut w_last);
    }
    for s in dfs_order(params.depth) {
        stack.truncate(s.len() as usize);
        let w = if s.last() == Some(false) { stack[s.len() as usize - 1].clone() } else { w_last.clone() };
        stack.push(w.clone());
        if s.len() == params.depth {
            visit_leaf(&w, &mut w_last);
        }
        out.push((s, w));
    }
    out
}

fn population_batch_grad<R: Rng + ?Sized>(
    loss: &dyn Loss,
    dist: &FiniteDistribution,
    source: BatchSource,
    m: usize,
    w: &[f64],
    w_prev: Option<&[f64]>,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = linalg::zeros(w.len());
    match source {
        BatchSource::Exact => {
            out = dist.population_grad(loss, w);
            if let Some(p) = w_prev {
                linalg::axpy(&mut out, -1.0, &dist.population_grad(loss, p));
            }
        }
        BatchSource::Sampled => {
            let inv = 1.0 / m as f64;
            for _ in 0..m {
                let s = dist.support().sample(dist.sample_index(rng));
                loss.add_grad(w, s, inv, &mut out);
                if let Some(p) = w_prev {
                    loss.add_grad(p, s, -inv, &mut out);
                }
            }
        }
    }
    out
}

/// Fraction of `(node, trial)` pairs on a frozen round whose estimate misses
/// the population gradient by more than `√(α·α̃)`.
pub fn validate_tree_estimation_error<R: Rng + ?Sized>(
    loss: &dyn Loss,
    dist: &FiniteDistribution,
    params: &TreeParams,
    w0: &[f64],
    trials: usize,
    source: BatchSource,
    rng: &mut R,
) -> Result<TreeErrorCheck> {
    if trials < 100 {
        return Err(Error::invalid("trials", "must be at least 100"));
    }
    params.validate()?;
    if w0.len() != dist.dim() {
        return Err(Error::DimensionMismatch { expected: dist.dim(), got: w0.len() });
    }
    let path = frozen_tree_path(loss, dist, params, w0);
    let truth: Vec<Vec<f64>> = path.iter().map(|(_, w)| dist.population_grad(loss, w)).collect();
    let threshold = params.alpha * params.alpha_tilde;
    let mut ledger = NoiseLedger::new();
    let mut violations = 0;
    let mut estimates: Vec<Vec<f64>> = Vec::with_capacity(path.len());
    for _ in 0..trials {
        estimates.clear();
        let mut stack: Vec<usize> = Vec::new();
        for (i, (s, w)) in path.iter().enumerate() {
            let est = if s.is_root() {
                let mut g = population_batch_grad(loss, dist, source, params.b, w, None, rng);
                ledger.add_gaussian(SITE_ROOT, params.sigma_root, &mut g, rng);
                g
            } else {
                stack.truncate(s.len() as usize);
                let parent = stack[s.len() as usize - 1];
                if s.last() == Some(false) {
                    estimates[parent].clone()
                } else {
                    let m = params.batch_at(s.len());
                    let mut delta = population_batch_grad(loss, dist, source, m, w, Some(&path[parent].1), rng);
                    ledger.add_gaussian(SITE_DELTA, params.sigma_delta, &mut delta, rng);
                    linalg::add(&estimates[parent], &delta)
                }
            };
            let e = linalg::dist(&est, &truth[i]);
            if e * e > threshold {
                violations += 1;
            }
            estimates.push(est);
            stack.push(i);
        }
    }
    Ok(TreeErrorCheck { violations, checks: trials * path.len(), threshold })
}
