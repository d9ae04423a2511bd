//! Grid sweeps: every `(grid point, seed)` pair derives its parameters,
//! runs, and is scored by the exact gradient norm at the returned point.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use dpstat_core::jl::{choose_k, numeric_rank, run_jl, BaseKind, JlMatrix, JlParams};
use dpstat_core::loss::{erm_grad, BoundedNonconvexLink, Glm, HuberLink, HuberMean, Link, TanhLink};
use dpstat_core::recursive::{derive_rr_params, run_recursive_regularization, RrMode};
use dpstat_core::spiderboost::{derive_spider_params, run_spiderboost, SpiderOptions};
use dpstat_core::tree::{derive_tree_params, run_tree_spider, TreeOptions};
use dpstat_core::{linalg, Cursor, Dataset, FiniteDistribution, Loss, NoiseLedger, PrivacyBudget};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Algorithm, ExperimentConfig, GridPoint, LossKind};
use crate::error::{HarnessError, Result};
use crate::rng::stream;
use crate::synth::{gen_population, gen_with, SynthOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Precondition,
    Error,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Ok => "ok",
            RunStatus::Precondition => "precondition",
            RunStatus::Error => "error",
        })
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: String,
    pub n: usize,
    pub d: usize,
    pub eps: f64,
    pub delta: f64,
    pub seed: u64,
    pub status: RunStatus,
    pub grad_norm: Option<f64>,
    pub oracle_calls: Option<usize>,
    pub wall_ms: u64,
    pub param_hash: String,
    pub detail: String,
}

/// What a successful run hands back.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub w_out: Vec<f64>,
    /// Exact, noise-free gradient norm at `w_out`.
    pub grad_norm: f64,
    pub oracle_calls: usize,
    pub param_hash: String,
    /// Canonical text of the derived parameters.
    pub params: String,
    pub noise_ledger: NoiseLedger,
}

/// Short SHA-256 digest of the parameter text.
pub fn param_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn outcome(w_out: Vec<f64>, grad: Vec<f64>, oracle_calls: usize, params: String, ledger: NoiseLedger) -> Outcome {
    Outcome {
        grad_norm: linalg::norm(&grad),
        w_out,
        oracle_calls,
        param_hash: param_hash(&params),
        params,
        noise_ledger: ledger,
    }
}

fn make_loss(cfg: &ExperimentConfig, d: usize) -> Result<Box<dyn Loss>> {
    let l = &cfg.loss;
    Ok(match l.kind {
        LossKind::SyntheticNonconvex => Box::new(Glm::new(BoundedNonconvexLink, 1.0)?.with_dim(d)),
        LossKind::TanhGlm => Box::new(Glm::new(TanhLink, 1.0)?.with_dim(d)),
        LossKind::HuberGlm => Box::new(Glm::new(HuberLink::new(l.huber_threshold)?, 1.0)?.with_dim(d)),
        LossKind::HuberMean => Box::new(HuberMean::new(l.lipschitz, l.smoothness)?),
    })
}

fn budget(cfg: &ExperimentConfig, eps: f64) -> Result<PrivacyBudget> {
    Ok(PrivacyBudget::with_constant(eps, cfg.delta, cfg.override_or("accountant_c", 1.0))?)
}

fn synth_options(cfg: &ExperimentConfig) -> SynthOptions {
    SynthOptions {
        huber_b: cfg.loss.lipschitz / cfg.loss.smoothness,
        label_scale: cfg.label_scale,
        ..SynthOptions::default()
    }
}

/// The generating distribution depends only on `d`, so every `n` and every
/// seed of a sweep is measured against the same population.
fn population(cfg: &ExperimentConfig, d: usize, rank: usize, opts: &SynthOptions) -> Result<FiniteDistribution> {
    let support = cfg.override_or("support", 4096.0) as usize;
    gen_population(cfg.data, support, d, rank, opts, &mut stream(cfg.master_seed, &format!("d={d}"), 0, "population"))
}

/// Runs one `(grid point, seed)` cell.
pub fn run_point(cfg: &ExperimentConfig, point: GridPoint, seed: u64) -> Result<Outcome> {
    let GridPoint { n, d, eps } = point;
    let key = point.key();
    let ms = cfg.master_seed;
    let budget = budget(cfg, eps)?;
    let loss = make_loss(cfg, d)?;
    let loss: &dyn Loss = &*loss;
    let c = loss.constants();
    let f0 = cfg.override_or("f0", cfg.loss.f0);
    let rank = cfg.override_or("rank", cfg.rank as f64) as usize;
    let opts = synth_options(cfg);
    let mut alg_rng = stream(ms, &key, seed, "algorithm");

    match cfg.algorithm {
        Algorithm::Spiderboost => {
            let data = gen_with(cfg.data, n, d, rank, &opts, &mut stream(ms, &key, seed, "data"))?;
            let p = derive_spider_params(n, d, c.lipschitz, c.smoothness, f0, &budget)?;
            let opts = SpiderOptions { trace: false, ..SpiderOptions::default() };
            let r = run_spiderboost(loss, &data, &p, &opts, &mut alg_rng)?;
            let g = erm_grad(loss, &r.w_out, &data)?;
            Ok(outcome(r.w_out, g, r.oracle_calls, format!("{p:?}"), r.noise_ledger))
        }
        Algorithm::TreeSpider => {
            let pop = population(cfg, d, rank, &opts)?;
            let data = pop.draw(n, &mut stream(ms, &key, seed, "data"));
            let mut p = derive_tree_params(n, d, c.lipschitz, c.smoothness, f0, &budget, cfg.override_or("p", 0.1))?;
            if let Some(ct) = cfg.overrides.get("c_tilde") {
                p = p.with_c_tilde(*ct);
            }
            let mut cursor = Cursor::over(&data);
            let r = run_tree_spider(loss, &data, &mut cursor, &p, &TreeOptions::default(), &mut alg_rng)?;
            let g = pop.population_grad(loss, &r.w_out);
            Ok(outcome(r.w_out, g, r.oracle_calls, format!("{p:?}"), r.noise_ledger))
        }
        Algorithm::RecursiveReg => {
            let pop = population(cfg, d, rank, &opts)?;
            let data = pop.draw(n, &mut stream(ms, &key, seed, "data"));
            let mode = if cfg.override_or("rr_mode", 1.0) == 0.0 { RrMode::Optimal } else { RrMode::LinearTime };
            let p = derive_rr_params(mode, n, d, c.lipschitz, c.smoothness, cfg.override_or("r_bar", 1.0), &budget)?;
            let r = run_recursive_regularization(&data, loss, &p, mode.subroutine(), &mut alg_rng)?;
            let g = pop.population_grad(loss, &r.w_out);
            Ok(outcome(r.w_out, g, r.gradient_evaluations, format!("{p:?}"), r.noise_ledger))
        }
        Algorithm::JlSpiderboost => {
            let data = gen_with(cfg.data, n, d, rank, &opts, &mut stream(ms, &key, seed, "data"))?;
            match cfg.loss.kind {
                LossKind::SyntheticNonconvex => jl_spider(cfg, BoundedNonconvexLink, loss, &data, &budget, point, seed),
                LossKind::TanhGlm => jl_spider(cfg, TanhLink, loss, &data, &budget, point, seed),
                LossKind::HuberGlm => {
                    jl_spider(cfg, HuberLink::new(cfg.loss.huber_threshold)?, loss, &data, &budget, point, seed)
                }
                LossKind::HuberMean => Err(HarnessError::Config("the JL wrapper needs a GLM loss".into())),
            }
        }
    }
}

fn jl_spider<L: Link + Clone>(
    cfg: &ExperimentConfig,
    link: L,
    loss: &dyn Loss,
    data: &Dataset,
    budget: &PrivacyBudget,
    point: GridPoint,
    seed: u64,
) -> Result<Outcome> {
    let GridPoint { n, d, .. } = point;
    let key = point.key();
    let f0 = cfg.override_or("f0", cfg.loss.f0);
    let (l0, l1, norm_x) = (link.lipschitz(), link.smoothness(), 1.0);
    let rank = match cfg.overrides.get("rank") {
        Some(r) => *r as usize,
        None => numeric_rank(data).max(1),
    };
    let k = match cfg.overrides.get("k") {
        Some(k) => *k as usize,
        None => choose_k(BaseKind::SpiderBoost, n, rank, d, l0, l1, norm_x, budget)?,
    };
    let params = JlParams {
        k,
        rank,
        norm_x,
        base_kind: BaseKind::SpiderBoost,
        output_bound: cfg.override_or("output_bound", 1e6),
    };
    let phi = JlMatrix::sample(k, d, &mut stream(cfg.master_seed, &key, seed, "projection"))?;
    let mut alg_rng = stream(cfg.master_seed, &key, seed, "algorithm");
    let report = run_jl(
        |problem| {
            let ploss = problem.glm(link.clone())?;
            let p = derive_spider_params(n, k, problem.lipschitz, problem.smoothness, f0, &problem.budget)?;
            let opts = SpiderOptions { trace: false, ..SpiderOptions::default() };
            let r = run_spiderboost(&ploss, &problem.data, &p, &opts, &mut alg_rng)?;
            Ok((r.w_out.clone(), (p, r)))
        },
        data,
        &phi,
        l0,
        l1,
        &params,
        budget,
    )?;
    let (p, base) = report.base;
    let g = erm_grad(loss, &report.w_out, data)?;
    let text = format!("{params:?} {p:?} clamped={}", report.clamped);
    Ok(outcome(report.w_out, g, base.oracle_calls, text, base.noise_ledger))
}

fn run_row(cfg: &ExperimentConfig, point: GridPoint, seed: u64) -> ResultRow {
    let start = Instant::now();
    let res = run_point(cfg, point, seed);
    let wall_ms = if cfg.wall_clock { start.elapsed().as_millis() as u64 } else { 0 };
    let mut row = ResultRow {
        algorithm: cfg.algorithm.name().to_string(),
        n: point.n,
        d: point.d,
        eps: point.eps,
        delta: cfg.delta,
        seed,
        status: RunStatus::Ok,
        grad_norm: None,
        oracle_calls: None,
        wall_ms,
        param_hash: String::new(),
        detail: String::new(),
    };
    match res {
        Ok(o) => {
            row.grad_norm = Some(o.grad_norm);
            row.oracle_calls = Some(o.oracle_calls);
            row.param_hash = o.param_hash;
        }
        Err(HarnessError::Core(dpstat_core::Error::Precondition(msg))) => {
            row.status = RunStatus::Precondition;
            row.detail = msg;
        }
        Err(e) => {
            row.status = RunStatus::Error;
            row.detail = e.to_string();
        }
    }
    row
}

/// Rows of a finished sweep plus where they were written.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub csv_path: PathBuf,
}

/// Runs every grid point × seed and writes `results.csv` in canonical
/// order. The output directory is checked for writability before any run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| HarnessError::io(&cfg.output_dir, e))?;
    let csv_path = cfg.results_path();
    let mut file = fs::File::create(&csv_path).map_err(|e| HarnessError::io(&csv_path, e))?;

    let tasks: Vec<(GridPoint, u64)> =
        cfg.grid.points().into_iter().flat_map(|p| cfg.seeds.iter().map(move |s| (p, *s))).collect();
    let work = || tasks.par_iter().map(|(p, s)| run_row(cfg, *p, *s)).collect::<Vec<_>>();
    let rows = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .install(work),
        None => work(),
    };

    let bytes = rows_to_csv(&rows)?;
    file.write_all(&bytes).map_err(|e| HarnessError::io(&csv_path, e))?;
    Ok(ExperimentOutput { rows, csv_path })
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::io("<buffer>", e.into_error()))
}

pub fn read_rows(path: &std::path::Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?)
}
