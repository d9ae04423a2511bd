//! Experiment configuration: JSON on disk, CLI flags on top.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::synth::SynthKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Algorithm {
    Spiderboost,
    TreeSpider,
    RecursiveReg,
    JlSpiderboost,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Spiderboost => "spiderboost",
            Algorithm::TreeSpider => "tree_spider",
            Algorithm::RecursiveReg => "recursive_reg",
            Algorithm::JlSpiderboost => "jl_spiderboost",
        }
    }

    /// Whether the reported gradient is taken under the generating population.
    pub fn is_population(self) -> bool {
        matches!(self, Algorithm::TreeSpider | Algorithm::RecursiveReg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SyntheticNonconvex,
    TanhGlm,
    HuberGlm,
    HuberMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Known bound on `F(0) − inf F`.
    pub f0: f64,
    /// Clipping threshold of the Huber link.
    pub huber_threshold: f64,
    /// Constants of the Huber mean loss.
    pub lipschitz: f64,
    pub smoothness: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::SyntheticNonconvex,
            f0: 1.0,
            huber_threshold: 1.0,
            lipschitz: 1.0,
            smoothness: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub n: Vec<usize>,
    pub d: Vec<usize>,
    pub eps: Vec<f64>,
}

/// One `(n, d, ε)` cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub n: usize,
    pub d: usize,
    pub eps: f64,
}

impl GridPoint {
    /// Stable text used to key random streams.
    pub fn key(&self) -> String {
        format!("n={};d={};eps={}", self.n, self.d, self.eps)
    }
}

impl Grid {
    /// Canonical order: `n` outermost, then `d`, then `ε`.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::with_capacity(self.n.len() * self.d.len() * self.eps.len());
        for &n in &self.n {
            for &d in &self.d {
                for &eps in &self.eps {
                    out.push(GridPoint { n, d, eps });
                }
            }
        }
        out
    }
}

/// Names accepted in `overrides`.
pub const OVERRIDE_KEYS: &[&str] = &[
    "accountant_c", // moments-accountant constant c
    "c_tilde",      // tree threshold constant
    "f0",
    "k",            // JL target dimension
    "output_bound", // JL clamp radius
    "p",            // tree failure probability
    "r_bar",
    "rank",
    "rr_mode", // 0 optimal, 1 linear time
    "support", // population support size
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default = "default_data")]
    pub data: SynthKind,
    #[serde(default = "default_rank")]
    pub rank: usize,
    /// Norm of the planted GLM parameter.
    #[serde(default = "default_label_scale")]
    pub label_scale: f64,
    pub grid: Grid,
    pub delta: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub master_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
    /// Record real elapsed milliseconds; off keeps reruns byte-identical.
    #[serde(default)]
    pub wall_clock: bool,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_data() -> SynthKind {
    SynthKind::GlmFullrank
}

fn default_rank() -> usize {
    4
}

fn default_label_scale() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.n.is_empty() || self.grid.d.is_empty() || self.grid.eps.is_empty() {
            return Err(HarnessError::Config("grid lists must be non-empty".into()));
        }
        if self.grid.n.contains(&0) || self.grid.d.contains(&0) {
            return Err(HarnessError::Config("n and d must be at least 1".into()));
        }
        if self.grid.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(HarnessError::Config("eps values must be positive and finite".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(HarnessError::Config("delta must lie in (0, 1)".into()));
        }
        if !(self.label_scale >= 0.0 && self.label_scale.is_finite()) {
            return Err(HarnessError::Config("label_scale must be non-negative and finite".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must be non-empty".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(HarnessError::Config("seeds must be distinct".into()));
        }
        if let Some(k) = self.overrides.keys().find(|k| !OVERRIDE_KEYS.contains(&k.as_str())) {
            return Err(HarnessError::Config(format!("unknown override `{k}`; known: {}", OVERRIDE_KEYS.join(", "))));
        }
        Ok(())
    }

    pub fn override_or(&self, key: &str, default: f64) -> f64 {
        self.overrides.get(key).copied().unwrap_or(default)
    }

    /// Parses `KEY=VALUE` and inserts it.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (k, v) =
            spec.split_once('=').ok_or_else(|| HarnessError::Config(format!("override `{spec}` is not KEY=VALUE")))?;
        let v: f64 =
            v.trim().parse().map_err(|_| HarnessError::Config(format!("override `{spec}`: value is not a number")))?;
        self.overrides.insert(k.trim().to_string(), v);
        Ok(())
    }

    pub fn results_path(&self) -> PathBuf {
        self.output_dir.join("results.csv")
    }
}
