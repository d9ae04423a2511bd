use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dpstat::check::run_checks;
use dpstat::config::{Grid, LossConfig};
use dpstat::fit::{medians_by, scaling_fit};
use dpstat::io::write_dataset;
use dpstat::rng::stream;
use dpstat::synth::{gen_synthetic, SynthKind};
use dpstat::{run_experiment, Algorithm, ExperimentConfig, RunStatus};

#[derive(Parser)]
#[command(name = "dpstat", version, about = "Private stationary-point optimizers: sweeps, fits and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a grid sweep and write results.csv.
    Run(RunArgs),
    /// Log-log fit of the median grad_norm against a grid column.
    Fit {
        csv: PathBuf,
        #[arg(long, default_value = "n")]
        x: String,
    },
    /// Run the invariant suite.
    Check,
    /// Write a synthetic dataset as CSV.
    Gen {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 1)]
        rank: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    algorithm: Option<Algorithm>,
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    d: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `KEY=VALUE`, repeatable.
    #[arg(long = "override")]
    overrides: Vec<String>,
}

fn build_config(args: RunArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let Some(algorithm) = args.algorithm else { bail!("either --config or --algorithm is required") };
            ExperimentConfig {
                algorithm,
                loss: LossConfig::default(),
                data: SynthKind::GlmFullrank,
                rank: 4,
                label_scale: 1.0,
                grid: Grid { n: vec![], d: vec![], eps: vec![1.0] },
                delta: 1e-6,
                seeds: vec![0],
                master_seed: 0,
                output_dir: PathBuf::from("results"),
                overrides: Default::default(),
                wall_clock: false,
                threads: None,
            }
        }
    };
    if let Some(a) = args.algorithm {
        cfg.algorithm = a;
    }
    if !args.n.is_empty() {
        cfg.grid.n = args.n;
    }
    if !args.d.is_empty() {
        cfg.grid.d = args.d;
    }
    if !args.eps.is_empty() {
        cfg.grid.eps = args.eps;
    }
    if let Some(delta) = args.delta {
        cfg.delta = delta;
    }
    if !args.seed.is_empty() {
        cfg.seeds = args.seed;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let cfg = build_config(args)?;
            let out = run_experiment(&cfg)?;
            let failed = out.rows.iter().filter(|r| r.status != RunStatus::Ok).count();
            for r in out.rows.iter().filter(|r| r.status != RunStatus::Ok) {
                eprintln!("n={} d={} eps={} seed={}: {} {}", r.n, r.d, r.eps, r.seed, r.status, r.detail);
            }
            println!("{} rows -> {}", out.rows.len(), out.csv_path.display());
            Ok(failed == 0)
        }
        Command::Fit { csv, x } => {
            let pts = medians_by(&csv, &x)?;
            let fit = scaling_fit(&pts).with_context(|| format!("fitting {}", csv.display()))?;
            println!(
                "slope {:.6} intercept {:.6} r2 {:.6} points {}",
                fit.slope,
                fit.intercept,
                fit.r2,
                fit.points.len()
            );
            Ok(true)
        }
        Command::Check => {
            let results = run_checks();
            for c in &results {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(results.iter().all(|c| c.passed))
        }
        Command::Gen { kind, n, d, rank, seed, out } => {
            let data = gen_synthetic(kind, n, d, rank, &mut stream(seed, "gen", 0, "data"))?;
            write_dataset(&out, &data)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
