//! Fast invariant suite behind `dpstat check`.

use dpstat_core::gradcheck::{fd_check_with, Probe, DEFAULT_H};
use dpstat_core::jl::{run_jl, BaseKind, JlMatrix, JlParams};
use dpstat_core::loss::{erm_grad, synthetic_nonconvex_loss, Glm, HuberLink, HuberMean, TanhLink};
use dpstat_core::privacy::{accountant_sigma, gaussian_sigma};
use dpstat_core::recursive::regularize;
use dpstat_core::spiderboost::{run_spiderboost, SpiderOptions, SpiderParams};
use dpstat_core::tree::{dfs_order, max_depth, TreeParams};
use dpstat_core::{linalg, Loss, PrivacyBudget};
use rand::Rng;

use crate::rng::stream;
use crate::synth::{gen_synthetic, SynthKind};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn gradients() -> CheckResult {
    let d = 4;
    let tanh = Glm::new(TanhLink, 1.0).unwrap().with_dim(d);
    let centers = vec![vec![0.3, -0.2, 0.1, 0.0], vec![-0.5, 0.4, 0.0, 0.2]];
    let losses: Vec<(&str, Box<dyn Loss>)> = vec![
        ("huber_mean", Box::new(HuberMean::new(1.0, 2.0).unwrap())),
        ("huber_glm", Box::new(Glm::new(HuberLink::new(1.0).unwrap(), 1.0).unwrap())),
        ("tanh_glm", Box::new(tanh.clone())),
        ("nonconvex", Box::new(synthetic_nonconvex_loss(d).unwrap())),
        ("regularized", Box::new(regularize(tanh, centers, vec![0.5, 2.0]).unwrap())),
    ];
    let mut worst = (0.0f64, "");
    for (name, loss) in &losses {
        match fd_check_with(loss.as_ref(), Probe::new(d), 100, DEFAULT_H, 11) {
            Ok(r) if r.max_rel_err > worst.0 => worst = (r.max_rel_err, name),
            Ok(_) => {}
            Err(e) => return result("gradients", false, format!("{name}: {e}")),
        }
    }
    result("gradients", worst.0 <= 1e-5, format!("max rel err {:.3e} ({})", worst.0, worst.1))
}

fn tree_shape() -> CheckResult {
    let order: Vec<String> = dfs_order(2).iter().map(ToString::to_string).collect();
    let mut ok = order == ["0", "00", "01", "1", "10", "11"];
    for depth in 1..=6u32 {
        let b = (depth as usize) << (depth + 1);
        ok &= dfs_order(depth).len() == (1 << (depth + 1)) - 2 && max_depth(b) == depth;
        let p = TreeParams {
            b,
            depth,
            rounds: 1,
            alpha: 1.0,
            alpha_tilde: 1.0,
            beta: 0.0,
            c_tilde: 1.0,
            sigma_root: 0.0,
            sigma_delta: 0.0,
            p: 0.1,
            smoothness: 1.0,
        };
        ok &= 2 * p.per_round_samples() == b * (depth as usize + 2);
    }
    result("tree_shape", ok, format!("dfs_order(2) = [{}]", order.join(",")))
}

fn calibration() -> CheckResult {
    let mut rng = stream(0, "check", 0, "calibration");
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let eps = rng.random_range(0.05..4.0);
        let delta = 10f64.powf(rng.random_range(-9.0..-2.0));
        let c = rng.random_range(0.5..4.0);
        let n = rng.random_range(10..100_000usize);
        let b = rng.random_range(1..=n);
        let t = rng.random_range(1..10_000usize);
        let lambda = rng.random_range(0.0..10.0);
        let budget = PrivacyBudget::with_constant(eps, delta, c).unwrap();
        let want = c * lambda * (1.0 / delta).ln().sqrt() / eps * (1.0 / b as f64).max((t as f64).sqrt() / n as f64);
        let got = accountant_sigma(lambda, b, t, n, &budget).unwrap();
        worst = worst.max(rel(got, want));
        let s = rng.random_range(0.0..5.0);
        let want = s * (2.0 * (1.25 / delta).ln()).sqrt() / eps;
        worst = worst.max(rel(gaussian_sigma(s, eps, delta).unwrap(), want));
    }
    result("calibration", worst <= 1e-12, format!("max rel err {worst:.3e}"))
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

fn noiseless_spider() -> CheckResult {
    let n = 64;
    let data = gen_synthetic(SynthKind::GlmFullrank, n, 3, 3, &mut stream(0, "check", 0, "data")).unwrap();
    let loss = synthetic_nonconvex_loss(3).unwrap();
    let p = SpiderParams { eta: 0.25, q: 1, b1: n, b2: n, t: 100, sigma1: 0.0, sigma2: 0.0, sigma2_hat: 0.0 };
    let opts = SpiderOptions { trace: false, record_trajectory: true, ..SpiderOptions::default() };
    let r = run_spiderboost(&loss, &data, &p, &opts, &mut stream(0, "check", 0, "alg")).unwrap();
    let mut w = vec![0.0; 3];
    let mut worst = 0.0f64;
    for got in r.trajectory.unwrap().iter().skip(1) {
        let g = erm_grad(&loss, &w, &data).unwrap();
        linalg::axpy(&mut w, -p.eta, &g);
        worst = worst.max(linalg::dist(got, &w));
    }
    result("noiseless_spider", worst <= 1e-12, format!("max iterate gap {worst:.3e}"))
}

fn jl_identity() -> CheckResult {
    let d = 5;
    let data = gen_synthetic(SynthKind::GlmLowrank, 40, d, 2, &mut stream(0, "check", 0, "jl")).unwrap();
    let budget = PrivacyBudget::new(1.0, 1e-6).unwrap();
    let phi = JlMatrix::identity(d).unwrap();
    let params = JlParams { k: d, rank: 2, norm_x: 1.0, base_kind: BaseKind::SpiderBoost, output_bound: 1e6 };
    let p = SpiderParams { eta: 0.1, q: 3, b1: 40, b2: 8, t: 20, sigma1: 0.1, sigma2: 0.2, sigma2_hat: 0.3 };
    let opts = SpiderOptions { trace: false, ..SpiderOptions::default() };
    let raw = run_spiderboost(&Glm::new(TanhLink, 1.0).unwrap(), &data, &p, &opts, &mut stream(0, "check", 0, "a"))
        .unwrap()
        .w_out;
    let wrapped = run_jl(
        |problem| {
            let loss = problem.glm(TanhLink)?;
            let r = run_spiderboost(&loss, &problem.data, &p, &opts, &mut stream(0, "check", 0, "a"))?;
            Ok((r.w_out, ()))
        },
        &data,
        &phi,
        1.0,
        1.0,
        &params,
        &budget,
    );
    match wrapped {
        Ok(r) => result("jl_identity", r.w_out == raw, format!("gap {:.3e}", linalg::dist(&r.w_out, &raw))),
        Err(e) => result("jl_identity", false, e.to_string()),
    }
}

/// Runs every check; each finishes in well under a second.
pub fn run_checks() -> Vec<CheckResult> {
    vec![gradients(), tree_shape(), calibration(), noiseless_spider(), jl_identity()]
}
