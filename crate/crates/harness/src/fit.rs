//! Ordinary least squares on `(ln x, ln y)`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::experiment::{read_rows, RunStatus};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// `(ln x, ln y)`.
    pub points: Vec<(f64, f64)>,
}

pub fn scaling_fit(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(HarnessError::Fit(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some((x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(HarnessError::Fit(format!("non-positive point ({x}, {y})")));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(HarnessError::Fit("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = logs.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let ss_tot: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok(ScalingFit { slope, intercept, r2, points: logs })
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Median of `grad_norm` per distinct value of the `x` column over `ok` rows.
pub fn medians_by(path: &Path, x: &str) -> Result<Vec<(f64, f64)>> {
    let rows = read_rows(path)?;
    let mut groups: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.status == RunStatus::Ok) {
        let xv = match x {
            "n" => r.n as f64,
            "d" => r.d as f64,
            "eps" => r.eps,
            other => return Err(HarnessError::Fit(format!("unsupported x column `{other}`"))),
        };
        if let Some(g) = r.grad_norm {
            groups.entry(xv.to_bits()).or_insert((xv, Vec::new())).1.push(g);
        }
    }
    let mut out: Vec<(f64, f64)> = groups.into_values().map(|(x, mut v)| (x, median(&mut v))).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}
