//! Per-project metric thresholds from the partial-pooling posterior.
//!
//! A project's predicted response is normal on the log scale, so the tau-level
//! threshold is `exp(mu_j + z(tau) * sigma) - 1`, with the -1 undoing the
//! ingestion +1 shift. The default uses plug-in posterior means; the
//! `predictive` option instead averages the quantile over posterior draws.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::{FitResult, PointEstimates};
use crate::models::ModelKind;
use crate::sampler::SamplerConfig;

/// Default report quantiles: moderate / high / very high risk.
pub const DEFAULT_TAUS: [f64; 3] = [0.7, 0.8, 0.9];

/// How thresholds are evaluated.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ThresholdOptions {
    /// Role indicator the prediction is made for (1 = target role).
    pub x: f64,
    /// Average `exp(mu + z sigma)` over posterior draws instead of plugging
    /// in posterior means.
    pub predictive: bool,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        Self { x: 1.0, predictive: false }
    }
}

/// Thresholds for one project, aligned with the report's tau list.
#[derive(Debug, Clone, Serialize)]
pub struct ThresholdRow {
    pub project: String,
    pub thresholds: Vec<f64>,
}

/// Thresholds for every project of a fit, plus provenance.
#[derive(Debug, Clone, Serialize)]
pub struct ThresholdReport {
    pub role: String,
    pub taus: Vec<f64>,
    pub predictive: bool,
    pub rows: Vec<ThresholdRow>,
    pub seed: u64,
    pub config: SamplerConfig,
    pub warnings: Vec<String>,
}

impl ThresholdReport {
    /// CSV report, one row per project, values rounded to one decimal.
    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        let header: Vec<String> = self.taus.iter().map(|t| format!("t{:.0}", t * 100.0)).collect();
        writeln!(w, "project,{}", header.join(","))?;
        for row in &self.rows {
            let values: Vec<String> = row.thresholds.iter().map(|v| format!("{v:.1}")).collect();
            writeln!(w, "{},{}", row.project, values.join(","))?;
        }
        Ok(())
    }
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse standard normal CDF: bisection bracket followed by a Newton
/// polish, accurate to well below 1e-12 in probability.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile probability must lie in (0, 1), got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        return Ok(-lower_quantile(1.0 - p));
    }
    Ok(lower_quantile(p))
}

/// Quantile for p in (0, 0.5]; the answer is non-positive where erfc is
/// accurate.
fn lower_quantile(p: f64) -> f64 {
    let mut lo = -40.0;
    let mut hi = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut z = 0.5 * (lo + hi);
    for _ in 0..2 {
        let density = normal_pdf(z);
        if density > 0.0 {
            let step = (normal_cdf(z) - p) / density;
            if step.is_finite() {
                z -= step.clamp(-1.0, 1.0);
            }
        }
    }
    z
}

/// Thresholds for one project with default options (target role, plug-in).
pub fn derive_thresholds(fit: &FitResult, project: &str, taus: &[f64]) -> Result<ThresholdRow> {
    derive_thresholds_with(fit, project, taus, ThresholdOptions::default())
}

pub fn derive_thresholds_with(
    fit: &FitResult,
    project: &str,
    taus: &[f64],
    opts: ThresholdOptions,
) -> Result<ThresholdRow> {
    if fit.kind != ModelKind::PartialPool {
        return Err(Error::Domain("threshold derivation needs a partial-pooling fit".into()));
    }
    for tau in taus {
        if !(*tau > 0.0 && *tau < 1.0) {
            return Err(Error::Domain(format!("tau must lie in (0, 1), got {tau}")));
        }
    }
    let j = fit
        .project_index(project)
        .ok_or_else(|| Error::UnknownProject(project.to_string()))?;

    let thresholds = if opts.predictive {
        predictive_thresholds(fit, j, taus, opts.x)?
    } else {
        let PointEstimates::Hierarchical { sigma, a, b, .. } = &fit.point_estimates else {
            return Err(Error::Domain("partial-pooling fit carries no hierarchical estimates".into()));
        };
        let mu = a[j] + b[j] * opts.x;
        taus.iter()
            .map(|&tau| Ok((mu + normal_quantile(tau)? * sigma).exp() - 1.0))
            .collect::<Result<Vec<f64>>>()?
    };
    Ok(ThresholdRow { project: project.to_string(), thresholds })
}

/// Averages `exp(a_j + b_j x + z sigma) - 1` over posterior draws.
fn predictive_thresholds(fit: &FitResult, j: usize, taus: &[f64], x: f64) -> Result<Vec<f64>> {
    let samples = &fit.samples;
    let a_col = samples
        .param_index(&format!("a[{j}]"))
        .ok_or_else(|| Error::Domain("samples lack natural-scale columns".into()))?;
    let b_col = samples
        .param_index(&format!("b[{j}]"))
        .ok_or_else(|| Error::Domain("samples lack natural-scale columns".into()))?;
    let s_col = samples
        .param_index("sigma")
        .ok_or_else(|| Error::Domain("samples lack natural-scale columns".into()))?;

    let mut out = Vec::with_capacity(taus.len());
    for &tau in taus {
        let z = normal_quantile(tau)?;
        let mut acc = 0.0;
        let mut count = 0.0;
        for chain in &samples.draws {
            for draw in chain {
                acc += (draw[a_col] + draw[b_col] * x + z * draw[s_col]).exp() - 1.0;
                count += 1.0;
            }
        }
        out.push(acc / count);
    }
    Ok(out)
}

/// Thresholds for every project in the fit, in project order.
pub fn threshold_report(fit: &FitResult, taus: &[f64], opts: ThresholdOptions) -> Result<ThresholdReport> {
    let mut rows = Vec::with_capacity(fit.projects.len());
    for project in &fit.projects {
        rows.push(derive_thresholds_with(fit, project, taus, opts)?);
    }
    let mut warnings = fit.warnings.clone();
    if !fit.convergence.converged {
        warnings.push("fit did not converge; thresholds may be unreliable".into());
    }
    Ok(ThresholdReport {
        role: if opts.x == 1.0 { "controller".into() } else { "none".into() },
        taus: taus.to_vec(),
        predictive: opts.predictive,
        rows,
        seed: fit.samples.config.seed,
        config: fit.samples.config.clone(),
        warnings,
    })
}
