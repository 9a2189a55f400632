//! Fit orchestration, point prediction, and the three-model RMSE comparison.
//!
//! Posterior samples carry both the raw unconstrained draws and derived
//! natural-scale columns (`sigma`, per-project `a[j]`, `b[j]`), so point
//! estimates of transformed quantities are means of per-draw values rather
//! than transforms of means.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::Corpus;
use crate::diagnostics::{convergence_report, ConvergenceReport};
use crate::error::{Error, Result};
use crate::models::{ModelKind, ModelPosterior, ModelSpec, RegressionData};
use crate::sampler::{sample, PosteriorSamples, SamplerConfig};

/// Natural-scale posterior means.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PointEstimates {
    /// One global line.
    Global { alpha: f64, beta: f64, sigma: f64 },
    /// Independent per-project lines, indexed like `FitResult::projects`.
    PerProject { a: Vec<f64>, b: Vec<f64>, sigma: Vec<f64> },
    /// Hierarchical hyperparameters plus expanded per-project lines.
    Hierarchical {
        mu_a: f64,
        mu_b: f64,
        sigma_a: f64,
        sigma_b: f64,
        sigma: f64,
        a: Vec<f64>,
        b: Vec<f64>,
    },
}

/// A fitted model: samples, natural-scale point estimates, and diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub kind: ModelKind,
    /// Project ids in model order.
    pub projects: Vec<String>,
    pub samples: PosteriorSamples,
    pub point_estimates: PointEstimates,
    pub convergence: ConvergenceReport,
    /// Projects whose slope has no likelihood information (constant x).
    pub unidentified: Vec<String>,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn project_index(&self, project: &str) -> Option<usize> {
        self.projects.iter().position(|p| p == project)
    }

    pub fn converged(&self) -> bool {
        self.convergence.converged
    }
}

/// Fits one model kind to the corpus.
///
/// Per-project models expect the corpus to be pre-filtered to projects that
/// contain the target role. Non-convergence is reported as a warning on the
/// result, not an error.
pub fn fit(kind: ModelKind, corpus: &Corpus, config: &SamplerConfig) -> Result<FitResult> {
    if corpus.is_empty() {
        return Err(Error::EmptySample);
    }
    config.validate()?;
    match kind {
        ModelKind::FullPool => fit_full_pool(corpus, config),
        ModelKind::PartialPool => fit_partial_pool(corpus, config),
        ModelKind::Unpooled => fit_unpooled(corpus, config),
    }
}

fn finish(
    kind: ModelKind,
    projects: Vec<String>,
    samples: PosteriorSamples,
    point_estimates: PointEstimates,
    unidentified: Vec<String>,
) -> FitResult {
    let convergence = convergence_report(&samples);
    let mut warnings = Vec::new();
    if !convergence.converged {
        warnings.push(format!(
            "model did not converge: max split R-hat {:.3}, {} divergences",
            convergence.max_split_rhat, convergence.divergence_count
        ));
    }
    for project in &unidentified {
        warnings.push(format!("project `{project}` has a constant role indicator; slope is unidentified"));
    }
    FitResult { kind, projects, samples, point_estimates, convergence, unidentified, warnings }
}

fn column_mean(samples: &PosteriorSamples, name: &str) -> f64 {
    let p = samples.param_index(name).expect("known column");
    let pooled = samples.pooled_column(p);
    pooled.iter().sum::<f64>() / pooled.len() as f64
}

fn fit_full_pool(corpus: &Corpus, config: &SamplerConfig) -> Result<FitResult> {
    let spec = ModelSpec::new(ModelKind::FullPool, 1)?;
    let data = RegressionData::from_corpus(corpus);
    let target = ModelPosterior::new(&spec, &data)?;
    let raw = sample(&target, config)?;
    let samples = raw.augment(vec!["sigma".into()], |draw| vec![draw[2].exp()]);
    let point_estimates = PointEstimates::Global {
        alpha: column_mean(&samples, "alpha"),
        beta: column_mean(&samples, "beta"),
        sigma: column_mean(&samples, "sigma"),
    };
    Ok(finish(ModelKind::FullPool, corpus.projects().to_vec(), samples, point_estimates, Vec::new()))
}

fn fit_partial_pool(corpus: &Corpus, config: &SamplerConfig) -> Result<FitResult> {
    let j = corpus.n_projects();
    let spec = ModelSpec::new(ModelKind::PartialPool, j)?;
    let data = RegressionData::from_corpus(corpus);
    let target = ModelPosterior::new(&spec, &data)?;
    let raw = sample(&target, config)?;

    let mut extra_names = vec!["sigma_a".to_string(), "sigma_b".to_string(), "sigma".to_string()];
    extra_names.extend((0..j).map(|k| format!("a[{k}]")));
    extra_names.extend((0..j).map(|k| format!("b[{k}]")));
    let samples = raw.augment(extra_names, move |draw| {
        let (sigma_a, sigma_b, sigma) = (draw[2].exp(), draw[3].exp(), draw[4].exp());
        let mut extra = Vec::with_capacity(3 + 2 * j);
        extra.push(sigma_a);
        extra.push(sigma_b);
        extra.push(sigma);
        extra.extend((0..j).map(|k| draw[0] + sigma_a * draw[5 + k]));
        extra.extend((0..j).map(|k| draw[1] + sigma_b * draw[5 + j + k]));
        extra
    });

    let a = (0..j).map(|k| column_mean(&samples, &format!("a[{k}]"))).collect();
    let b = (0..j).map(|k| column_mean(&samples, &format!("b[{k}]"))).collect();
    let point_estimates = PointEstimates::Hierarchical {
        mu_a: column_mean(&samples, "mu_a"),
        mu_b: column_mean(&samples, "mu_b"),
        sigma_a: column_mean(&samples, "sigma_a"),
        sigma_b: column_mean(&samples, "sigma_b"),
        sigma: column_mean(&samples, "sigma"),
        a,
        b,
    };
    Ok(finish(ModelKind::PartialPool, corpus.projects().to_vec(), samples, point_estimates, Vec::new()))
}

fn fit_unpooled(corpus: &Corpus, config: &SamplerConfig) -> Result<FitResult> {
    let n_projects = corpus.n_projects();
    let spec = ModelSpec::new(ModelKind::Unpooled, 1)?;

    // Independent 3-parameter fits, one per project, each with its own
    // seed block so chains never collide across projects.
    let runs: Result<Vec<(PosteriorSamples, bool)>> = (0..n_projects)
        .into_par_iter()
        .map(|j| {
            let data = RegressionData::project_slice(corpus, j);
            let constant_x = data.x.iter().all(|&x| x == data.x[0]);
            let sub_config = SamplerConfig {
                seed: config.seed.wrapping_add((j as u64 + 1) * 1_000),
                ..config.clone()
            };
            let target = ModelPosterior::new(&spec, &data)?;
            let raw = sample(&target, &sub_config)?;
            Ok((raw.augment(vec!["sigma".into()], |draw| vec![draw[2].exp()]), constant_x))
        })
        .collect();
    let runs = runs?;

    // Merge per-project runs into one column set.
    let chains = config.chains;
    let kept = config.kept_draws();
    let mut param_names = Vec::with_capacity(4 * n_projects);
    for j in 0..n_projects {
        param_names.push(format!("alpha[{j}]"));
        param_names.push(format!("beta[{j}]"));
        param_names.push(format!("log_sigma[{j}]"));
        param_names.push(format!("sigma[{j}]"));
    }
    let mut draws = vec![vec![Vec::with_capacity(4 * n_projects); kept]; chains];
    for (run, _) in &runs {
        for (c, chain) in run.draws.iter().enumerate() {
            for (d, draw) in chain.iter().enumerate() {
                draws[c][d].extend_from_slice(draw);
            }
        }
    }
    let accept_rate = (0..chains)
        .map(|c| runs.iter().map(|(r, _)| r.accept_rate[c]).sum::<f64>() / n_projects as f64)
        .collect();
    let divergences = (0..chains).map(|c| runs.iter().map(|(r, _)| r.divergences[c]).sum()).collect();
    let warmup_divergences = (0..chains).map(|c| runs.iter().map(|(r, _)| r.warmup_divergences[c]).sum()).collect();
    let step_size = (0..chains)
        .map(|c| runs.iter().map(|(r, _)| r.step_size[c]).sum::<f64>() / n_projects as f64)
        .collect();
    let samples = PosteriorSamples {
        param_names,
        draws,
        accept_rate,
        divergences,
        warmup_divergences,
        step_size,
        config: config.clone(),
    };

    let a = (0..n_projects).map(|k| column_mean(&samples, &format!("alpha[{k}]"))).collect();
    let b = (0..n_projects).map(|k| column_mean(&samples, &format!("beta[{k}]"))).collect();
    let sigma = (0..n_projects).map(|k| column_mean(&samples, &format!("sigma[{k}]"))).collect();
    let unidentified: Vec<String> = runs
        .iter()
        .enumerate()
        .filter(|(_, (_, constant_x))| *constant_x)
        .map(|(j, _)| corpus.projects()[j].clone())
        .collect();
    let point_estimates = PointEstimates::PerProject { a, b, sigma };
    Ok(finish(ModelKind::Unpooled, corpus.projects().to_vec(), samples, point_estimates, unidentified))
}

/// Predicted mean response for a project at role indicator `x`.
///
/// The full-pool model uses the global line for any project; per-project
/// models reject unknown projects.
pub fn predict(fit: &FitResult, project: &str, x: f64) -> Result<f64> {
    match &fit.point_estimates {
        PointEstimates::Global { alpha, beta, .. } => Ok(alpha + beta * x),
        PointEstimates::PerProject { a, b, .. } | PointEstimates::Hierarchical { a, b, .. } => {
            let j = fit
                .project_index(project)
                .ok_or_else(|| Error::UnknownProject(project.to_string()))?;
            Ok(a[j] + b[j] * x)
        }
    }
}

/// RMSE aggregation settings.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct RmseOptions {
    /// Pool squared errors over files instead of averaging per-project RMSEs.
    pub weighted: bool,
    /// Compute errors on the raw count scale, `exp(pred) - 1` against cbo.
    pub raw_space: bool,
}

/// One model's row in the comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct RmseRow {
    pub model: ModelKind,
    pub mean_rmse: f64,
    pub per_project: BTreeMap<String, f64>,
    /// Wall-clock fit time; excluded from serialized output so reruns are
    /// byte-identical (the CLI stores timings in the run manifest).
    #[serde(skip_serializing)]
    pub seconds: f64,
}

/// RMSE comparison across the three models.
#[derive(Debug, Clone, Serialize)]
pub struct RmseTable {
    pub space: String,
    pub weighted: bool,
    pub rows: Vec<RmseRow>,
}

impl RmseTable {
    pub fn row(&self, kind: ModelKind) -> &RmseRow {
        self.rows.iter().find(|r| r.model == kind).expect("all three models present")
    }
}

/// Per-project RMSE of a fit over the corpus it was trained on.
pub fn rmse_for_fit(fit: &FitResult, corpus: &Corpus, opts: RmseOptions) -> Result<(f64, BTreeMap<String, f64>)> {
    let n_projects = corpus.n_projects();
    let mut sq_sum = vec![0.0; n_projects];
    let mut count = vec![0usize; n_projects];
    for (r, &j) in corpus.records().iter().zip(corpus.project_of()) {
        let pred = predict(fit, &r.project, r.x())?;
        let err = if opts.raw_space {
            (pred.exp() - 1.0) - f64::from(r.cbo)
        } else {
            pred - r.lcbo()
        };
        sq_sum[j] += err * err;
        count[j] += 1;
    }
    let mut per_project = BTreeMap::new();
    for j in 0..n_projects {
        per_project.insert(corpus.projects()[j].clone(), (sq_sum[j] / count[j] as f64).sqrt());
    }
    let mean = if opts.weighted {
        let total: usize = count.iter().sum();
        (sq_sum.iter().sum::<f64>() / total as f64).sqrt()
    } else {
        per_project.values().sum::<f64>() / n_projects as f64
    };
    Ok((mean, per_project))
}

/// Fits all three models and tabulates per-project RMSE for each.
pub fn rmse_compare(corpus: &Corpus, config: &SamplerConfig) -> Result<RmseTable> {
    rmse_compare_with(corpus, config, RmseOptions::default())
}

pub fn rmse_compare_with(corpus: &Corpus, config: &SamplerConfig, opts: RmseOptions) -> Result<RmseTable> {
    if corpus.n_projects() < 1 {
        return Err(Error::EmptySample);
    }
    let mut rows = Vec::with_capacity(3);
    for kind in [ModelKind::FullPool, ModelKind::Unpooled, ModelKind::PartialPool] {
        let start = Instant::now();
        let fitted = fit(kind, corpus, config)?;
        let seconds = start.elapsed().as_secs_f64();
        let (mean_rmse, per_project) = rmse_for_fit(&fitted, corpus, opts)?;
        rows.push(RmseRow { model: kind, mean_rmse, per_project, seconds });
    }
    Ok(RmseTable {
        space: if opts.raw_space { "cbo".into() } else { "lcbo".into() },
        weighted: opts.weighted,
        rows,
    })
}

/// Closed-form pooled least squares, the oracle for the full-pool model.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OlsFit {
    pub alpha: f64,
    pub beta: f64,
    /// Pooled in-sample RMSE of the least-squares line.
    pub rmse: f64,
}

pub fn ols_crosscheck(corpus: &Corpus) -> Result<OlsFit> {
    let data = RegressionData::from_corpus(corpus);
    let n = data.len() as f64;
    let mean_x = data.x.iter().sum::<f64>() / n;
    let mean_y = data.y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in data.x.iter().zip(&data.y) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateDesign("role indicator is constant; slope is not estimable".into()));
    }
    let beta = sxy / sxx;
    let alpha = mean_y - beta * mean_x;
    let ssq: f64 = data.x.iter().zip(&data.y).map(|(x, y)| (y - alpha - beta * x).powi(2)).sum();
    Ok(OlsFit { alpha, beta, rmse: (ssq / n).sqrt() })
}
