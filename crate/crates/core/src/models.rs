//! Log-posteriors and analytic gradients for the three regression models.
//!
//! All parameter vectors are unconstrained: scale parameters are carried as
//! logs (with the change-of-variables Jacobian folded into the prior term),
//! and the hierarchy is non-centered, `a_j = mu_a + sigma_a * a_raw_j` with
//! `a_raw_j ~ N(0, 1)`, which keeps the funnel away from the sampler.
//!
//! Priors: location parameters ~ N(0, 100), scale parameters ~ HalfNormal(5)
//! on the natural scale, non-centered deviates ~ N(0, 1).
//!
//! Layouts:
//! - full pool / unpooled slice: `[alpha, beta, log_sigma]`
//! - partial pool: `[mu_a, mu_b, log_sigma_a, log_sigma_b, log_sigma,
//!   a_raw[0..J], b_raw[0..J]]`

use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::sampler::LogDensity;

const LN_2PI: f64 = 1.837877066409345483560659472811;
const LN_2: f64 = std::f64::consts::LN_2;

/// Which of the three regression models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    FullPool,
    Unpooled,
    PartialPool,
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::FullPool => "full_pool",
            ModelKind::Unpooled => "unpooled",
            ModelKind::PartialPool => "partial_pool",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Model family plus prior scales.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Number of projects J in the data the model will see. An unpooled
    /// spec always describes a single project's slice (J = 1).
    pub n_projects: usize,
    /// Prior sd for location parameters (alpha, beta, mu_a, mu_b).
    pub prior_loc_scale: f64,
    /// HalfNormal prior scale for sigma-type parameters.
    pub prior_sigma_scale: f64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, n_projects: usize) -> Result<Self> {
        let spec = Self { kind, n_projects, prior_loc_scale: 100.0, prior_sigma_scale: 5.0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_projects < 1 {
            return Err(Error::InvalidConfig("model needs at least one project".into()));
        }
        if !(self.prior_loc_scale > 0.0) || !(self.prior_sigma_scale > 0.0) {
            return Err(Error::InvalidConfig("prior scales must be positive".into()));
        }
        if self.kind == ModelKind::Unpooled && self.n_projects != 1 {
            return Err(Error::InvalidConfig("an unpooled spec covers a single project slice".into()));
        }
        Ok(())
    }

    /// Length of the unconstrained parameter vector.
    pub fn dim(&self) -> usize {
        match self.kind {
            ModelKind::FullPool | ModelKind::Unpooled => 3,
            ModelKind::PartialPool => 5 + 2 * self.n_projects,
        }
    }

    /// Names for each slot of the parameter vector.
    pub fn param_names(&self) -> Vec<String> {
        match self.kind {
            ModelKind::FullPool | ModelKind::Unpooled => {
                vec!["alpha".into(), "beta".into(), "log_sigma".into()]
            }
            ModelKind::PartialPool => {
                let mut names = vec![
                    "mu_a".into(),
                    "mu_b".into(),
                    "log_sigma_a".into(),
                    "log_sigma_b".into(),
                    "log_sigma".into(),
                ];
                names.extend((0..self.n_projects).map(|j| format!("a_raw[{j}]")));
                names.extend((0..self.n_projects).map(|j| format!("b_raw[{j}]")));
                names
            }
        }
    }
}

/// The observations a model conditions on: predictor, response, and the
/// project index of every record.
#[derive(Debug, Clone)]
pub struct RegressionData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub project: Vec<usize>,
    pub n_projects: usize,
}

impl RegressionData {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        Self {
            x: corpus.records().iter().map(|r| r.x()).collect(),
            y: corpus.lcbo().to_vec(),
            project: corpus.project_of().to_vec(),
            n_projects: corpus.n_projects(),
        }
    }

    /// A single project's records, re-indexed as project 0.
    pub fn project_slice(corpus: &Corpus, j: usize) -> Self {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (i, &g) in corpus.project_of().iter().enumerate() {
            if g == j {
                x.push(corpus.records()[i].x());
                y.push(corpus.lcbo()[i]);
            }
        }
        let n = x.len();
        Self { x, y, project: vec![0; n], n_projects: 1 }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Natural-scale parameters recovered from an unconstrained vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum NaturalParams {
    /// Full-pool or single-project unpooled line.
    Line { alpha: f64, beta: f64, sigma: f64 },
    /// Partial-pool hyperparameters and expanded per-project coefficients.
    Hierarchy {
        mu_a: f64,
        mu_b: f64,
        sigma_a: f64,
        sigma_b: f64,
        sigma: f64,
        a: Vec<f64>,
        b: Vec<f64>,
    },
}

/// Log prior + log likelihood + log-Jacobian of the log-sigma transforms.
pub fn log_posterior(spec: &ModelSpec, theta: &[f64], data: &RegressionData) -> Result<f64> {
    check_inputs(spec, theta, data)?;
    Ok(log_posterior_unchecked(spec, theta, data))
}

/// Likelihood term alone, on the same unconstrained vector.
pub fn log_likelihood(spec: &ModelSpec, theta: &[f64], data: &RegressionData) -> Result<f64> {
    check_inputs(spec, theta, data)?;
    Ok(match spec.kind {
        ModelKind::FullPool | ModelKind::Unpooled => line_log_likelihood(theta, data),
        ModelKind::PartialPool => hierarchy_log_likelihood(spec, theta, data),
    })
}

/// Analytic gradient of `log_posterior` with respect to every slot.
pub fn grad_log_posterior(spec: &ModelSpec, theta: &[f64], data: &RegressionData) -> Result<Vec<f64>> {
    check_inputs(spec, theta, data)?;
    let mut grad = vec![0.0; theta.len()];
    grad_unchecked(spec, theta, data, &mut grad);
    Ok(grad)
}

/// Expands an unconstrained vector to natural-scale named parameters.
pub fn unpack(spec: &ModelSpec, theta: &[f64]) -> Result<NaturalParams> {
    check_theta(spec, theta)?;
    Ok(match spec.kind {
        ModelKind::FullPool | ModelKind::Unpooled => NaturalParams::Line {
            alpha: theta[0],
            beta: theta[1],
            sigma: theta[2].exp(),
        },
        ModelKind::PartialPool => {
            let j = spec.n_projects;
            let sigma_a = theta[2].exp();
            let sigma_b = theta[3].exp();
            let a = (0..j).map(|k| theta[0] + sigma_a * theta[5 + k]).collect();
            let b = (0..j).map(|k| theta[1] + sigma_b * theta[5 + j + k]).collect();
            NaturalParams::Hierarchy {
                mu_a: theta[0],
                mu_b: theta[1],
                sigma_a,
                sigma_b,
                sigma: theta[4].exp(),
                a,
                b,
            }
        }
    })
}

/// Inverse of [`unpack`]; sigma values must be strictly positive.
pub fn pack(spec: &ModelSpec, params: &NaturalParams) -> Result<Vec<f64>> {
    match (spec.kind, params) {
        (ModelKind::FullPool | ModelKind::Unpooled, NaturalParams::Line { alpha, beta, sigma }) => {
            if !(*sigma > 0.0) {
                return Err(Error::Domain("sigma must be positive to pack".into()));
            }
            Ok(vec![*alpha, *beta, sigma.ln()])
        }
        (ModelKind::PartialPool, NaturalParams::Hierarchy { mu_a, mu_b, sigma_a, sigma_b, sigma, a, b }) => {
            if a.len() != spec.n_projects || b.len() != spec.n_projects {
                return Err(Error::DimensionMismatch { got: a.len(), want: spec.n_projects });
            }
            if !(*sigma_a > 0.0 && *sigma_b > 0.0 && *sigma > 0.0) {
                return Err(Error::Domain("sigma must be positive to pack".into()));
            }
            let mut theta = vec![*mu_a, *mu_b, sigma_a.ln(), sigma_b.ln(), sigma.ln()];
            theta.extend(a.iter().map(|aj| (aj - mu_a) / sigma_a));
            theta.extend(b.iter().map(|bj| (bj - mu_b) / sigma_b));
            Ok(theta)
        }
        _ => Err(Error::Domain("natural parameters do not match the model kind".into())),
    }
}

/// A model bound to its data, ready for the sampler.
#[derive(Debug, Clone, Copy)]
pub struct ModelPosterior<'a> {
    spec: &'a ModelSpec,
    data: &'a RegressionData,
}

impl<'a> ModelPosterior<'a> {
    pub fn new(spec: &'a ModelSpec, data: &'a RegressionData) -> Result<Self> {
        spec.validate()?;
        if data.is_empty() {
            return Err(Error::EmptySample);
        }
        if spec.kind == ModelKind::PartialPool && data.n_projects != spec.n_projects {
            return Err(Error::InvalidConfig(format!(
                "model expects {} projects, data has {}",
                spec.n_projects, data.n_projects
            )));
        }
        Ok(Self { spec, data })
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }
}

impl LogDensity for ModelPosterior<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        log_posterior_unchecked(self.spec, theta, self.data)
    }

    fn grad(&self, theta: &[f64], out: &mut [f64]) {
        grad_unchecked(self.spec, theta, self.data, out);
    }

    fn param_names(&self) -> Vec<String> {
        self.spec.param_names()
    }
}

fn check_theta(spec: &ModelSpec, theta: &[f64]) -> Result<()> {
    if theta.len() != spec.dim() {
        return Err(Error::DimensionMismatch { got: theta.len(), want: spec.dim() });
    }
    if let Some(k) = theta.iter().position(|v| v.is_nan()) {
        return Err(Error::NonFiniteParam(k));
    }
    Ok(())
}

fn check_inputs(spec: &ModelSpec, theta: &[f64], data: &RegressionData) -> Result<()> {
    spec.validate()?;
    check_theta(spec, theta)?;
    if data.is_empty() {
        return Err(Error::EmptySample);
    }
    match spec.kind {
        ModelKind::Unpooled => {
            if data.n_projects != 1 {
                return Err(Error::InvalidConfig("unpooled model takes a single project's slice".into()));
            }
        }
        ModelKind::PartialPool => {
            if data.n_projects != spec.n_projects {
                return Err(Error::InvalidConfig(format!(
                    "model expects {} projects, data has {}",
                    spec.n_projects, data.n_projects
                )));
            }
        }
        ModelKind::FullPool => {}
    }
    Ok(())
}

fn ln_normal(x: f64, sd: f64) -> f64 {
    -0.5 * LN_2PI - sd.ln() - x * x / (2.0 * sd * sd)
}

/// HalfNormal(scale) log density at v >= 0, without the transform Jacobian.
fn ln_half_normal(v: f64, scale: f64) -> f64 {
    LN_2 - scale.ln() - 0.5 * LN_2PI - v * v / (2.0 * scale * scale)
}

fn log_posterior_unchecked(spec: &ModelSpec, theta: &[f64], data: &RegressionData) -> f64 {
    match spec.kind {
        ModelKind::FullPool | ModelKind::Unpooled => {
            let (alpha, beta, t) = (theta[0], theta[1], theta[2]);
            let sigma = t.exp();
            if !sigma.is_finite() || sigma <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let prior = ln_normal(alpha, spec.prior_loc_scale)
                + ln_normal(beta, spec.prior_loc_scale)
                + ln_half_normal(sigma, spec.prior_sigma_scale)
                + t;
            prior + line_log_likelihood(theta, data)
        }
        ModelKind::PartialPool => {
            let j = spec.n_projects;
            let (mu_a, mu_b, t_a, t_b, t) = (theta[0], theta[1], theta[2], theta[3], theta[4]);
            let (sigma_a, sigma_b, sigma) = (t_a.exp(), t_b.exp(), t.exp());
            if ![sigma_a, sigma_b, sigma].iter().all(|s| s.is_finite() && *s > 0.0) {
                return f64::NEG_INFINITY;
            }
            let mut prior = ln_normal(mu_a, spec.prior_loc_scale)
                + ln_normal(mu_b, spec.prior_loc_scale)
                + ln_half_normal(sigma_a, spec.prior_sigma_scale)
                + ln_half_normal(sigma_b, spec.prior_sigma_scale)
                + ln_half_normal(sigma, spec.prior_sigma_scale)
                + t_a
                + t_b
                + t;
            for raw in &theta[5..5 + 2 * j] {
                prior += ln_normal(*raw, 1.0);
            }
            prior + hierarchy_log_likelihood(spec, theta, data)
        }
    }
}

fn line_log_likelihood(theta: &[f64], data: &RegressionData) -> f64 {
    let (alpha, beta, t) = (theta[0], theta[1], theta[2]);
    let sigma = t.exp();
    if !sigma.is_finite() || sigma <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let n = data.len() as f64;
    let mut ssq = 0.0;
    for (x, y) in data.x.iter().zip(&data.y) {
        let r = y - alpha - beta * x;
        ssq += r * r;
    }
    -0.5 * n * LN_2PI - n * t - ssq / (2.0 * sigma * sigma)
}

fn hierarchy_log_likelihood(spec: &ModelSpec, theta: &[f64], data: &RegressionData) -> f64 {
    let j = spec.n_projects;
    let (mu_a, mu_b, t) = (theta[0], theta[1], theta[4]);
    let (sigma_a, sigma_b, sigma) = (theta[2].exp(), theta[3].exp(), t.exp());
    if !sigma.is_finite() || sigma <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let a_raw = &theta[5..5 + j];
    let b_raw = &theta[5 + j..5 + 2 * j];
    let n = data.len() as f64;
    let mut ssq = 0.0;
    for ((x, y), &g) in data.x.iter().zip(&data.y).zip(&data.project) {
        let a = mu_a + sigma_a * a_raw[g];
        let b = mu_b + sigma_b * b_raw[g];
        let r = y - a - b * x;
        ssq += r * r;
    }
    -0.5 * n * LN_2PI - n * t - ssq / (2.0 * sigma * sigma)
}

fn grad_unchecked(spec: &ModelSpec, theta: &[f64], data: &RegressionData, grad: &mut [f64]) {
    let loc2 = spec.prior_loc_scale * spec.prior_loc_scale;
    let scale2 = spec.prior_sigma_scale * spec.prior_sigma_scale;
    match spec.kind {
        ModelKind::FullPool | ModelKind::Unpooled => {
            let (alpha, beta, t) = (theta[0], theta[1], theta[2]);
            let sigma = t.exp();
            let inv_s2 = 1.0 / (sigma * sigma);
            let n = data.len() as f64;
            let mut sum_r = 0.0;
            let mut sum_rx = 0.0;
            let mut ssq = 0.0;
            for (x, y) in data.x.iter().zip(&data.y) {
                let r = y - alpha - beta * x;
                sum_r += r;
                sum_rx += r * x;
                ssq += r * r;
            }
            grad[0] = -alpha / loc2 + sum_r * inv_s2;
            grad[1] = -beta / loc2 + sum_rx * inv_s2;
            grad[2] = 1.0 - sigma * sigma / scale2 - n + ssq * inv_s2;
        }
        ModelKind::PartialPool => {
            let j = spec.n_projects;
            let (mu_a, mu_b) = (theta[0], theta[1]);
            let (sigma_a, sigma_b, sigma) = (theta[2].exp(), theta[3].exp(), theta[4].exp());
            let inv_s2 = 1.0 / (sigma * sigma);
            let a_raw = &theta[5..5 + j];
            let b_raw = &theta[5 + j..5 + 2 * j];
            let n = data.len() as f64;

            // Per-project residual sums: S_j = sum r, T_j = sum r*x.
            let mut s = vec![0.0; j];
            let mut t_sum = vec![0.0; j];
            let mut ssq = 0.0;
            for ((x, y), &g) in data.x.iter().zip(&data.y).zip(&data.project) {
                let a = mu_a + sigma_a * a_raw[g];
                let b = mu_b + sigma_b * b_raw[g];
                let r = y - a - b * x;
                s[g] += r;
                t_sum[g] += r * x;
                ssq += r * r;
            }
            let total_s: f64 = s.iter().sum();
            let total_t: f64 = t_sum.iter().sum();
            let weighted_s: f64 = s.iter().zip(a_raw).map(|(sj, raw)| sj * raw).sum();
            let weighted_t: f64 = t_sum.iter().zip(b_raw).map(|(tj, raw)| tj * raw).sum();

            grad[0] = -mu_a / loc2 + total_s * inv_s2;
            grad[1] = -mu_b / loc2 + total_t * inv_s2;
            grad[2] = 1.0 - sigma_a * sigma_a / scale2 + sigma_a * weighted_s * inv_s2;
            grad[3] = 1.0 - sigma_b * sigma_b / scale2 + sigma_b * weighted_t * inv_s2;
            grad[4] = 1.0 - sigma * sigma / scale2 - n + ssq * inv_s2;
            for k in 0..j {
                grad[5 + k] = -a_raw[k] + sigma_a * s[k] * inv_s2;
                grad[5 + j + k] = -b_raw[k] + sigma_b * t_sum[k] * inv_s2;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn single_point_data() -> RegressionData {
        RegressionData { x: vec![0.0], y: vec![0.0], project: vec![0], n_projects: 1 }
    }

    fn random_data(rng: &mut ChaCha8Rng, n: usize, n_projects: usize) -> RegressionData {
        let x: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let y: Vec<f64> = (0..n).map(|_| 1.0 + rng.random_range(-2.0..2.0)).collect();
        // Round-robin assignment guarantees every project is non-empty.
        let project: Vec<usize> = (0..n).map(|i| i % n_projects).collect();
        RegressionData { x, y, project, n_projects }
    }

    fn random_theta(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    /// Independent straight-sum evaluation sharing no code with the
    /// implementation: every density term written out inline.
    fn oracle_log_posterior(spec: &ModelSpec, theta: &[f64], data: &RegressionData) -> f64 {
        let tau = std::f64::consts::TAU;
        let norm = |x: f64, mu: f64, sd: f64| -> f64 { (-((x - mu) / sd).powi(2) / 2.0).exp() / (sd * tau.sqrt()) };
        let half_norm = |v: f64, s: f64| -> f64 { 2.0 * norm(v, 0.0, s) };
        match spec.kind {
            ModelKind::FullPool | ModelKind::Unpooled => {
                let sigma = theta[2].exp();
                let mut lp = norm(theta[0], 0.0, spec.prior_loc_scale).ln()
                    + norm(theta[1], 0.0, spec.prior_loc_scale).ln()
                    + half_norm(sigma, spec.prior_sigma_scale).ln()
                    + theta[2];
                for i in 0..data.y.len() {
                    lp += norm(data.y[i], theta[0] + theta[1] * data.x[i], sigma).ln();
                }
                lp
            }
            ModelKind::PartialPool => {
                let j = spec.n_projects;
                let (sigma_a, sigma_b, sigma) = (theta[2].exp(), theta[3].exp(), theta[4].exp());
                let mut lp = norm(theta[0], 0.0, spec.prior_loc_scale).ln()
                    + norm(theta[1], 0.0, spec.prior_loc_scale).ln()
                    + half_norm(sigma_a, spec.prior_sigma_scale).ln()
                    + half_norm(sigma_b, spec.prior_sigma_scale).ln()
                    + half_norm(sigma, spec.prior_sigma_scale).ln()
                    + theta[2]
                    + theta[3]
                    + theta[4];
                for k in 0..2 * j {
                    lp += norm(theta[5 + k], 0.0, 1.0).ln();
                }
                for i in 0..data.y.len() {
                    let g = data.project[i];
                    let a = theta[0] + sigma_a * theta[5 + g];
                    let b = theta[1] + sigma_b * theta[5 + j + g];
                    lp += norm(data.y[i], a + b * data.x[i], sigma).ln();
                }
                lp
            }
        }
    }

    fn finite_difference(spec: &ModelSpec, theta: &[f64], data: &RegressionData, h: f64) -> Vec<f64> {
        (0..theta.len())
            .map(|k| {
                let mut plus = theta.to_vec();
                let mut minus = theta.to_vec();
                plus[k] += h;
                minus[k] -= h;
                let fp = log_posterior(spec, &plus, data).unwrap();
                let fm = log_posterior(spec, &minus, data).unwrap();
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn full_pool_single_point_closed_form() {
        let spec = ModelSpec::new(ModelKind::FullPool, 1).unwrap();
        let theta = [0.0, 0.0, 0.0];
        let data = single_point_data();
        let lp = log_posterior(&spec, &theta, &data).unwrap();
        // Hand-computed: N(0|0,1) likelihood + two N(0|0,100) priors
        // + HalfNormal(1|5) + zero Jacobian.
        let ln_n_0_100 = -0.5 * LN_2PI - 100.0_f64.ln();
        let ln_hn_1_5 = LN_2 - 5.0_f64.ln() - 0.5 * LN_2PI - 1.0 / 50.0;
        let expected = -0.5 * LN_2PI + 2.0 * ln_n_0_100 + ln_hn_1_5;
        assert!((lp - expected).abs() < 1e-12, "{lp} vs {expected}");
    }

    #[test]
    fn full_pool_single_point_hand_gradient() {
        let spec = ModelSpec::new(ModelKind::FullPool, 1).unwrap();
        let grad = grad_log_posterior(&spec, &[0.0, 0.0, 0.0], &single_point_data()).unwrap();
        // d/d alpha = 0, d/d beta = 0, d/d log sigma = 1 - 1/25 + (0 - 1).
        assert!((grad[0] - 0.0).abs() < 1e-15);
        assert!((grad[1] - 0.0).abs() < 1e-15);
        assert!((grad[2] - (-1.0 / 25.0)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_hierarchy_collapses_to_pooled_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = random_data(&mut rng, 40, 3);
        let pooled_data = RegressionData { project: vec![0; 40], n_projects: 1, ..data.clone() };

        let pp = ModelSpec::new(ModelKind::PartialPool, 3).unwrap();
        let fp = ModelSpec::new(ModelKind::FullPool, 1).unwrap();
        let (alpha, beta, log_sigma) = (0.8, -0.3, 0.2);
        let mut theta_pp = vec![alpha, beta, -1.0, -2.0, log_sigma];
        theta_pp.extend(std::iter::repeat(0.0).take(6));

        let ll_pp = log_likelihood(&pp, &theta_pp, &data).unwrap();
        let ll_fp = log_likelihood(&fp, &[alpha, beta, log_sigma], &pooled_data).unwrap();
        assert!((ll_pp - ll_fp).abs() < 1e-12);
    }

    #[test]
    fn matches_independent_straight_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for kind in [ModelKind::FullPool, ModelKind::Unpooled, ModelKind::PartialPool] {
            for _ in 0..20 {
                let n_projects = if kind == ModelKind::PartialPool { rng.random_range(1..5) } else { 1 };
                let spec = ModelSpec::new(kind, n_projects).unwrap();
                let data = random_data(&mut rng, 50, n_projects);
                let theta = random_theta(&mut rng, spec.dim());
                let got = log_posterior(&spec, &theta, &data).unwrap();
                let want = oracle_log_posterior(&spec, &theta, &data);
                assert!((got - want).abs() < 1e-10, "{kind:?}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in [ModelKind::FullPool, ModelKind::Unpooled, ModelKind::PartialPool] {
            for _ in 0..10 {
                let n_projects = if kind == ModelKind::PartialPool { rng.random_range(1..4) } else { 1 };
                let spec = ModelSpec::new(kind, n_projects).unwrap();
                let data = random_data(&mut rng, 30, n_projects);
                let theta = random_theta(&mut rng, spec.dim());
                let analytic = grad_log_posterior(&spec, &theta, &data).unwrap();
                let numeric = finite_difference(&spec, &theta, &data, 1e-5);
                for (k, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
                    let rel = (a - n).abs() / a.abs().max(1.0);
                    assert!(rel < 1e-6, "{kind:?} component {k}: analytic {a}, numeric {n}");
                }
            }
        }
    }

    #[test]
    fn empty_project_gradient_is_prior_only() {
        // Project 2 has no records, so its deviate slots feel only N(0,1).
        let spec = ModelSpec::new(ModelKind::PartialPool, 3).unwrap();
        let data = RegressionData {
            x: vec![0.0, 1.0, 0.0],
            y: vec![0.5, 1.5, 0.2],
            project: vec![0, 0, 1],
            n_projects: 3,
        };
        let mut theta = vec![0.3, 0.1, -0.5, -0.5, -0.2];
        theta.extend([0.4, -0.7, 1.3, 0.2, 0.6, -0.9]);
        let grad = grad_log_posterior(&spec, &theta, &data).unwrap();
        assert_eq!(grad[5 + 2], -theta[5 + 2]);
        assert_eq!(grad[5 + 3 + 2], -theta[5 + 3 + 2]);
    }

    #[test]
    fn directional_derivative_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let spec = ModelSpec::new(ModelKind::PartialPool, 2).unwrap();
        let data = random_data(&mut rng, 40, 2);
        let theta = random_theta(&mut rng, spec.dim());
        let grad = grad_log_posterior(&spec, &theta, &data).unwrap();
        let h = 1e-6;
        for _ in 0..100 {
            let mut dir: Vec<f64> = (0..spec.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|v| *v /= norm);
            let plus: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + h * d).collect();
            let minus: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t - h * d).collect();
            let fd = (log_posterior(&spec, &plus, &data).unwrap() - log_posterior(&spec, &minus, &data).unwrap()) / (2.0 * h);
            let inner: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
            let rel = (fd - inner).abs() / inner.abs().max(1.0);
            assert!(rel < 1e-5, "directional fd {fd} vs inner {inner}");
        }
    }

    #[test]
    fn posterior_is_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [ModelKind::FullPool, ModelKind::PartialPool] {
            let n_projects = if kind == ModelKind::PartialPool { 2 } else { 1 };
            let spec = ModelSpec::new(kind, n_projects).unwrap();
            let data = random_data(&mut rng, 25, n_projects);
            let reference = log_posterior(&spec, &vec![0.1; spec.dim()], &data).unwrap();
            for _ in 0..10 {
                let mut far: Vec<f64> = (0..spec.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm: f64 = far.iter().map(|v| v * v).sum::<f64>().sqrt();
                far.iter_mut().for_each(|v| *v *= 1e6 / norm);
                let lp = log_posterior(&spec, &far, &data).unwrap();
                assert!(lp < reference, "{kind:?}: lp at 1e6 radius {lp} not below {reference}");
            }
        }
    }

    #[test]
    fn unpack_examples() {
        let spec = ModelSpec::new(ModelKind::PartialPool, 4).unwrap();
        let mut theta = vec![2.0, 0.0, 0.5_f64.ln(), 0.0, 0.0];
        theta.extend([0.0, 0.0, 0.0, 2.0]);
        theta.extend([0.0, 0.0, 0.0, 0.0]);
        match unpack(&spec, &theta).unwrap() {
            NaturalParams::Hierarchy { a, .. } => assert!((a[3] - 3.0).abs() < 1e-15),
            _ => panic!("wrong variant"),
        }

        let spec = ModelSpec::new(ModelKind::FullPool, 1).unwrap();
        match unpack(&spec, &[1.0, -1.0, 0.0]).unwrap() {
            NaturalParams::Line { alpha, beta, sigma } => {
                assert_eq!(alpha, 1.0);
                assert_eq!(beta, -1.0);
                assert_eq!(sigma, 1.0);
            }
            _ => panic!("wrong variant"),
        }
    }

    #[test]
    fn length_and_nan_are_rejected() {
        let spec = ModelSpec::new(ModelKind::FullPool, 1).unwrap();
        let data = single_point_data();
        assert!(matches!(
            log_posterior(&spec, &[0.0, 0.0], &data),
            Err(Error::DimensionMismatch { got: 2, want: 3 })
        ));
        assert!(matches!(
            log_posterior(&spec, &[0.0, f64::NAN, 0.0], &data),
            Err(Error::NonFiniteParam(1))
        ));
        assert!(matches!(
            grad_log_posterior(&spec, &[0.0, 0.0], &data),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn non_centered_profile_matches_centered_grid() {
        // J = 2, hyperparameters held fixed; maximizing over the deviates must
        // land on the same per-project coefficients as a centered grid search.
        let data = RegressionData {
            x: vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0],
            y: vec![1.0, 1.2, 2.1, 0.4, 1.1, 1.3],
            project: vec![0, 0, 0, 1, 1, 1],
            n_projects: 2,
        };
        let spec = ModelSpec::new(ModelKind::PartialPool, 2).unwrap();
        let (mu_a, mu_b, sigma_a, sigma_b, sigma) = (1.0_f64, 0.5_f64, 0.8_f64, 0.6_f64, 0.5_f64);

        let grid: Vec<f64> = (-300..=300).map(|i| i as f64 * 0.01).collect();

        for j in 0..2 {
            // Non-centered: profile over a_raw[j], everything else at zero.
            let mut best_nc = (f64::NEG_INFINITY, 0.0);
            for &raw in &grid {
                let mut theta = vec![mu_a, mu_b, sigma_a.ln(), sigma_b.ln(), sigma.ln(), 0.0, 0.0, 0.0, 0.0];
                theta[5 + j] = raw;
                let lp = log_posterior(&spec, &theta, &data).unwrap();
                if lp > best_nc.0 {
                    best_nc = (lp, mu_a + sigma_a * raw);
                }
            }
            // Centered objective computed directly from the generative story:
            // N(a_j | mu_a, sigma_a) prior plus that project's likelihood.
            let mut best_c = (f64::NEG_INFINITY, 0.0);
            for &aj in grid.iter().map(|g| g * sigma_a + mu_a).collect::<Vec<_>>().iter() {
                let mut lp = ln_normal(aj - mu_a, sigma_a);
                for i in 0..data.y.len() {
                    if data.project[i] == j {
                        lp += ln_normal(data.y[i] - aj - mu_b * data.x[i], sigma);
                    }
                }
                if lp > best_c.0 {
                    best_c = (lp, aj);
                }
            }
            assert!((best_nc.1 - best_c.1).abs() < sigma_a * 0.011, "project {j}: {} vs {}", best_nc.1, best_c.1);
        }
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(
            raw in prop::collection::vec(-2.0..2.0_f64, 9..=9),
        ) {
            let spec = ModelSpec::new(ModelKind::PartialPool, 2).unwrap();
            let theta: Vec<f64> = raw;
            let packed = pack(&spec, &unpack(&spec, &theta).unwrap()).unwrap();
            for (orig, round) in theta.iter().zip(&packed) {
                prop_assert!((orig - round).abs() < 1e-10);
            }
        }

        #[test]
        fn pack_unpack_round_trip_line(theta in prop::collection::vec(-3.0..3.0_f64, 3..=3)) {
            let spec = ModelSpec::new(ModelKind::FullPool, 1).unwrap();
            let packed = pack(&spec, &unpack(&spec, &theta).unwrap()).unwrap();
            for (orig, round) in theta.iter().zip(&packed) {
                prop_assert!((orig - round).abs() < 1e-12);
            }
        }
    }
}
