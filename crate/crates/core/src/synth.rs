//! Synthetic multi-project corpora with known ground truth.
//!
//! Generated metric counts are rounded back to integers and flow through the
//! same ingestion path as real data, so the rounding noise of the
//! log/exp round trip is part of every downstream test.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::Serialize;

use crate::corpus::{Corpus, MetricRecord};
use crate::error::{Error, Result};

/// Ground-truth hyperparameters and corpus shape for generation.
#[derive(Debug, Clone, Serialize)]
pub struct GenSpec {
    pub n_projects: usize,
    /// Project sizes are log-uniform in `[files_min, files_max]`, skewing
    /// small so tiny projects always occur.
    pub files_min: usize,
    pub files_max: usize,
    pub controller_fraction: f64,
    pub mu_a: f64,
    pub sigma_a: f64,
    pub mu_b: f64,
    pub sigma_b: f64,
    pub sigma: f64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_projects < 1 {
            return Err(Error::InvalidConfig("need at least one project".into()));
        }
        if self.files_min < 1 || self.files_min > self.files_max {
            return Err(Error::InvalidConfig("need 1 <= files_min <= files_max".into()));
        }
        if !(self.controller_fraction > 0.0 && self.controller_fraction < 1.0) {
            return Err(Error::InvalidConfig("controller_fraction must lie in (0, 1)".into()));
        }
        if !(self.sigma_a > 0.0 && self.sigma_b > 0.0 && self.sigma > 0.0) {
            return Err(Error::InvalidConfig("generator sigmas must be positive".into()));
        }
        Ok(())
    }
}

/// The per-project coefficients the corpus was generated from.
#[derive(Debug, Clone, Serialize)]
pub struct Truth {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Draws a corpus from the generative story: `a_j ~ N(mu_a, sigma_a)`,
/// `b_j ~ N(mu_b, sigma_b)`, per file `x ~ Bernoulli(fraction)` and
/// `lcbo ~ N(a_j + b_j x, sigma)`, then `cbo = round(exp(lcbo) - 1)`
/// clamped at zero. Deterministic for a fixed seed.
pub fn generate(spec: &GenSpec, seed: u64) -> Result<(Corpus, Truth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size_dist = log_uniform_sizes(spec.files_min, spec.files_max);

    let mut records = Vec::new();
    let mut truth = Truth { a: Vec::with_capacity(spec.n_projects), b: Vec::with_capacity(spec.n_projects) };
    for j in 0..spec.n_projects {
        let a = spec.mu_a + spec.sigma_a * rng.sample::<f64, _>(StandardNormal);
        let b = spec.mu_b + spec.sigma_b * rng.sample::<f64, _>(StandardNormal);
        truth.a.push(a);
        truth.b.push(b);

        let n_files = size_dist(&mut rng);
        let noise = Normal::new(0.0, spec.sigma).expect("validated sigma");
        for i in 0..n_files {
            let controller = rng.random_bool(spec.controller_fraction);
            let x = if controller { 1.0 } else { 0.0 };
            let lcbo = a + b * x + noise.sample(&mut rng);
            let cbo = (lcbo.exp() - 1.0).round().clamp(0.0, f64::from(u32::MAX)) as u32;
            records.push(MetricRecord::new(format!("p{j:04}"), format!("f{i:05}"), controller, cbo)?);
        }
    }
    let corpus = Corpus::from_records(records)?;
    Ok((corpus, truth))
}

fn log_uniform_sizes(min: usize, max: usize) -> impl Fn(&mut ChaCha8Rng) -> usize {
    let lo = (min as f64).ln();
    let hi = (max as f64).ln();
    move |rng| {
        let raw = rng.random_range(lo..=hi).exp().round() as usize;
        raw.clamp(min, max)
    }
}
