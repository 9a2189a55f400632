//! Quantitative convergence checks, replacing eyeballed trace plots.
//!
//! Split R-hat halves every chain before comparing between- and within-half
//! variance, so a single drifting chain cannot hide behind a matching mean.
//! The ESS figure is the cheap lag-1 autocorrelation proxy
//! `n (1 - rho1) / (1 + rho1)` and is labeled as such.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sampler::PosteriorSamples;

/// Convergence threshold on split R-hat.
pub const RHAT_THRESHOLD: f64 = 1.05;

/// Split R-hat value; `degenerate` marks zero within-chain variance, in
/// which case the value is +infinity.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Rhat {
    pub value: f64,
    pub degenerate: bool,
}

/// Per-parameter convergence diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct ParamDiagnostic {
    pub name: String,
    pub split_rhat: f64,
    pub degenerate: bool,
    /// Lag-1 autocorrelation ESS proxy; absent for degenerate chains.
    pub ess_proxy: Option<f64>,
}

/// Whole-fit verdict: converged iff max split R-hat < 1.05 and no
/// post-warmup divergences.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub params: Vec<ParamDiagnostic>,
    pub max_split_rhat: f64,
    pub divergence_count: usize,
    pub converged: bool,
}

/// Per-chain stationarity snapshot for one parameter.
#[derive(Debug, Clone, Serialize)]
pub struct ChainTrace {
    pub chain: usize,
    pub first_half_mean: f64,
    pub second_half_mean: f64,
    /// |first half mean - second half mean| in units of the chain sd.
    pub gap_sd_units: f64,
    pub lag1_autocorr: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamTrace {
    pub name: String,
    pub chains: Vec<ChainTrace>,
}

/// Split R-hat over one parameter's chains.
///
/// Each chain is halved (middle draw dropped when odd), then
/// `sqrt(((n-1)/n * W + B/n) / W)` is computed over the half-chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<Rhat> {
    if chains.is_empty() {
        return Err(Error::EmptySample);
    }
    if chains.iter().any(|c| c.len() < 2) {
        return Err(Error::Domain("split R-hat needs at least 2 draws per chain".into()));
    }
    let half = chains.iter().map(|c| c.len() / 2).min().expect("non-empty");
    let mut halves: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for chain in chains {
        halves.push(&chain[..half]);
        halves.push(&chain[chain.len() - half..]);
    }

    let n = half as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let vars: Vec<f64> = halves.iter().map(|h| sample_var(h)).collect();
    let within = mean(&vars);
    if within == 0.0 || !within.is_finite() || n < 2.0 {
        return Ok(Rhat { value: f64::INFINITY, degenerate: true });
    }
    let between = n * sample_var(&means);
    let value = (((n - 1.0) / n * within + between / n) / within).sqrt();
    Ok(Rhat { value, degenerate: false })
}

/// ESS proxy `n (1 - rho1) / (1 + rho1)` with rho1 averaged over chains.
pub fn ess_proxy(chains: &[Vec<f64>]) -> Option<f64> {
    let mut rhos = Vec::new();
    for chain in chains {
        if let Some(rho) = lag1_autocorr(chain) {
            rhos.push(rho);
        }
    }
    if rhos.is_empty() {
        return None;
    }
    let rho = (mean(&rhos)).clamp(-0.999, 0.999);
    let n: usize = chains.iter().map(Vec::len).sum();
    Some(n as f64 * (1.0 - rho) / (1.0 + rho))
}

/// Diagnostics for every parameter of a sampler run.
pub fn convergence_report(samples: &PosteriorSamples) -> ConvergenceReport {
    let mut params = Vec::with_capacity(samples.n_params());
    let mut max_rhat: f64 = 0.0;
    for p in 0..samples.n_params() {
        let chains = samples.chain_column(p);
        let rhat = split_rhat(&chains).unwrap_or(Rhat { value: f64::INFINITY, degenerate: true });
        max_rhat = max_rhat.max(rhat.value);
        params.push(ParamDiagnostic {
            name: samples.param_names[p].clone(),
            split_rhat: rhat.value,
            degenerate: rhat.degenerate,
            ess_proxy: if rhat.degenerate { None } else { ess_proxy(&chains) },
        });
    }
    let divergence_count = samples.total_divergences();
    ConvergenceReport {
        params,
        max_split_rhat: max_rhat,
        divergence_count,
        converged: max_rhat < RHAT_THRESHOLD && divergence_count == 0,
    }
}

/// Half-means, half-mean gap, and lag-1 autocorrelation per chain.
pub fn trace_summary(samples: &PosteriorSamples) -> Vec<ParamTrace> {
    (0..samples.n_params())
        .map(|p| {
            let chains = samples.chain_column(p);
            let traces = chains
                .iter()
                .enumerate()
                .map(|(c, chain)| {
                    let half = chain.len() / 2;
                    let first = mean(&chain[..half.max(1)]);
                    let second = mean(&chain[chain.len() - half.max(1)..]);
                    let sd = sample_var(chain).sqrt();
                    let degenerate = sd == 0.0;
                    ChainTrace {
                        chain: c,
                        first_half_mean: first,
                        second_half_mean: second,
                        gap_sd_units: if degenerate { 0.0 } else { (first - second).abs() / sd },
                        lag1_autocorr: lag1_autocorr(chain).unwrap_or(0.0),
                        degenerate,
                    }
                })
                .collect();
            ParamTrace { name: samples.param_names[p].clone(), chains: traces }
        })
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_var(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

/// None when the chain is constant.
fn lag1_autocorr(chain: &[f64]) -> Option<f64> {
    if chain.len() < 2 {
        return None;
    }
    let m = mean(chain);
    let denom: f64 = chain.iter().map(|v| (v - m) * (v - m)).sum();
    if denom == 0.0 {
        return None;
    }
    let num: f64 = chain.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    Some(num / denom)
}

#[cfg(test)]
mod tests {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;

    fn normal_chain(seed: u64, n: usize, mean: f64, sd: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn long_iid_chains_have_rhat_near_one() {
        let chains = vec![normal_chain(1, 4000, 0.0, 1.0), normal_chain(2, 4000, 0.0, 1.0)];
        let rhat = split_rhat(&chains).unwrap();
        assert!(!rhat.degenerate);
        assert!(rhat.value > 0.99 && rhat.value < 1.01, "rhat {}", rhat.value);
    }

    #[test]
    fn constant_chains_are_degenerate() {
        let chains = vec![vec![0.0; 50], vec![5.0; 50]];
        let rhat = split_rhat(&chains).unwrap();
        assert!(rhat.degenerate);
        assert!(rhat.value.is_infinite());
    }

    #[test]
    fn separated_chains_blow_up_rhat() {
        let chains = vec![normal_chain(3, 500, 0.0, 1.0), normal_chain(4, 500, 10.0, 1.0)];
        let rhat = split_rhat(&chains).unwrap();
        assert!(rhat.value > 1.5, "rhat {}", rhat.value);
    }

    #[test]
    fn rhat_is_affine_invariant() {
        let chains = vec![normal_chain(5, 300, 0.3, 1.2), normal_chain(6, 300, -0.1, 0.9)];
        let base = split_rhat(&chains).unwrap().value;
        let mapped: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.iter().map(|v| -3.5 * v + 11.0).collect())
            .collect();
        let transformed = split_rhat(&mapped).unwrap().value;
        assert!((base - transformed).abs() < 1e-12, "{base} vs {transformed}");
    }

    #[test]
    fn rhat_respects_formula_lower_bound() {
        for seed in 0..5 {
            let chains = vec![normal_chain(seed, 100, 0.0, 1.0), normal_chain(seed + 50, 100, 0.0, 1.0)];
            let n = 50.0;
            let bound = ((n - 1.0) / n_f(&chains)).sqrt();
            let rhat = split_rhat(&chains).unwrap();
            assert!(rhat.value >= bound - 1e-12);
        }
    }

    fn n_f(chains: &[Vec<f64>]) -> f64 {
        (chains[0].len() / 2) as f64
    }

    #[test]
    fn too_few_draws_is_an_error() {
        assert!(split_rhat(&[vec![1.0]]).is_err());
        assert!(split_rhat(&[]).is_err());
    }

    fn samples_from(chains: Vec<Vec<f64>>) -> PosteriorSamples {
        let n_chains = chains.len();
        PosteriorSamples {
            param_names: vec!["p".into()],
            draws: chains.into_iter().map(|c| c.into_iter().map(|v| vec![v]).collect()).collect(),
            accept_rate: vec![1.0; n_chains],
            divergences: vec![0; n_chains],
            warmup_divergences: vec![0; n_chains],
            step_size: vec![0.1; n_chains],
            config: crate::sampler::SamplerConfig::default(),
        }
    }

    #[test]
    fn constant_chain_trace_is_flagged() {
        let summary = trace_summary(&samples_from(vec![vec![3.0; 40]]));
        let t = &summary[0].chains[0];
        assert_eq!(t.first_half_mean, t.second_half_mean);
        assert_eq!(t.lag1_autocorr, 0.0);
        assert!(t.degenerate);
        assert_eq!(t.gap_sd_units, 0.0);
    }

    #[test]
    fn linear_ramp_trace() {
        let n = 100;
        let ramp: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let summary = trace_summary(&samples_from(vec![ramp]));
        let t = &summary[0].chains[0];
        // Half-mean gap is n/2 for a unit-slope ramp.
        assert!((t.second_half_mean - t.first_half_mean - n as f64 / 2.0).abs() < 1e-9);
        assert!(t.lag1_autocorr > 0.9, "autocorr {}", t.lag1_autocorr);
    }

    #[test]
    fn ar1_autocorrelation_recovered() {
        let phi = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = 0.0;
        let chain: Vec<f64> = (0..20_000)
            .map(|_| {
                x = phi * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect();
        let rho = lag1_autocorr(&chain).unwrap();
        assert!((rho - phi).abs() < 0.1, "rho {rho}");
    }

    #[test]
    fn ess_proxy_positive_and_none_for_constant() {
        let chains = vec![normal_chain(12, 500, 0.0, 1.0)];
        let ess = ess_proxy(&chains).unwrap();
        assert!(ess > 0.0);
        assert!(ess_proxy(&[vec![1.0; 10]]).is_none());
    }

    #[test]
    fn report_flags_divergences() {
        let mut samples = samples_from(vec![normal_chain(1, 200, 0.0, 1.0), normal_chain(2, 200, 0.0, 1.0)]);
        let report = convergence_report(&samples);
        assert!(report.converged, "max rhat {}", report.max_split_rhat);

        samples.divergences = vec![1, 0];
        let report = convergence_report(&samples);
        assert!(!report.converged);
        assert_eq!(report.divergence_count, 1);
    }
}
