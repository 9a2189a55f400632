//! Rank-based effect sizes between role and non-role samples.
//!
//! Mann-Whitney U uses average ranks for ties (each tied pair contributes ½);
//! Cliff's delta counts ties as zero. Both are computed by O(n log n) sorting
//! and are checked against O(n²) pairwise enumeration in the tests.

use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Effect sizes for the role split, treatment = target-role files.
#[derive(Debug, Clone, Serialize)]
pub struct EffectReport {
    pub u_statistic: f64,
    pub cliffs_delta: f64,
    pub n_treatment: usize,
    pub n_control: usize,
}

/// Mann-Whitney U for sample `a` against `b`, with tie-averaged ranks.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<f64> {
    check_samples(a, b)?;
    let n_a = a.len();
    let mut all: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    all.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite values"));

    // Sum of a's ranks, averaging ranks across tie runs.
    let mut rank_sum_a = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Positions i..j (0-based) share the average 1-based rank.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let ties_in_a = all[i..j].iter().filter(|e| e.1).count();
        rank_sum_a += avg_rank * ties_in_a as f64;
        i = j;
    }
    Ok(rank_sum_a - (n_a * (n_a + 1)) as f64 / 2.0)
}

/// Cliff's delta (#{a > b} − #{a < b}) / (|a|·|b|).
pub fn cliffs_delta(a: &[f64], b: &[f64]) -> Result<f64> {
    check_samples(a, b)?;
    let mut sorted_b = b.to_vec();
    sorted_b.sort_by(|x, y| x.partial_cmp(y).expect("finite values"));
    let mut wins = 0_i64;
    let mut losses = 0_i64;
    for &v in a {
        let below = sorted_b.partition_point(|&w| w < v);
        let not_above = sorted_b.partition_point(|&w| w <= v);
        wins += below as i64;
        losses += (sorted_b.len() - not_above) as i64;
    }
    Ok((wins - losses) as f64 / (a.len() as f64 * b.len() as f64))
}

/// Pooled effect check over the whole corpus: raw CBO of target-role files
/// against every other file.
pub fn effect_report(corpus: &Corpus) -> Result<EffectReport> {
    let (a, b) = split_by_role(corpus);
    report(&a, &b)
}

/// Per-project variant; projects lacking either group are skipped.
pub fn per_project_effects(corpus: &Corpus) -> Vec<(String, EffectReport)> {
    let mut out = Vec::new();
    for (j, project) in corpus.projects().iter().enumerate() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (r, &g) in corpus.records().iter().zip(corpus.project_of()) {
            if g != j {
                continue;
            }
            if r.controller {
                a.push(f64::from(r.cbo));
            } else {
                b.push(f64::from(r.cbo));
            }
        }
        if let Ok(rep) = report(&a, &b) {
            out.push((project.clone(), rep));
        }
    }
    out
}

fn report(a: &[f64], b: &[f64]) -> Result<EffectReport> {
    Ok(EffectReport {
        u_statistic: mann_whitney_u(a, b)?,
        cliffs_delta: cliffs_delta(a, b)?,
        n_treatment: a.len(),
        n_control: b.len(),
    })
}

fn split_by_role(corpus: &Corpus) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for r in corpus.records() {
        if r.controller {
            a.push(f64::from(r.cbo));
        } else {
            b.push(f64::from(r.cbo));
        }
    }
    (a, b)
}

fn check_samples(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Domain("effect-size samples must be finite".into()));
    }
    Ok(())
}
