//! Exponential-mechanism sampling over an output set, plus exact probability
//! ratios for auditing the privacy guarantee.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{ScoreRow, DELTA_U};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    epsilon: f64,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(epsilon: f64, seed: u64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::InvalidEpsilon(epsilon));
        }
        Ok(SamplerConfig { epsilon, seed })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Categorical distribution over an ordered output set.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenDistribution {
    pub support: Vec<u32>,
    pub probs: Vec<f64>,
}

/// Log-probabilities of the mechanism: (ε u_i / 2Δu) − logsumexp.
pub fn log_probs(scores: &[f64], epsilon: f64) -> Vec<f64> {
    let logits: Vec<f64> = scores.iter().map(|u| epsilon * u / (2.0 * DELTA_U)).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - log_z).collect()
}

/// Probabilities proportional to exp(ε u / 2) over the row's output set.
pub fn distribution(row: &ScoreRow<'_>, cfg: &SamplerConfig) -> TokenDistribution {
    debug_assert!(!row.scores.is_empty());
    let logits: Vec<f64> = row
        .scores
        .iter()
        .map(|u| cfg.epsilon * u / (2.0 * DELTA_U))
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    TokenDistribution {
        support: row.support.to_vec(),
        probs: weights.into_iter().map(|w| w / total).collect(),
    }
}

/// Draws one token by inverse CDF, consuming exactly one uniform variate.
pub fn sample<R: Rng + ?Sized>(dist: &TokenDistribution, rng: &mut R) -> u32 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (&t, &p) in dist.support.iter().zip(&dist.probs) {
        acc += p;
        if u < acc {
            return t;
        }
    }
    // u landed in the rounding gap above the accumulated mass.
    *dist.support.last().expect("non-empty support")
}

/// Largest probability ratio, in either direction, that two adjacent inputs
/// assign to a common output. Computed from log-probabilities so that it
/// stays exact when individual probabilities underflow.
pub fn audit_dp(a: &ScoreRow<'_>, b: &ScoreRow<'_>, cfg: &SamplerConfig) -> Result<f64> {
    audit_dp_log(a, b, cfg).map(f64::exp)
}

/// Natural log of [`audit_dp`]; the guarantee is `audit_dp_log <= ε`.
pub fn audit_dp_log(a: &ScoreRow<'_>, b: &ScoreRow<'_>, cfg: &SamplerConfig) -> Result<f64> {
    if a.set_id != b.set_id || a.support != b.support {
        return Err(Error::DifferentOutputSets(a.set_id, b.set_id));
    }
    let (la, lb) = (log_probs(a.scores, cfg.epsilon), log_probs(b.scores, cfg.epsilon));
    let worst = la
        .iter()
        .zip(&lb)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    Ok(worst)
}
