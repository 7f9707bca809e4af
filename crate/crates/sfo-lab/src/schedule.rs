//! Timestep distributions for training-time sampling.
//!
//! Flow-matching training draws a timestep t in (0,1) per example. Besides
//! the plain uniform draw, a logit-normal distribution concentrates mass at
//! intermediate noise levels: t = logistic(mu + sigma * z) with z standard
//! normal. Both variants clamp away from the exact endpoints so downstream
//! logit transforms stay finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::RngStream;

/// Keeps t strictly inside (0,1).
const T_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimestepDist {
    Uniform,
    LogitNormal { mu: f64, sigma: f64 },
}

impl TimestepDist {
    pub fn validate(&self) -> Result<()> {
        if let TimestepDist::LogitNormal { mu, sigma } = self {
            if !mu.is_finite() {
                return Err(Error::invalid("timestep.mu", "must be finite"));
            }
            if !(sigma.is_finite() && *sigma > 0.0) {
                return Err(Error::invalid("timestep.sigma", "must be finite and > 0"));
            }
        }
        Ok(())
    }

    /// One draw in the open interval (0,1).
    pub fn sample_t(&self, rng: &mut RngStream) -> f64 {
        let t = match self {
            TimestepDist::Uniform => rng.next_f64(),
            TimestepDist::LogitNormal { mu, sigma } => logistic(mu + sigma * rng.standard_normal()),
        };
        t.clamp(T_CLAMP, 1.0 - T_CLAMP)
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    // Evaluate through the negative branch only; exp of a negative argument
    // cannot overflow.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(t: f64) -> f64 {
    (t / (1.0 - t)).ln()
}

/// Sample mean and standard deviation of logit(t) over the given draws.
///
/// The std is the population form (divide by n), matching how the moment
/// acceptance bounds are stated.
pub fn logit_moments(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("logit_moments", "empty sample set"));
    }
    let mut logits = Vec::with_capacity(samples.len());
    for (i, &t) in samples.iter().enumerate() {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Invalid {
                key: "logit_moments".to_string(),
                reason: format!("sample {i} = {t} outside (0,1)"),
            });
        }
        logits.push(logit(t));
    }
    let n = logits.len() as f64;
    let mean = logits.iter().sum::<f64>() / n;
    let var = logits.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// One-sample Kolmogorov-Smirnov statistic against U(0,1).
pub fn ks_statistic_uniform(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("timestep samples are finite"));
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = x.clamp(0.0, 1.0);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    d
}
