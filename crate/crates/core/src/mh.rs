//! Adaptive random-walk Metropolis for logistic regression coefficients,
//! updated one coefficient at a time.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{bernoulli_logit_ll, DesignMatrix};
use crate::seed::RandomStream;

pub const TARGET_ACCEPTANCE: f64 = 0.44;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Prior {
    /// Bounded support. `lo == hi` pins the coefficient at that value.
    Uniform { lo: f64, hi: f64 },
    /// Mean zero.
    Normal { precision: f64 },
}

impl Prior {
    pub fn uniform(name: &str, lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidPrior { name: name.to_string(), lo, hi });
        }
        Ok(Prior::Uniform { lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        match *self {
            Prior::Uniform { lo, hi } => v >= lo && v <= hi,
            Prior::Normal { .. } => v.is_finite(),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(*self, Prior::Uniform { lo, hi } if lo == hi)
    }

    /// Log density up to a constant; `-inf` outside the support.
    pub fn log_density(&self, v: f64) -> f64 {
        match *self {
            Prior::Uniform { .. } => {
                if self.contains(v) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::Normal { precision } => -0.5 * precision * v * v,
        }
    }

    /// A starting value inside the support.
    pub fn initial(&self) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => 0.0f64.clamp(lo, hi),
            Prior::Normal { .. } => 0.0,
        }
    }
}

/// Proposal scale with Robbins-Monro adaptation towards a target acceptance rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarAdapter {
    pub log_scale: f64,
    steps: u64,
    pub proposed: u64,
    pub accepted: u64,
}

impl ScalarAdapter {
    pub fn new(scale: f64) -> Self {
        Self { log_scale: scale.ln(), steps: 0, proposed: 0, accepted: 0 }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    fn record(&mut self, accepted: bool, adapting: bool) {
        if adapting {
            self.steps += 1;
            let gain = (self.steps as f64).powf(-0.6).min(0.5);
            self.log_scale += gain * (accepted as u8 as f64 - TARGET_ACCEPTANCE);
            self.log_scale = self.log_scale.clamp(-12.0, 3.0);
        } else {
            self.proposed += 1;
            self.accepted += accepted as u64;
        }
    }

    /// Post-adaptation acceptance rate.
    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }
}

/// Coefficients of one logistic model together with its cached linear predictor.
#[derive(Debug, Clone)]
pub struct LogisticBlock {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub priors: Vec<Prior>,
    pub eta: Vec<f64>,
    pub adapters: Vec<ScalarAdapter>,
}

impl LogisticBlock {
    pub fn new(names: Vec<String>, priors: Vec<Prior>, n: usize, initial_scale: f64) -> Self {
        let beta = priors.iter().map(Prior::initial).collect();
        let adapters = priors.iter().map(|_| ScalarAdapter::new(initial_scale)).collect();
        Self { names, beta, priors, eta: vec![0.0; n], adapters }
    }

    /// Recomputes `eta` from scratch; `cols[k]` is the regressor of coefficient k.
    pub fn refresh_eta(&mut self, cols: &[&[f64]]) {
        for (i, e) in self.eta.iter_mut().enumerate() {
            *e = cols.iter().zip(&self.beta).map(|(c, b)| c[i] * b).sum();
        }
    }

    /// Log-likelihood difference of shifting coefficient k by `delta`.
    fn delta_ll(&self, y: &[f64], col: &[f64], delta: f64) -> f64 {
        let mut d = 0.0;
        for i in 0..y.len() {
            let x = col[i];
            if x != 0.0 {
                let e = self.eta[i];
                d += bernoulli_logit_ll(y[i], e + delta * x) - bernoulli_logit_ll(y[i], e);
            }
        }
        d
    }

    /// One Metropolis update per coefficient.
    pub fn sweep(&mut self, y: &[f64], cols: &[&[f64]], rng: &mut RandomStream, adapting: bool) {
        for k in 0..self.beta.len() {
            if self.priors[k].is_fixed() {
                continue;
            }
            let z: f64 = rng.sample(StandardNormal);
            let delta = self.adapters[k].scale() * z;
            let cur = self.beta[k];
            let prop = cur + delta;
            let accept = if !self.priors[k].contains(prop) {
                false
            } else {
                let log_ratio = self.delta_ll(y, cols[k], delta) + self.priors[k].log_density(prop)
                    - self.priors[k].log_density(cur);
                log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
            };
            if accept {
                self.beta[k] = prop;
                let col = cols[k];
                for (e, &x) in self.eta.iter_mut().zip(col) {
                    if x != 0.0 {
                        *e += delta * x;
                    }
                }
            }
            self.adapters[k].record(accept, adapting);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub burn_in: usize,
    pub draws: usize,
    pub thin: usize,
    pub initial_scale: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { burn_in: 1000, draws: 1000, thin: 1, initial_scale: 0.3 }
    }
}

/// Posterior draws of logistic coefficients under the given priors.
pub fn sample_logistic_posterior(
    x: &DesignMatrix,
    y: &[f64],
    priors: &[Prior],
    cfg: SamplerConfig,
    rng: &mut RandomStream,
) -> Result<Vec<Vec<f64>>> {
    if priors.len() != x.cols() || y.len() != x.rows() {
        return Err(Error::InvalidArgument("prior count or response length does not match the design".into()));
    }
    if cfg.thin == 0 {
        return Err(Error::InvalidArgument("thin must be at least 1".into()));
    }
    let n = x.rows();
    let cols: Vec<Vec<f64>> = (0..x.cols()).map(|k| (0..n).map(|i| x.row(i)[k]).collect()).collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let mut block = LogisticBlock::new(x.names().to_vec(), priors.to_vec(), n, cfg.initial_scale);
    block.refresh_eta(&refs);
    for _ in 0..cfg.burn_in {
        block.sweep(y, &refs, rng, true);
    }
    let mut out = Vec::with_capacity(cfg.draws);
    for _ in 0..cfg.draws {
        for _ in 0..cfg.thin {
            block.sweep(y, &refs, rng, false);
        }
        out.push(block.beta.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::{fit_logistic, LogisticOptions};
    use crate::seed::SeedSpec;

    #[test]
    fn inverted_bounds_rejected_and_point_mass_allowed() {
        assert!(Prior::uniform("b", 1.0, -1.0).is_err());
        assert!(Prior::uniform("b", 0.0, 0.0).unwrap().is_fixed());
    }

    #[test]
    fn posterior_centres_on_mle_with_vague_prior() {
        let mut rng = SeedSpec::new(3).stream("mh-test", 0);
        let n = 2000;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, rng.random_range(0..2) as f64]).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| (rng.random::<f64>() < crate::glm::inv_logit(0.3 - 0.8 * r[1])) as u8 as f64)
            .collect();
        let x = DesignMatrix::from_rows(vec!["c", "z"], &rows).unwrap();
        let mle = fit_logistic(&x, &y, &vec![1.0; n], LogisticOptions::default()).unwrap();
        let priors = [Prior::Normal { precision: 1e-4 }; 2];
        let draws = sample_logistic_posterior(&x, &y, &priors, SamplerConfig { draws: 4000, ..Default::default() }, &mut rng)
            .unwrap();
        let se = mle.std_errors();
        for k in 0..2 {
            let m = draws.iter().map(|d| d[k]).sum::<f64>() / draws.len() as f64;
            assert!((m - mle.coefficients[k]).abs() < 0.3 * se[k], "coef {k}: {m} vs {}", mle.coefficients[k]);
        }
    }

    #[test]
    fn draws_respect_uniform_support() {
        let mut rng = SeedSpec::new(4).stream("mh-test", 0);
        let rows: Vec<Vec<f64>> = (0..300).map(|i| vec![1.0, (i % 2) as f64]).collect();
        let y: Vec<f64> = (0..300).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let x = DesignMatrix::from_rows(vec!["c", "z"], &rows).unwrap();
        let priors = [Prior::Normal { precision: 0.01 }, Prior::Uniform { lo: -0.1, hi: 0.05 }];
        let draws = sample_logistic_posterior(&x, &y, &priors, SamplerConfig::default(), &mut rng).unwrap();
        assert!(draws.iter().all(|d| (-0.1..=0.05).contains(&d[1])));
    }
}
