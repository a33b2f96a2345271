//! Bayesian marginal structural models by the weighted Bayesian bootstrap.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::glm::inv_logit;
use crate::mh::{sample_logistic_posterior, Prior, SamplerConfig};
use crate::msm::{fit_msm, posterior_summary, treatment_design, MarginalForm, MsmEstimator, WeightVector, Weighting, INTERCEPT};
use crate::seed::{RandomStream, SeedSpec};

/// A draw from the flat Dirichlet on n categories.
pub fn draw_dirichlet(n: usize, rng: &mut RandomStream) -> Vec<f64> {
    let mut g: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = g.iter().sum();
    for v in &mut g {
        *v /= total;
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightMode {
    /// Weights from maximum-likelihood treatment models.
    PluginML,
    /// Ratio of posterior-mean treatment densities over this many draws.
    PosteriorMean { draws: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BmsmConfig {
    pub draws: usize,
    pub form: MarginalForm,
    pub weight_mode: WeightMode,
}

impl Default for BmsmConfig {
    fn default() -> Self {
        Self { draws: 1000, form: MarginalForm::default(), weight_mode: WeightMode::PluginML }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BmsmPosterior {
    pub names: Vec<String>,
    pub theta_draws: Vec<Vec<f64>>,
    pub ate_draws: Vec<f64>,
    /// Fit at equal subject weights 1/n.
    pub point: f64,
    pub point_theta: BTreeMap<String, f64>,
    pub mean: f64,
    pub sd: f64,
    pub ci95: (f64, f64),
    pub skipped: usize,
}

/// Posterior of the marginal model: each draw solves the weighted least
/// squares problem with subject weights `pi_i * w_i`.
pub fn fit_bmsm(data: &LongitudinalDataset, y: &[f64], weights: &WeightVector, cfg: &BmsmConfig, seed: &SeedSpec) -> Result<BmsmPosterior> {
    if cfg.draws == 0 {
        return Err(Error::InvalidArgument("at least one bootstrap draw is required".into()));
    }
    let n = data.n();
    if weights.w.len() != n {
        return Err(Error::InvalidArgument("weights must align with the dataset".into()));
    }
    let point_fit = fit_msm(data, y, &weights.w, cfg.form)?;
    let results: Vec<Result<(Vec<f64>, f64)>> = (0..cfg.draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed.stream("bmsm", b as u64);
            let pi = draw_dirichlet(n, &mut rng);
            let w: Vec<f64> = pi.iter().zip(&weights.w).map(|(p, w)| p * w * n as f64).collect();
            let fit = fit_msm(data, y, &w, cfg.form)?;
            Ok((fit.theta, fit.ate))
        })
        .collect();
    let mut theta_draws = Vec::with_capacity(cfg.draws);
    let mut ate_draws = Vec::with_capacity(cfg.draws);
    let mut skipped = 0;
    for r in results {
        match r {
            Ok((t, a)) => {
                theta_draws.push(t);
                ate_draws.push(a);
            }
            Err(e) => {
                skipped += 1;
                log::warn!("skipping degenerate bootstrap draw: {e}");
            }
        }
    }
    if skipped * 20 > cfg.draws {
        return Err(Error::TooManySkipped { skipped, total: cfg.draws });
    }
    let (mean, sd, ci95) = posterior_summary(&ate_draws);
    Ok(BmsmPosterior {
        point_theta: point_fit.theta_map(),
        names: point_fit.names,
        theta_draws,
        ate_draws,
        point: point_fit.ate,
        mean,
        sd,
        ci95,
        skipped,
    })
}

fn coefficient_priors(names: &[String]) -> Vec<Prior> {
    names
        .iter()
        .map(|n| Prior::Normal { precision: if n == INTERCEPT { 0.001 } else { 0.01 } })
        .collect()
}

/// Per-subject probability of the observed treatments under each posterior draw.
fn sequence_densities(
    data: &LongitudinalDataset,
    with_history: bool,
    include_u: bool,
    sampler: SamplerConfig,
    seed: &SeedSpec,
    label: &str,
) -> Result<Vec<Vec<f64>>> {
    let n = data.n();
    let mut dens = vec![vec![1.0; sampler.draws]; n];
    for j in 0..data.visits() {
        let x = treatment_design(data, j, with_history, include_u)?;
        let a: Vec<f64> = (0..n).map(|i| data.a(i, j) as f64).collect();
        let priors = coefficient_priors(x.names());
        let draws = sample_logistic_posterior(&x, &a, &priors, sampler, &mut seed.stream(label, j as u64))?;
        for (i, d) in dens.iter_mut().enumerate() {
            let row = x.row(i);
            for (s, beta) in draws.iter().enumerate() {
                let p = inv_logit(row.iter().zip(beta).map(|(x, b)| x * b).sum());
                d[s] *= if a[i] == 1.0 { p } else { 1.0 - p };
            }
        }
    }
    Ok(dens)
}

/// Weights formed from posterior-mean treatment assignment densities, with
/// treatment-model coefficients sampled under vague normal priors.
pub fn posterior_mean_weights(
    data: &LongitudinalDataset,
    include_u: bool,
    stabilized: bool,
    sampler: SamplerConfig,
    seed: &SeedSpec,
) -> Result<WeightVector> {
    data.ensure_estimable(include_u)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let den = sequence_densities(data, true, include_u, sampler, seed, "weights-denominator")?;
    let num = if stabilized { Some(sequence_densities(data, false, false, sampler, seed, "weights-numerator")?) } else { None };
    let mut w = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let d = mean(&den[i]);
        if d < 1e-12 {
            return Err(Error::TinyProbability { subject: i, p: d });
        }
        w.push(num.as_ref().map_or(1.0, |nu| mean(&nu[i])) / d);
    }
    Ok(WeightVector { w, stabilized, truncation: None })
}

/// Outcome correction and weighting as in the frequentist pipeline, followed
/// by the Bayesian bootstrap.
#[derive(Debug, Clone, Default)]
pub struct BmsmEstimator {
    pub msm: MsmEstimator,
    pub config: BmsmConfig,
    pub sampler: SamplerConfig,
}

impl BmsmEstimator {
    pub fn estimate(&self, data: &LongitudinalDataset, seed: &SeedSpec) -> Result<BmsmPosterior> {
        let prepared = self.msm.prepare(data)?;
        let weights = match (self.config.weight_mode, self.msm.weighting) {
            (WeightMode::PosteriorMean { draws }, Weighting::Iptw { include_u }) => {
                let sampler = SamplerConfig { draws, ..self.sampler };
                posterior_mean_weights(data, include_u, self.msm.weight_options.stabilized, sampler, &seed.child("weights", 0))?
            }
            _ => prepared.weights,
        };
        let cfg = BmsmConfig { form: self.msm.form, ..self.config };
        fit_bmsm(data, &prepared.y, &weights, &cfg, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{simulate, Scenario, ScenarioSpec};
    use crate::msm::fit_treatment_models;

    fn sim(n: usize, seed: u64) -> LongitudinalDataset {
        simulate(&ScenarioSpec::new(Scenario::TvBinaryU, n), &mut SeedSpec::new(seed).stream("sim", 0)).unwrap().observed()
    }

    #[test]
    fn dirichlet_single_and_sum() {
        let mut rng = SeedSpec::new(1).stream("d", 0);
        assert_eq!(draw_dirichlet(1, &mut rng), vec![1.0]);
        for n in [2, 17, 1000] {
            let d = draw_dirichlet(n, &mut rng);
            assert!(d.iter().all(|&v| v >= 0.0));
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn point_estimate_matches_frequentist_fit() {
        let data = sim(300, 2);
        let w = WeightVector::unit(data.n());
        let post = fit_bmsm(&data, data.y(), &w, &BmsmConfig { draws: 1, ..Default::default() }, &SeedSpec::new(1)).unwrap();
        let freq = fit_msm(&data, data.y(), &w.w, MarginalForm::CumulativeDose).unwrap();
        assert_eq!(post.point_theta, freq.theta_map());
        assert_eq!(post.theta_draws.len(), 1);
    }

    #[test]
    fn degenerate_draws_are_counted() {
        let data = sim(200, 3);
        // Every subject outside one sequence has zero weight; saturated fits then fail.
        let target = data.treatments(0).to_vec();
        let w: Vec<f64> = (0..data.n()).map(|i| (data.treatments(i) == target.as_slice()) as u8 as f64).collect();
        let cfg = BmsmConfig { draws: 20, form: MarginalForm::Saturated, ..Default::default() };
        assert!(fit_bmsm(&data, data.y(), &WeightVector { w, stabilized: false, truncation: None }, &cfg, &SeedSpec::new(1)).is_err());
    }

    #[test]
    fn posterior_mean_weights_close_to_plugin() {
        let data = sim(1000, 4);
        let plugin = crate::msm::compute_weights(&data, &fit_treatment_models(&data, false).unwrap(), Default::default()).unwrap();
        let pm = posterior_mean_weights(&data, false, true, SamplerConfig { draws: 400, ..Default::default() }, &SeedSpec::new(5)).unwrap();
        let rel: f64 = plugin.w.iter().zip(&pm.w).map(|(a, b)| ((a - b) / a).abs()).sum::<f64>() / data.n() as f64;
        assert!(rel < 0.05, "mean relative difference {rel}");
    }
}
