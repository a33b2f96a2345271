//! Inverse-probability-weighted marginal structural models.

use std::collections::BTreeMap;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LongitudinalDataset, TreatmentRegime};
use crate::error::{Error, Result};
use crate::glm::{self, DesignMatrix, GlmFit, LogisticOptions};
use crate::seed::SeedSpec;
use crate::sf::{correct_outcomes, SensitivityFunctionSpec};

pub const INTERCEPT: &str = "(intercept)";

/// Column names of the treatment model at visit `j` (0-based).
pub fn treatment_columns(data: &LongitudinalDataset, j: usize, with_history: bool, include_u: bool) -> Vec<String> {
    let mut names = vec![INTERCEPT.to_string()];
    names.extend((0..j).map(|k| format!("a{}", k + 1)));
    if with_history {
        let p = data.covariates();
        for v in 0..=j {
            for k in 0..p {
                names.push(if p == 1 { format!("x{}", v + 1) } else { format!("x{}_{}", v + 1, k + 1) });
            }
        }
        if include_u {
            if let Some(l) = data.latent() {
                let names_u = l.column_names();
                let upto: usize = l.dims()[..=j].iter().sum();
                names.extend(names_u.into_iter().take(upto));
            }
        }
    }
    names
}

/// Appends the regressors of subject `i` at visit `j` to `row`.
pub fn treatment_row(data: &LongitudinalDataset, i: usize, j: usize, with_history: bool, include_u: bool, row: &mut Vec<f64>) {
    row.push(1.0);
    row.extend(data.treatments(i)[..j].iter().map(|&a| a as f64));
    if with_history {
        row.extend_from_slice(data.x_history(i, j));
        if include_u {
            if let Some(l) = data.latent() {
                row.extend_from_slice(l.history(i, j));
            }
        }
    }
}

pub fn treatment_design(data: &LongitudinalDataset, j: usize, with_history: bool, include_u: bool) -> Result<DesignMatrix> {
    let names = treatment_columns(data, j, with_history, include_u);
    let mut values = Vec::with_capacity(data.n() * names.len());
    for i in 0..data.n() {
        treatment_row(data, i, j, with_history, include_u, &mut values);
    }
    Ok(DesignMatrix::new(names, data.n(), values)?)
}

/// Per-visit numerator (treatment history only) and denominator (treatment
/// and covariate history, optionally latent history) logistic fits.
#[derive(Debug, Clone)]
pub struct TreatmentModels {
    pub numerator: Vec<GlmFit>,
    pub denominator: Vec<GlmFit>,
    pub include_u: bool,
}

impl TreatmentModels {
    fn prob(fit: &GlmFit, data: &LongitudinalDataset, i: usize, j: usize, with_history: bool, include_u: bool) -> f64 {
        let mut row = Vec::with_capacity(fit.coefficients.len());
        treatment_row(data, i, j, with_history, include_u, &mut row);
        glm::inv_logit(fit.eta(&row))
    }

    /// Fitted `P(A_j = 1 | history)` from the denominator model.
    pub fn denominator_prob(&self, data: &LongitudinalDataset, i: usize, j: usize) -> Result<f64> {
        let fit = self.denominator.get(j).ok_or(Error::MissingModel(j + 1))?;
        Ok(Self::prob(fit, data, i, j, true, self.include_u))
    }

    pub fn numerator_prob(&self, data: &LongitudinalDataset, i: usize, j: usize) -> Result<f64> {
        let fit = self.numerator.get(j).ok_or(Error::MissingModel(j + 1))?;
        Ok(Self::prob(fit, data, i, j, false, false))
    }
}

pub fn fit_treatment_models(data: &LongitudinalDataset, include_u: bool) -> Result<TreatmentModels> {
    data.ensure_estimable(include_u)?;
    let w = vec![1.0; data.n()];
    let mut numerator = Vec::with_capacity(data.visits());
    let mut denominator = Vec::with_capacity(data.visits());
    for j in 0..data.visits() {
        let y: Vec<f64> = (0..data.n()).map(|i| data.a(i, j) as f64).collect();
        let opts = LogisticOptions::default();
        numerator.push(glm::fit_logistic(&treatment_design(data, j, false, false)?, &y, &w, opts)?);
        denominator.push(glm::fit_logistic(&treatment_design(data, j, true, include_u)?, &y, &w, opts)?);
    }
    Ok(TreatmentModels { numerator, denominator, include_u })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub stabilized: bool,
    pub truncation: Option<(f64, f64)>,
}

impl WeightVector {
    pub fn unit(n: usize) -> Self {
        Self { w: vec![1.0; n], stabilized: false, truncation: None }
    }

    pub fn summary(&self) -> WeightSummary {
        let n = self.w.len().max(1) as f64;
        WeightSummary {
            min: self.w.iter().copied().fold(f64::INFINITY, f64::min),
            mean: self.w.iter().sum::<f64>() / n,
            max: self.w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightOptions {
    pub stabilized: bool,
    /// Percentile pair, e.g. `(1.0, 99.0)`.
    pub truncation: Option<(f64, f64)>,
}

impl Default for WeightOptions {
    fn default() -> Self {
        Self { stabilized: true, truncation: None }
    }
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 100].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `w_i = prod_j P_num(a_ij | a_{i,<j}) / P_den(a_ij | history_ij)`.
pub fn compute_weights(data: &LongitudinalDataset, fits: &TreatmentModels, opts: WeightOptions) -> Result<WeightVector> {
    let mut w = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let mut num = 1.0;
        let mut den = 1.0;
        for j in 0..data.visits() {
            let a = data.a(i, j);
            let pick = |p: f64| if a == 1 { p } else { 1.0 - p };
            let pd = pick(fits.denominator_prob(data, i, j)?);
            if pd < 1e-12 {
                return Err(Error::TinyProbability { subject: i, p: pd });
            }
            den *= pd;
            if opts.stabilized {
                num *= pick(fits.numerator_prob(data, i, j)?);
            }
        }
        w.push(num / den);
    }
    if let Some((lo, hi)) = opts.truncation {
        if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo >= hi {
            return Err(Error::InvalidArgument(format!("bad truncation percentiles ({lo}, {hi})")));
        }
        if !w.is_empty() {
            let mut sorted = w.clone();
            sorted.sort_by(f64::total_cmp);
            let (a, b) = (percentile(&sorted, lo), percentile(&sorted, hi));
            for v in &mut w {
                *v = v.clamp(a, b);
            }
        }
    }
    Ok(WeightVector { w, stabilized: opts.stabilized, truncation: opts.truncation })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MarginalForm {
    /// `E[Y(a)] = theta0 + theta1 * sum_j a_j`
    #[default]
    CumulativeDose,
    /// One mean per treatment sequence.
    Saturated,
}

impl std::str::FromStr for MarginalForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cumdose" => Ok(Self::CumulativeDose),
            "saturated" => Ok(Self::Saturated),
            other => Err(Error::InvalidArgument(format!("unknown marginal form '{other}'"))),
        }
    }
}

/// Point fit of a marginal model.
#[derive(Debug, Clone, PartialEq)]
pub struct MsmFit {
    pub names: Vec<String>,
    pub theta: Vec<f64>,
    pub ate: f64,
}

impl MsmFit {
    pub fn theta_map(&self) -> BTreeMap<String, f64> {
        self.names.iter().cloned().zip(self.theta.iter().copied()).collect()
    }
}

/// Weighted regression of `y` on the marginal design; the contrast is
/// always-treated minus never-treated.
pub fn fit_msm(data: &LongitudinalDataset, y: &[f64], weights: &[f64], form: MarginalForm) -> Result<MsmFit> {
    let n = data.n();
    if y.len() != n || weights.len() != n {
        return Err(Error::InvalidArgument("outcome and weights must align with the dataset".into()));
    }
    let visits = data.visits();
    match form {
        MarginalForm::CumulativeDose => {
            let names = vec![INTERCEPT.to_string(), "dose".to_string()];
            let mut values = Vec::with_capacity(2 * n);
            for i in 0..n {
                values.push(1.0);
                values.push(data.treatments(i).iter().map(|&a| a as f64).sum());
            }
            let x = DesignMatrix::new(names.clone(), n, values)?;
            let fit = glm::fit_linear(&x, y, weights)?;
            let ate = fit.coefficients[1] * visits as f64;
            Ok(MsmFit { names, theta: fit.coefficients, ate })
        }
        MarginalForm::Saturated => {
            let regimes = TreatmentRegime::enumerate(visits);
            let mut sw = vec![0.0; regimes.len()];
            let mut swy = vec![0.0; regimes.len()];
            for i in 0..n {
                let k = regime_index(data.treatments(i));
                sw[k] += weights[i];
                swy[k] += weights[i] * y[i];
            }
            if let Some(k) = sw.iter().position(|&s| s <= 0.0) {
                return Err(Error::UnobservedSequence(regimes[k].to_string()));
            }
            let theta: Vec<f64> = swy.iter().zip(&sw).map(|(a, b)| a / b).collect();
            let names = regimes.iter().map(|r| format!("mean_{r}")).collect();
            let ate = theta[theta.len() - 1] - theta[0];
            Ok(MsmFit { names, theta, ate })
        }
    }
}

/// Index of a sequence in lexicographic order (first visit most significant).
pub fn regime_index(a: &[u8]) -> usize {
    a.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weighting {
    Unit,
    Iptw { include_u: bool },
}

/// A complete frequentist pipeline: optional outcome correction, weights
/// from freshly fitted treatment models, weighted marginal fit.
#[derive(Debug, Clone)]
pub struct MsmEstimator {
    pub weighting: Weighting,
    pub weight_options: WeightOptions,
    pub form: MarginalForm,
    pub sf: Option<SensitivityFunctionSpec>,
    pub bootstrap: usize,
}

impl Default for MsmEstimator {
    fn default() -> Self {
        Self {
            weighting: Weighting::Iptw { include_u: false },
            weight_options: WeightOptions::default(),
            form: MarginalForm::default(),
            sf: None,
            bootstrap: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsmResult {
    pub theta: BTreeMap<String, f64>,
    pub ate: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub weights: WeightSummary,
    pub bootstrap: usize,
    pub bootstrap_failures: usize,
}

/// Outcome and weights for one dataset under an estimator configuration.
pub struct Prepared {
    pub y: Vec<f64>,
    pub weights: WeightVector,
}

impl MsmEstimator {
    pub fn include_u(&self) -> bool {
        matches!(self.weighting, Weighting::Iptw { include_u: true })
    }

    pub fn prepare(&self, data: &LongitudinalDataset) -> Result<Prepared> {
        let include_u = self.include_u();
        data.ensure_estimable(include_u)?;
        let weights = match self.weighting {
            Weighting::Unit => WeightVector::unit(data.n()),
            Weighting::Iptw { include_u } => {
                let fits = fit_treatment_models(data, include_u)?;
                compute_weights(data, &fits, self.weight_options)?
            }
        };
        let y = match &self.sf {
            None => data.y().to_vec(),
            Some(spec) => {
                let fits = if spec.needs_fitted_models() { Some(fit_treatment_models(&data.observed(), false)?) } else { None };
                correct_outcomes(data, spec, fits.as_ref())?.y_sf
            }
        };
        Ok(Prepared { y, weights })
    }

    pub fn point(&self, data: &LongitudinalDataset) -> Result<(MsmFit, WeightVector)> {
        let p = self.prepare(data)?;
        let fit = fit_msm(data, &p.y, &p.weights.w, self.form)?;
        Ok((fit, p.weights))
    }

    /// Point estimate plus nonparametric bootstrap SE over subjects. Every
    /// resample reruns the whole pipeline on its own derived stream.
    pub fn estimate(&self, data: &LongitudinalDataset, seed: &SeedSpec) -> Result<MsmResult> {
        let (fit, weights) = self.point(data)?;
        let (se, failures) = bootstrap_se(data, self.bootstrap, seed, |d| Ok(self.point(d)?.0.ate))?;
        Ok(MsmResult {
            theta: fit.theta_map(),
            ate: fit.ate,
            se,
            ci95: (fit.ate - 1.96 * se, fit.ate + 1.96 * se),
            weights: weights.summary(),
            bootstrap: self.bootstrap,
            bootstrap_failures: failures,
        })
    }
}

/// Resamples subjects with replacement `reps` times and returns the sample
/// SD of `stat` and the number of failed resamples. More than 5% failures is
/// an error.
pub fn bootstrap_se<F>(data: &LongitudinalDataset, reps: usize, seed: &SeedSpec, stat: F) -> Result<(f64, usize)>
where
    F: Fn(&LongitudinalDataset) -> Result<f64> + Sync,
{
    if reps == 0 {
        return Ok((0.0, 0));
    }
    let n = data.n();
    let results: Vec<Result<f64>> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed.stream("bootstrap", b as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            stat(&data.select(&rows))
        })
        .collect();
    let mut values = Vec::with_capacity(reps);
    let mut failures = 0;
    for r in results {
        match r {
            Ok(v) => values.push(v),
            Err(e) => {
                failures += 1;
                warn!("bootstrap resample failed: {e}");
            }
        }
    }
    if failures * 20 > reps {
        return Err(Error::TooManySkipped { skipped: failures, total: reps });
    }
    Ok((sample_sd(&values), failures))
}

/// Mean, standard deviation and equal-tailed 95% interval of a set of draws.
pub fn posterior_summary(draws: &[f64]) -> (f64, f64, (f64, f64)) {
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    (mean, sample_sd(draws), (percentile(&sorted, 2.5), percentile(&sorted, 97.5)))
}

pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
