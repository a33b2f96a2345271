//! Bayesian sensitivity analysis: a joint model over covariates, a binary
//! latent confounder, treatments and outcome, sampled by Metropolis-within-Gibbs,
//! followed by posterior-predictive g-computation of potential outcome means.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{LongitudinalDataset, TreatmentRegime};
use crate::error::{Error, Result};
use crate::glm::{bernoulli_logit_ll, inv_logit};
use crate::mh::{LogisticBlock, Prior};
use crate::msm::posterior_summary;
use crate::seed::{RandomStream, SeedSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UStructure {
    TimeVarying,
    TimeInvariant,
}

impl fmt::Display for UStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UStructure::TimeVarying => "time-varying",
            UStructure::TimeInvariant => "time-invariant",
        })
    }
}

impl FromStr for UStructure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time-varying" | "tv" => Ok(UStructure::TimeVarying),
            "time-invariant" | "ti" => Ok(UStructure::TimeInvariant),
            other => Err(Error::InvalidArgument(format!("unknown latent structure '{other}'"))),
        }
    }
}

/// A model variable; visit indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Var {
    One,
    X(usize),
    A(usize),
    U(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct Term {
    pub name: String,
    pub var: Var,
    pub prior: Prior,
    pub bias: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeSpec {
    pub name: String,
    pub response: Var,
    pub terms: Vec<Term>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub bias_bounds: (f64, f64),
    pub u_intercept_bounds: (f64, f64),
    pub coefficient_precision: f64,
    pub intercept_precision: f64,
    pub precision_shape: f64,
    pub precision_rate: f64,
}

impl PriorConfig {
    pub fn simulation() -> Self {
        Self {
            bias_bounds: (-2.0, 2.0),
            u_intercept_bounds: (-5.0, 5.0),
            coefficient_precision: 0.01,
            intercept_precision: 0.001,
            precision_shape: 0.01,
            precision_rate: 0.01,
        }
    }

    pub fn application() -> Self {
        Self { bias_bounds: (-10.0, 10.0), u_intercept_bounds: (-10.0, 10.0), ..Self::simulation() }
    }

    pub fn with_bias_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.bias_bounds = (lo, hi);
        self
    }
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self::simulation()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BsaModel {
    pub u_structure: UStructure,
    pub visits: usize,
    pub latent_count: usize,
    /// Logistic models in generation order.
    pub nodes: Vec<NodeSpec>,
    pub outcome: NodeSpec,
    pub precision_shape: f64,
    pub precision_rate: f64,
}

enum Kind {
    Intercept,
    Coefficient,
    Bias,
    LatentIntercept,
}

fn var_label(v: Var, structure: UStructure) -> String {
    match v {
        Var::One => "intercept".into(),
        Var::X(j) => format!("X{}", j + 1),
        Var::A(j) => format!("A{}", j + 1),
        Var::U(m) => match structure {
            UStructure::TimeVarying => format!("U{}", m + 1),
            UStructure::TimeInvariant => "U".into(),
        },
    }
}

pub fn build_model(visits: usize, covariates: usize, u_structure: UStructure, priors: &PriorConfig) -> Result<BsaModel> {
    if visits < 2 {
        return Err(Error::InvalidArgument(format!("latent model needs at least 2 visits, got {visits}")));
    }
    if covariates != 1 {
        return Err(Error::InvalidArgument(format!(
            "latent model supports one binary covariate per visit, got {covariates}"
        )));
    }
    let bias = Prior::uniform("bias", priors.bias_bounds.0, priors.bias_bounds.1)?;
    let u_int = Prior::uniform("latent intercept", priors.u_intercept_bounds.0, priors.u_intercept_bounds.1)?;
    if !(priors.precision_shape > 0.0 && priors.precision_rate > 0.0) {
        return Err(Error::InvalidArgument("outcome precision prior needs positive shape and rate".into()));
    }
    let node = |response: Var, vars: Vec<Var>, latent_model: bool| -> NodeSpec {
        let name = match response {
            Var::One => "Y".to_string(),
            v => var_label(v, u_structure),
        };
        let terms = vars
            .into_iter()
            .map(|var| {
                let kind = match (var, latent_model) {
                    (Var::One, true) => Kind::LatentIntercept,
                    (Var::One, false) => Kind::Intercept,
                    (Var::U(_), _) => Kind::Bias,
                    _ => Kind::Coefficient,
                };
                let (prior, is_bias) = match kind {
                    Kind::Intercept => (Prior::Normal { precision: priors.intercept_precision }, false),
                    Kind::Coefficient => (Prior::Normal { precision: priors.coefficient_precision }, false),
                    Kind::Bias => (bias, true),
                    Kind::LatentIntercept => (u_int, true),
                };
                Term { name: format!("{name}.{}", var_label(var, u_structure)), var, prior, bias: is_bias }
            })
            .collect();
        NodeSpec { name, response, terms }
    };
    let mut nodes = Vec::new();
    let latent_count = match u_structure {
        UStructure::TimeVarying => visits,
        UStructure::TimeInvariant => 1,
    };
    if u_structure == UStructure::TimeInvariant {
        nodes.push(node(Var::U(0), vec![Var::One], true));
    }
    for j in 0..visits {
        let mut xv = vec![Var::One];
        if j > 0 {
            xv.push(Var::A(j - 1));
            if u_structure == UStructure::TimeVarying {
                xv.push(Var::U(j - 1));
            }
            xv.push(Var::X(j - 1));
        }
        nodes.push(node(Var::X(j), xv, false));
        if u_structure == UStructure::TimeVarying {
            let mut uv = vec![Var::One];
            if j > 0 {
                uv.push(Var::A(j - 1));
                uv.push(Var::U(j - 1));
            }
            uv.push(Var::X(j));
            if j > 0 {
                uv.push(Var::X(j - 1));
            }
            nodes.push(node(Var::U(j), uv, true));
        }
        let mut av = vec![Var::One];
        if j > 0 {
            av.push(Var::A(j - 1));
        }
        av.extend((0..=j).map(Var::X));
        match u_structure {
            UStructure::TimeVarying => av.extend((0..=j).map(Var::U)),
            UStructure::TimeInvariant => av.push(Var::U(0)),
        }
        nodes.push(node(Var::A(j), av, false));
    }
    let mut yv = vec![Var::One];
    yv.extend((0..visits).map(Var::X));
    yv.extend((0..visits).map(Var::A));
    yv.extend((0..latent_count).map(Var::U));
    let outcome = node(Var::One, yv, false);
    Ok(BsaModel {
        u_structure,
        visits,
        latent_count,
        nodes,
        outcome,
        precision_shape: priors.precision_shape,
        precision_rate: priors.precision_rate,
    })
}

impl BsaModel {
    /// Number of state columns: constant, X, A, latent.
    pub fn width(&self) -> usize {
        1 + 2 * self.visits + self.latent_count
    }

    pub fn column(&self, v: Var) -> usize {
        match v {
            Var::One => 0,
            Var::X(j) => 1 + j,
            Var::A(j) => 1 + self.visits + j,
            Var::U(m) => 1 + 2 * self.visits + m,
        }
    }

    /// Start offset of each logistic model's coefficients in a flat parameter
    /// vector, followed by the outcome model's offset.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len() + 1);
        let mut at = 0;
        for node in &self.nodes {
            out.push(at);
            at += node.terms.len();
        }
        out.push(at);
        out
    }

    /// Flat parameter layout: logistic coefficients, outcome coefficients, outcome precision.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> =
            self.nodes.iter().chain(std::iter::once(&self.outcome)).flat_map(|n| n.terms.iter().map(|t| t.name.clone())).collect();
        names.push("Y.precision".into());
        names
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.nodes.iter().chain(std::iter::once(&self.outcome)).flat_map(|n| n.terms.iter())
    }

    pub fn bias_parameters(&self) -> Vec<String> {
        self.terms().filter(|t| t.bias).map(|t| t.name.clone()).collect()
    }

    fn initial_parameters(&self, y: &[f64]) -> Vec<f64> {
        let mut p: Vec<f64> = self.terms().map(|t| t.prior.initial()).collect();
        let off = self.offsets()[self.nodes.len()];
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        p[off] = mean;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
        p.push(if var > 0.0 { 1.0 / var } else { 1.0 });
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub burn_in: usize,
    pub kept_iterations: usize,
    pub thin: usize,
    /// Starting random-walk scale for every logistic coefficient; adapted during burn-in.
    pub initial_scale: f64,
    /// Forward trajectories per posterior draw in g-computation; `None` uses n.
    pub mc_paths: Option<usize>,
}

impl ChainConfig {
    /// Reduced chain lengths used by the replication harness.
    pub fn short() -> Self {
        Self { burn_in: 2000, kept_iterations: 2000, thin: 2, ..Self::default() }
    }

    pub fn kept_draws(&self) -> usize {
        self.kept_iterations / self.thin
    }
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { burn_in: 25000, kept_iterations: 25000, thin: 5, initial_scale: 0.3, mc_paths: None }
    }
}

/// Raw output of one chain.
#[derive(Debug, Clone, Serialize)]
pub struct Chain {
    pub names: Vec<String>,
    pub draws: Vec<Vec<f64>>,
    /// Posterior mean of each latent value, `[subject][latent]`.
    pub u_mean: Vec<Vec<f64>>,
    pub acceptance_rates: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl Chain {
    pub fn draws_of(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.draws.iter().map(|d| d[k]).collect())
    }
}

/// Sampler state with cached linear predictors.
pub struct ChainState<'m> {
    model: &'m BsaModel,
    y: Vec<f64>,
    cols: Vec<Vec<f64>>,
    blocks: Vec<LogisticBlock>,
    beta: Vec<f64>,
    mu: Vec<f64>,
    precision: f64,
    /// Per latent column: (logistic model, term) pairs in which it is a regressor.
    links: Vec<Vec<(usize, usize)>>,
    /// Per latent column: outcome terms in which it is a regressor.
    y_links: Vec<Vec<usize>>,
    /// Per latent column: the logistic model it is the response of.
    own: Vec<usize>,
}

impl<'m> ChainState<'m> {
    /// `params` uses the flat layout of [`BsaModel::parameter_names`]; `u[m][i]` is latent m of subject i.
    pub fn new(model: &'m BsaModel, data: &LongitudinalDataset, params: &[f64], u: &[Vec<f64>], initial_scale: f64) -> Result<Self> {
        if data.visits() != model.visits || data.covariates() != 1 {
            return Err(Error::InvalidArgument("dataset shape does not match the latent model".into()));
        }
        if !data.covariates_binary() {
            return Err(Error::InvalidArgument("latent model needs a binary covariate".into()));
        }
        if params.len() != model.parameter_names().len() || u.len() != model.latent_count {
            return Err(Error::InvalidArgument("parameter or latent dimensions do not match the model".into()));
        }
        let n = data.n();
        let mut cols = vec![vec![0.0; n]; model.width()];
        cols[0] = vec![1.0; n];
        for j in 0..model.visits {
            for i in 0..n {
                cols[model.column(Var::X(j))][i] = data.x(i, j, 0);
                cols[model.column(Var::A(j))][i] = data.a(i, j) as f64;
            }
        }
        for (m, um) in u.iter().enumerate() {
            if um.len() != n || um.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidArgument("latent values must be 0/1, one per subject".into()));
            }
            cols[model.column(Var::U(m))] = um.clone();
        }
        let offsets = model.offsets();
        let mut blocks = Vec::with_capacity(model.nodes.len());
        let mut links = vec![Vec::new(); model.latent_count];
        let mut own = vec![usize::MAX; model.latent_count];
        for (k, node) in model.nodes.iter().enumerate() {
            let names = node.terms.iter().map(|t| t.name.clone()).collect();
            let priors = node.terms.iter().map(|t| t.prior).collect();
            let mut block = LogisticBlock::new(names, priors, n, initial_scale);
            block.beta.copy_from_slice(&params[offsets[k]..offsets[k] + node.terms.len()]);
            blocks.push(block);
            for (t, term) in node.terms.iter().enumerate() {
                if let Var::U(m) = term.var {
                    links[m].push((k, t));
                }
            }
            if let Var::U(m) = node.response {
                own[m] = k;
            }
        }
        let mut y_links = vec![Vec::new(); model.latent_count];
        for (t, term) in model.outcome.terms.iter().enumerate() {
            if let Var::U(m) = term.var {
                y_links[m].push(t);
            }
        }
        let yo = offsets[model.nodes.len()];
        let beta = params[yo..yo + model.outcome.terms.len()].to_vec();
        let precision = params[params.len() - 1];
        let mut state = Self {
            model,
            y: data.y().to_vec(),
            cols,
            blocks,
            beta,
            mu: vec![0.0; n],
            precision,
            links,
            y_links,
            own,
        };
        state.refresh();
        Ok(state)
    }

    fn refresh(&mut self) {
        for (k, node) in self.model.nodes.iter().enumerate() {
            let refs: Vec<&[f64]> = node.terms.iter().map(|t| self.cols[self.model.column(t.var)].as_slice()).collect();
            self.blocks[k].refresh_eta(&refs);
        }
        for i in 0..self.y.len() {
            self.mu[i] = self
                .model
                .outcome
                .terms
                .iter()
                .zip(&self.beta)
                .map(|(t, b)| b * self.cols[self.model.column(t.var)][i])
                .sum();
        }
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.blocks.iter().flat_map(|b| b.beta.iter().copied()).collect();
        p.extend_from_slice(&self.beta);
        p.push(self.precision);
        p
    }

    pub fn latent(&self, m: usize) -> &[f64] {
        &self.cols[self.model.column(Var::U(m))]
    }

    /// Log odds of latent m = 1 for subject i given everything else.
    pub fn u_log_odds(&self, i: usize, m: usize) -> f64 {
        let old = self.latent(m)[i];
        let mut lo = self.blocks[self.own[m]].eta[i];
        for &(c, t) in &self.links[m] {
            let b = self.blocks[c].beta[t];
            let e = self.blocks[c].eta[i] - b * old;
            let yc = self.cols[self.model.column(self.model.nodes[c].response)][i];
            lo += bernoulli_logit_ll(yc, e + b) - bernoulli_logit_ll(yc, e);
        }
        for &t in &self.y_links[m] {
            let b = self.beta[t];
            let r0 = self.y[i] - (self.mu[i] - b * old);
            let r1 = r0 - b;
            lo -= 0.5 * self.precision * (r1 * r1 - r0 * r0);
        }
        lo
    }

    fn update_latent(&mut self, rng: &mut RandomStream) {
        let n = self.y.len();
        for i in 0..n {
            for m in 0..self.model.latent_count {
                let p = inv_logit(self.u_log_odds(i, m));
                let new = (rng.random::<f64>() < p) as u8 as f64;
                let col = self.model.column(Var::U(m));
                let delta = new - self.cols[col][i];
                if delta != 0.0 {
                    self.cols[col][i] = new;
                    for &(c, t) in &self.links[m] {
                        let b = self.blocks[c].beta[t];
                        self.blocks[c].eta[i] += b * delta;
                    }
                    for &t in &self.y_links[m] {
                        self.mu[i] += self.beta[t] * delta;
                    }
                }
            }
        }
    }

    fn update_logistic(&mut self, rng: &mut RandomStream, adapting: bool) {
        for (k, node) in self.model.nodes.iter().enumerate() {
            let refs: Vec<&[f64]> = node.terms.iter().map(|t| self.cols[self.model.column(t.var)].as_slice()).collect();
            let resp = &self.cols[self.model.column(node.response)];
            self.blocks[k].sweep(resp, &refs, rng, adapting);
        }
    }

    /// Coordinatewise Gibbs for the outcome coefficients.
    fn update_outcome(&mut self, rng: &mut RandomStream) {
        for (t, term) in self.model.outcome.terms.iter().enumerate() {
            if term.prior.is_fixed() {
                continue;
            }
            let x = &self.cols[self.model.column(term.var)];
            let old = self.beta[t];
            let (mut sxx, mut sxr) = (0.0, 0.0);
            for i in 0..self.y.len() {
                if x[i] != 0.0 {
                    let r = self.y[i] - self.mu[i] + old * x[i];
                    sxx += x[i] * x[i];
                    sxr += x[i] * r;
                }
            }
            let new = match term.prior {
                Prior::Normal { precision } => {
                    let p = self.precision * sxx + precision;
                    let z: f64 = rng.sample(StandardNormal);
                    self.precision * sxr / p + z / p.sqrt()
                }
                Prior::Uniform { lo, hi } => {
                    if sxx == 0.0 {
                        rng.random_range(lo..=hi)
                    } else {
                        truncated_normal(rng, sxr / sxx, 1.0 / (self.precision * sxx).sqrt(), lo, hi)
                    }
                }
            };
            let delta = new - old;
            self.beta[t] = new;
            for i in 0..self.y.len() {
                if x[i] != 0.0 {
                    self.mu[i] += delta * x[i];
                }
            }
        }
    }

    fn update_precision(&mut self, rng: &mut RandomStream) {
        let rss: f64 = self.y.iter().zip(&self.mu).map(|(y, m)| (y - m).powi(2)).sum();
        let shape = self.model.precision_shape + 0.5 * self.y.len() as f64;
        let rate = self.model.precision_rate + 0.5 * rss;
        self.precision = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters").sample(rng);
    }

    pub fn sweep(&mut self, rng: &mut RandomStream, adapting: bool) {
        self.update_latent(rng);
        self.sweep_parameters(rng, adapting);
    }

    /// Parameter updates only, holding the latent values fixed.
    pub fn sweep_parameters(&mut self, rng: &mut RandomStream, adapting: bool) {
        self.update_logistic(rng, adapting);
        self.update_outcome(rng);
        self.update_precision(rng);
    }
}

/// Draw from N(mean, sd²) restricted to [lo, hi] by inversion in the lower tail.
pub fn truncated_normal(rng: &mut RandomStream, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    let z = std_truncated((lo - mean) / sd, (hi - mean) / sd, u);
    (mean + sd * z).clamp(lo, hi)
}

fn std_truncated(a: f64, b: f64, u: f64) -> f64 {
    if a > 0.0 {
        return -std_truncated(-b, -a, u);
    }
    let n = Normal::standard();
    let (pa, pb) = (n.cdf(a), n.cdf(b));
    if pb - pa <= 0.0 {
        return b;
    }
    n.inverse_cdf(pa + u * (pb - pa)).clamp(a, b)
}

/// Complete-data log likelihood of all logistic models and the outcome model.
pub fn complete_log_likelihood(model: &BsaModel, data: &LongitudinalDataset, params: &[f64], u: &[Vec<f64>]) -> f64 {
    let offsets = model.offsets();
    let precision = params[params.len() - 1];
    let mut ll = 0.0;
    let value = |v: Var, i: usize| -> f64 {
        match v {
            Var::One => 1.0,
            Var::X(j) => data.x(i, j, 0),
            Var::A(j) => data.a(i, j) as f64,
            Var::U(m) => u[m][i],
        }
    };
    for i in 0..data.n() {
        for (k, node) in model.nodes.iter().enumerate() {
            let eta: f64 = node.terms.iter().enumerate().map(|(t, term)| params[offsets[k] + t] * value(term.var, i)).sum();
            ll += bernoulli_logit_ll(value(node.response, i), eta);
        }
        let yo = offsets[model.nodes.len()];
        let mu: f64 = model.outcome.terms.iter().enumerate().map(|(t, term)| params[yo + t] * value(term.var, i)).sum();
        let r = data.y()[i] - mu;
        ll += 0.5 * (precision / (2.0 * std::f64::consts::PI)).ln() - 0.5 * precision * r * r;
    }
    ll
}

pub fn run_chain(model: &BsaModel, data: &LongitudinalDataset, cfg: &ChainConfig, seed: &SeedSpec) -> Result<Chain> {
    if cfg.thin == 0 {
        return Err(Error::InvalidArgument("thin must be at least 1".into()));
    }
    if cfg.kept_draws() == 0 {
        return Err(Error::InvalidArgument("chain keeps no draws".into()));
    }
    data.ensure_estimable(false)?;
    let n = data.n();
    let mut rng = seed.stream("bsa-chain", 0);
    let params = model.initial_parameters(data.y());
    let u: Vec<Vec<f64>> =
        (0..model.latent_count).map(|_| (0..n).map(|_| rng.random_range(0..2) as f64).collect()).collect();
    let mut state = ChainState::new(model, data, &params, &u, cfg.initial_scale)?;
    for _ in 0..cfg.burn_in {
        state.sweep(&mut rng, true);
    }
    let mut draws = Vec::with_capacity(cfg.kept_draws());
    let mut u_sum = vec![vec![0.0; model.latent_count]; n];
    for it in 1..=cfg.kept_draws() * cfg.thin {
        state.sweep(&mut rng, false);
        if it % cfg.thin == 0 {
            draws.push(state.parameters());
            for (m, _) in u.iter().enumerate() {
                for (i, v) in state.latent(m).iter().enumerate() {
                    u_sum[i][m] += v;
                }
            }
        }
    }
    let kept = draws.len() as f64;
    let u_mean = u_sum.into_iter().map(|r| r.into_iter().map(|s| s / kept).collect()).collect();
    let mut acceptance_rates = BTreeMap::new();
    let mut warnings = Vec::new();
    for block in &state.blocks {
        for ((name, adapter), prior) in block.names.iter().zip(&block.adapters).zip(&block.priors) {
            if prior.is_fixed() {
                continue;
            }
            if let Some(rate) = adapter.acceptance_rate() {
                if !(0.05..=0.95).contains(&rate) {
                    let msg = format!("acceptance rate {rate:.3} for {name} outside [0.05, 0.95]");
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
                acceptance_rates.insert(name.clone(), rate);
            }
        }
    }
    Ok(Chain { names: model.parameter_names(), draws, u_mean, acceptance_rates, warnings })
}

fn apo_for_draw(model: &BsaModel, offsets: &[usize], params: &[f64], regime: &[u8], paths: usize, rng: &mut RandomStream) -> f64 {
    let mut state = vec![0.0; model.width()];
    state[0] = 1.0;
    let yo = offsets[model.nodes.len()];
    let mut total = 0.0;
    for _ in 0..paths {
        for (k, node) in model.nodes.iter().enumerate() {
            let col = model.column(node.response);
            state[col] = match node.response {
                Var::A(j) => regime[j] as f64,
                _ => {
                    let eta: f64 =
                        node.terms.iter().enumerate().map(|(t, term)| params[offsets[k] + t] * state[model.column(term.var)]).sum();
                    (rng.random::<f64>() < inv_logit(eta)) as u8 as f64
                }
            };
        }
        total += model.outcome.terms.iter().enumerate().map(|(t, term)| params[yo + t] * state[model.column(term.var)]).sum::<f64>();
    }
    total / paths as f64
}

/// One potential outcome mean per posterior draw. Draw s always uses stream
/// `("gcomp", s)`, so two regimes evaluated with the same seed share random numbers.
pub fn gcomp_apo(model: &BsaModel, draws: &[Vec<f64>], regime: &TreatmentRegime, mc_paths: usize, seed: &SeedSpec) -> Result<Vec<f64>> {
    if mc_paths == 0 {
        return Err(Error::InvalidArgument("mc_paths must be at least 1".into()));
    }
    if regime.len() != model.visits {
        return Err(Error::InvalidArgument(format!("regime {regime} does not have {} visits", model.visits)));
    }
    let offsets = model.offsets();
    Ok(draws
        .par_iter()
        .enumerate()
        .map(|(s, p)| {
            let mut rng = seed.stream("gcomp", s as u64);
            apo_for_draw(model, &offsets, p, regime.as_slice(), mc_paths, &mut rng)
        })
        .collect())
}

/// Geweke's convergence Z-score with batch-means variance estimates (20 batches per window).
pub fn geweke_z(chain: &[f64], first_frac: f64, last_frac: f64) -> Result<f64> {
    if chain.len() < 100 {
        return Err(Error::ShortChain(chain.len()));
    }
    if !(first_frac > 0.0 && last_frac > 0.0 && first_frac + last_frac <= 1.0) {
        return Err(Error::InvalidArgument("window fractions must be positive and sum to at most 1".into()));
    }
    let nf = ((chain.len() as f64 * first_frac) as usize).max(2);
    let nl = ((chain.len() as f64 * last_frac) as usize).max(2);
    let (mf, vf) = window_stats(&chain[..nf])?;
    let (ml, vl) = window_stats(&chain[chain.len() - nl..])?;
    Ok((mf - ml) / (vf + vl).sqrt())
}

/// Window mean and the batch-means variance of that mean.
fn window_stats(w: &[f64]) -> Result<(f64, f64)> {
    let batches = 20.min(w.len());
    let size = w.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| w[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var_means = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    if var_means <= 0.0 {
        return Err(Error::ConstantChain);
    }
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    Ok((mean, var_means * size as f64 / w.len() as f64))
}

#[derive(Debug, Clone, Serialize)]
pub struct BsaPosterior {
    pub chain: Chain,
    pub apo_draws: BTreeMap<String, Vec<f64>>,
    pub ate_draws: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub ci95: (f64, f64),
    pub geweke: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AteSummary {
    pub mean: f64,
    pub sd: f64,
    pub ci95: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct BsaSummary {
    pub ate: AteSummary,
    pub geweke: BTreeMap<String, f64>,
    pub acceptance_rates: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    pub kept_draws: usize,
}

impl BsaPosterior {
    pub fn summary(&self) -> BsaSummary {
        BsaSummary {
            ate: AteSummary { mean: self.mean, sd: self.sd, ci95: self.ci95 },
            geweke: self.geweke.clone(),
            acceptance_rates: self.chain.acceptance_rates.clone(),
            warnings: self.chain.warnings.clone(),
            kept_draws: self.ate_draws.len(),
        }
    }
}

/// Runs the chain, then g-computes the always- versus never-treated contrast.
pub fn fit_bsa(model: &BsaModel, data: &LongitudinalDataset, cfg: &ChainConfig, seed: &SeedSpec) -> Result<BsaPosterior> {
    let mut chain = run_chain(model, data, cfg, seed)?;
    let paths = cfg.mc_paths.unwrap_or(data.n()).max(1);
    let gseed = seed.child("gcomp", 0);
    let treated = TreatmentRegime::always(model.visits);
    let control = TreatmentRegime::never(model.visits);
    let apo1 = gcomp_apo(model, &chain.draws, &treated, paths, &gseed)?;
    let apo0 = gcomp_apo(model, &chain.draws, &control, paths, &gseed)?;
    let ate_draws: Vec<f64> = apo1.iter().zip(&apo0).map(|(a, b)| a - b).collect();
    let (mean, sd, ci95) = posterior_summary(&ate_draws);
    let mut geweke = BTreeMap::new();
    let monitored = model.outcome.terms.iter().filter(|t| !t.prior.is_fixed()).map(|t| t.name.as_str());
    for name in monitored {
        let v = chain.draws_of(name).expect("outcome term is a parameter");
        match geweke_z(&v, 0.1, 0.5) {
            Ok(z) => {
                geweke.insert(name.to_string(), z);
            }
            Err(e) => chain.warnings.push(format!("no Geweke score for {name}: {e}")),
        }
    }
    match geweke_z(&ate_draws, 0.1, 0.5) {
        Ok(z) => {
            geweke.insert("ATE".into(), z);
        }
        Err(e) => chain.warnings.push(format!("no Geweke score for ATE: {e}")),
    }
    let mut apo_draws = BTreeMap::new();
    apo_draws.insert(treated.to_string(), apo1);
    apo_draws.insert(control.to_string(), apo0);
    Ok(BsaPosterior { chain, apo_draws, ate_draws, mean, sd, ci95, geweke })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SubjectRecord;

    fn toy(n: usize, seed: u64) -> LongitudinalDataset {
        let mut rng = SeedSpec::new(seed).stream("toy", 0);
        let records = (0..n)
            .map(|i| SubjectRecord {
                id: format!("s{i}"),
                x: (0..3).map(|_| vec![rng.random_range(0..2) as f64]).collect(),
                a: (0..3).map(|_| rng.random_range(0..2) as u8).collect(),
                y: rng.random_range(-3.0..3.0),
                u: None,
            })
            .collect();
        LongitudinalDataset::from_records(3, 1, None, records).unwrap()
    }

    fn random_params(model: &BsaModel, rng: &mut RandomStream) -> Vec<f64> {
        let mut p: Vec<f64> = model.terms().map(|_| rng.random_range(-1.5..1.5)).collect();
        p.push(rng.random_range(0.2..2.0));
        p
    }

    #[test]
    fn regressors_respect_time_order() {
        for s in [UStructure::TimeVarying, UStructure::TimeInvariant] {
            let model = build_model(3, 1, s, &PriorConfig::default()).unwrap();
            let mut seen = vec![model.column(Var::One)];
            if s == UStructure::TimeInvariant {
                assert_eq!(model.nodes[0].response, Var::U(0));
            }
            for node in &model.nodes {
                for t in &node.terms {
                    assert!(seen.contains(&model.column(t.var)), "{} uses a variable not yet generated", t.name);
                }
                seen.push(model.column(node.response));
            }
            let names = model.parameter_names();
            let mut uniq = names.clone();
            uniq.sort();
            uniq.dedup();
            assert_eq!(uniq.len(), names.len());
        }
    }

    #[test]
    fn bias_set_is_latent_links_and_latent_intercepts() {
        let model = build_model(3, 1, UStructure::TimeVarying, &PriorConfig::default()).unwrap();
        for node in model.nodes.iter().chain([&model.outcome]) {
            for t in &node.terms {
                let expect = matches!(t.var, Var::U(_)) || (matches!(node.response, Var::U(_)) && t.var == Var::One);
                assert_eq!(t.bias, expect, "{}", t.name);
            }
        }
        let u1 = &model.nodes.iter().find(|n| n.name == "U1").unwrap().terms[0];
        assert_eq!(u1.prior, Prior::Uniform { lo: -5.0, hi: 5.0 });
        let ti = build_model(3, 1, UStructure::TimeInvariant, &PriorConfig::default()).unwrap();
        for node in ti.nodes.iter().filter(|n| matches!(n.response, Var::X(_))) {
            assert!(node.terms.iter().all(|t| !matches!(t.var, Var::U(_))));
        }
    }

    #[test]
    fn invalid_bounds_rejected() {
        let cfg = PriorConfig::default().with_bias_bounds(1.0, -1.0);
        assert!(matches!(build_model(3, 1, UStructure::TimeVarying, &cfg), Err(Error::InvalidPrior { .. })));
        assert!(build_model(1, 1, UStructure::TimeVarying, &PriorConfig::default()).is_err());
        assert!(build_model(3, 1, UStructure::TimeVarying, &PriorConfig::default().with_bias_bounds(0.0, 0.0)).is_ok());
    }

    #[test]
    fn gibbs_odds_match_joint_likelihood_ratio() {
        let data = toy(3, 1);
        for s in [UStructure::TimeVarying, UStructure::TimeInvariant] {
            let model = build_model(3, 1, s, &PriorConfig::default()).unwrap();
            let mut rng = SeedSpec::new(2).stream("params", 0);
            for _ in 0..5 {
                let params = random_params(&model, &mut rng);
                let u: Vec<Vec<f64>> =
                    (0..model.latent_count).map(|_| (0..3).map(|_| rng.random_range(0..2) as f64).collect()).collect();
                let state = ChainState::new(&model, &data, &params, &u, 0.3).unwrap();
                for m in 0..model.latent_count {
                    for i in 0..3 {
                        let mut u1 = u.clone();
                        u1[m][i] = 1.0;
                        let mut u0 = u.clone();
                        u0[m][i] = 0.0;
                        let brute = complete_log_likelihood(&model, &data, &params, &u1)
                            - complete_log_likelihood(&model, &data, &params, &u0);
                        let got = state.u_log_odds(i, m);
                        assert!((got - brute).abs() <= 1e-10 * brute.abs().max(1.0), "{s} m={m} i={i}: {got} vs {brute}");
                    }
                }
            }
        }
    }

    #[test]
    fn lone_outcome_link_with_zero_effect_gives_own_model_odds() {
        let data = toy(1, 5);
        let model = build_model(3, 1, UStructure::TimeVarying, &PriorConfig::default()).unwrap();
        let names = model.parameter_names();
        let mut params = vec![0.0; names.len()];
        *params.last_mut().unwrap() = 1.0;
        params[names.iter().position(|n| n == "U1.intercept").unwrap()] = 0.7;
        params[names.iter().position(|n| n == "U1.X1").unwrap()] = -0.4;
        let u = vec![vec![1.0]; 3];
        let state = ChainState::new(&model, &data, &params, &u, 0.3).unwrap();
        let expect = 0.7 - 0.4 * data.x(0, 0, 0);
        assert_eq!(state.u_log_odds(0, 0), expect);
    }

    #[test]
    fn constant_outcome_model_gives_its_intercept() {
        let model = build_model(3, 1, UStructure::TimeVarying, &PriorConfig::default()).unwrap();
        let mut rng = SeedSpec::new(9).stream("params", 0);
        let mut p = random_params(&model, &mut rng);
        let yo = model.offsets()[model.nodes.len()];
        for v in &mut p[yo..yo + model.outcome.terms.len()] {
            *v = 0.0;
        }
        p[yo] = 10.0;
        let apo = gcomp_apo(&model, &[p], &TreatmentRegime::always(3), 997, &SeedSpec::new(1)).unwrap();
        assert_eq!(apo, vec![10.0]);
    }

    #[test]
    fn regime_free_model_gives_identical_apos() {
        let model = build_model(3, 1, UStructure::TimeVarying, &PriorConfig::default()).unwrap();
        let mut rng = SeedSpec::new(11).stream("params", 0);
        let draws: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut p = random_params(&model, &mut rng);
                for (k, t) in model.terms().enumerate() {
                    if matches!(t.var, Var::A(_)) {
                        p[k] = 0.0;
                    }
                }
                p
            })
            .collect();
        let seed = SeedSpec::new(3);
        let a1 = gcomp_apo(&model, &draws, &TreatmentRegime::always(3), 200, &seed).unwrap();
        let a0 = gcomp_apo(&model, &draws, &TreatmentRegime::never(3), 200, &seed).unwrap();
        assert_eq!(a1, a0);
    }

    #[test]
    fn geweke_edge_cases() {
        assert!(matches!(geweke_z(&[1.0; 500], 0.1, 0.5), Err(Error::ConstantChain)));
        assert!(matches!(geweke_z(&[1.0; 50], 0.1, 0.5), Err(Error::ShortChain(50))));
        let step: Vec<f64> = (0..1000).map(|i| if i < 500 { 0.0 } else { 1.0 } + 0.01 * ((i * 7919) % 13) as f64).collect();
        assert!(geweke_z(&step, 0.1, 0.5).unwrap().abs() > 10.0);
    }

    #[test]
    fn truncated_normal_stays_in_bounds_far_in_tail() {
        let mut rng = SeedSpec::new(1).stream("tn", 0);
        for &(m, lo, hi) in &[(0.0, -2.0, 2.0), (50.0, -2.0, 2.0), (-80.0, -2.0, 2.0), (0.0, 1.0, 1.5)] {
            for _ in 0..200 {
                let v = truncated_normal(&mut rng, m, 1.0, lo, hi);
                assert!((lo..=hi).contains(&v));
            }
        }
        let mean = (0..20000).map(|_| truncated_normal(&mut rng, 0.0, 1.0, 0.0, f64::INFINITY)).sum::<f64>() / 20000.0;
        assert!((mean - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.02);
    }
}
