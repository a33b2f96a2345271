//! The five simulation data-generating processes.
//!
//! Every process is a [`StructuralModel`]: an ordered list of nodes sampled
//! one after another (latent confounders, then the covariate, then the
//! treatment at each visit) followed by a Normal outcome. Bernoulli nodes use
//! a logit link. Coefficients are addressed by name, e.g. `A2.X1`,
//! `U2.intercept`, `U1.sd` or `Y.sd`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{LongitudinalDataset, SubjectRecord, TreatmentRegime};
use crate::error::{Error, Result};
use crate::glm::inv_logit;
use crate::seed::RandomStream;

pub const VISITS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    TvBinaryU,
    TvNormalU,
    TwoTvU,
    TiBinaryU,
    NoU,
}

impl Scenario {
    pub const ALL: [Scenario; 5] =
        [Scenario::TvBinaryU, Scenario::TvNormalU, Scenario::TwoTvU, Scenario::TiBinaryU, Scenario::NoU];

    pub fn cli_name(self) -> &'static str {
        match self {
            Scenario::TvBinaryU => "tv-binary-u",
            Scenario::TvNormalU => "tv-normal-u",
            Scenario::TwoTvU => "two-tv-u",
            Scenario::TiBinaryU => "ti-binary-u",
            Scenario::NoU => "no-u",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.cli_name() == s)
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

/// Coefficient set used to build a scenario.
///
/// `Reported` uses a positive latent autoregression (+0.5) and, for the
/// continuous latent, outcome loadings of 0.1; these reproduce the published
/// true effects. `Printed` follows the published equations literally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CoefficientPreset {
    #[default]
    Reported,
    Printed,
}

impl FromStr for CoefficientPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reported" => Ok(Self::Reported),
            "printed" => Ok(Self::Printed),
            other => Err(Error::InvalidArgument(format!("unknown coefficient preset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Latent { visit: usize, dim: usize },
    Covariate { visit: usize },
    Treatment { visit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeDist {
    /// Logit link.
    Bernoulli,
    Normal { sd: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub role: Role,
    pub dist: NodeDist,
    pub intercept: f64,
    /// `(parent node index, coefficient)`
    pub terms: Vec<(usize, f64)>,
}

impl Node {
    pub fn linear_predictor(&self, state: &[f64]) -> f64 {
        self.terms.iter().fold(self.intercept, |acc, &(k, b)| acc + b * state[k])
    }

    /// P(node = 1 | parents). Bernoulli nodes only.
    pub fn prob_one(&self, state: &[f64]) -> f64 {
        inv_logit(self.linear_predictor(state))
    }

    pub fn is_binary(&self) -> bool {
        matches!(self.dist, NodeDist::Bernoulli)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeNode {
    pub intercept: f64,
    pub terms: Vec<(usize, f64)>,
    pub sd: f64,
}

impl OutcomeNode {
    pub fn mean(&self, state: &[f64]) -> f64 {
        self.terms.iter().fold(self.intercept, |acc, &(k, b)| acc + b * state[k])
    }
}

/// Ordered structural equations for one process.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralModel {
    visits: usize,
    nodes: Vec<Node>,
    outcome: OutcomeNode,
    latent_dims: Vec<usize>,
    treatment_nodes: Vec<usize>,
    covariate_nodes: Vec<usize>,
}

impl StructuralModel {
    pub fn visits(&self) -> usize {
        self.visits
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn outcome(&self) -> &OutcomeNode {
        &self.outcome
    }

    /// Latent count per visit, or `None` when the process has no latent confounder.
    pub fn latent_dims(&self) -> Option<Vec<usize>> {
        if self.latent_dims.iter().all(|&d| d == 0) {
            None
        } else {
            Some(self.latent_dims.clone())
        }
    }

    /// Node index of the treatment at visit `j` (0-based).
    pub fn treatment_node(&self, j: usize) -> usize {
        self.treatment_nodes[j]
    }

    pub fn covariate_node(&self, j: usize) -> usize {
        self.covariate_nodes[j]
    }

    pub fn all_binary(&self) -> bool {
        self.nodes.iter().all(Node::is_binary)
    }

    /// First continuous node, if any.
    pub fn continuous_node(&self) -> Option<&str> {
        self.nodes.iter().find(|n| !n.is_binary()).map(|n| n.name.as_str())
    }

    /// Every coefficient as `(name, value)` in structural order.
    pub fn coefficients(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for node in &self.nodes {
            out.push((format!("{}.intercept", node.name), node.intercept));
            for &(k, b) in &node.terms {
                out.push((format!("{}.{}", node.name, self.nodes[k].name), b));
            }
            if let NodeDist::Normal { sd } = node.dist {
                out.push((format!("{}.sd", node.name), sd));
            }
        }
        out.push(("Y.intercept".into(), self.outcome.intercept));
        for &(k, b) in &self.outcome.terms {
            out.push((format!("Y.{}", self.nodes[k].name), b));
        }
        out.push(("Y.sd".into(), self.outcome.sd));
        out
    }

    /// One `name = value` line per coefficient.
    pub fn render_coefficients(&self) -> String {
        self.coefficients().iter().map(|(n, v)| format!("{n} = {v}\n")).collect()
    }

    pub fn set_coefficient(&mut self, name: &str, value: f64) -> Result<()> {
        let unknown = || Error::UnknownCoefficient(name.to_string());
        let (target, param) = name.split_once('.').ok_or_else(unknown)?;
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!("coefficient {name} must be finite")));
        }
        if target == "Y" {
            match param {
                "intercept" => self.outcome.intercept = value,
                "sd" if value > 0.0 => self.outcome.sd = value,
                _ => {
                    let k = self.node_index(param).ok_or_else(unknown)?;
                    let slot = self.outcome.terms.iter_mut().find(|t| t.0 == k).ok_or_else(unknown)?;
                    slot.1 = value;
                }
            }
            return Ok(());
        }
        let idx = self.node_index(target).ok_or_else(unknown)?;
        let parent = self.node_index(param);
        let node = &mut self.nodes[idx];
        match param {
            "intercept" => node.intercept = value,
            "sd" => match &mut node.dist {
                NodeDist::Normal { sd } if value > 0.0 => *sd = value,
                _ => return Err(unknown()),
            },
            _ => {
                let k = parent.ok_or_else(unknown)?;
                node.terms.iter_mut().find(|t| t.0 == k).ok_or_else(unknown)?.1 = value;
            }
        }
        Ok(())
    }

    fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Draws one subject's full state (all nodes) plus the outcome. Treatments
    /// are drawn naturally unless `regime` clamps them.
    pub fn draw_path(&self, rng: &mut RandomStream, regime: Option<&[u8]>, state: &mut [f64]) {
        self.draw_from(0, rng, regime, state);
    }

    /// Continues a path from node `start`, leaving earlier entries of `state` untouched.
    pub fn draw_from(&self, start: usize, rng: &mut RandomStream, regime: Option<&[u8]>, state: &mut [f64]) {
        for (k, node) in self.nodes.iter().enumerate().skip(start) {
            state[k] = match (node.role, regime) {
                (Role::Treatment { visit }, Some(r)) => r[visit] as f64,
                _ => draw_node(node, state, rng),
            };
        }
    }

    pub fn draw_outcome(&self, state: &[f64], rng: &mut RandomStream) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.outcome.mean(state) + self.outcome.sd * z
    }

    fn record(&self, i: usize, state: &[f64], y: f64) -> SubjectRecord {
        let mut x = vec![Vec::with_capacity(1); self.visits];
        let mut a = vec![0u8; self.visits];
        let mut u: Vec<Vec<f64>> = self.latent_dims.iter().map(|&d| vec![0.0; d]).collect();
        for (k, node) in self.nodes.iter().enumerate() {
            match node.role {
                Role::Latent { visit, dim } => u[visit][dim] = state[k],
                Role::Covariate { visit } => x[visit].push(state[k]),
                Role::Treatment { visit } => a[visit] = state[k] as u8,
            }
        }
        SubjectRecord {
            id: (i + 1).to_string(),
            x,
            a,
            y,
            u: self.latent_dims().map(|_| u),
        }
    }
}

fn draw_node(node: &Node, state: &[f64], rng: &mut RandomStream) -> f64 {
    let eta = node.linear_predictor(state);
    match node.dist {
        NodeDist::Bernoulli => (rng.random::<f64>() < inv_logit(eta)) as u8 as f64,
        NodeDist::Normal { sd } => {
            let z: f64 = rng.sample(StandardNormal);
            eta + sd * z
        }
    }
}

struct Builder {
    nodes: Vec<Node>,
    latent_dims: Vec<usize>,
}

impl Builder {
    fn new() -> Self {
        Self { nodes: Vec::new(), latent_dims: vec![0; VISITS] }
    }

    fn index(&self, name: &str) -> usize {
        self.nodes.iter().position(|n| n.name == name).unwrap_or_else(|| panic!("unknown parent {name}"))
    }

    fn terms(&self, terms: &[(&str, f64)]) -> Vec<(usize, f64)> {
        terms.iter().map(|&(p, b)| (self.index(p), b)).collect()
    }

    fn node(&mut self, name: &str, role: Role, dist: NodeDist, intercept: f64, terms: &[(&str, f64)]) {
        if let Role::Latent { visit, dim } = role {
            self.latent_dims[visit] = self.latent_dims[visit].max(dim + 1);
        }
        let terms = self.terms(terms);
        self.nodes.push(Node { name: name.to_string(), role, dist, intercept, terms });
    }

    fn latent(&mut self, name: &str, visit: usize, dim: usize, dist: NodeDist, intercept: f64, terms: &[(&str, f64)]) {
        self.node(name, Role::Latent { visit, dim }, dist, intercept, terms);
    }

    fn covariate(&mut self, visit: usize, intercept: f64, terms: &[(&str, f64)]) {
        self.node(&format!("X{}", visit + 1), Role::Covariate { visit }, NodeDist::Bernoulli, intercept, terms);
    }

    fn treatment(&mut self, visit: usize, intercept: f64, terms: &[(&str, f64)]) {
        self.node(&format!("A{}", visit + 1), Role::Treatment { visit }, NodeDist::Bernoulli, intercept, terms);
    }

    fn finish(self, intercept: f64, terms: &[(&str, f64)], sd: f64) -> StructuralModel {
        let outcome = OutcomeNode { intercept, terms: self.terms(terms), sd };
        let find = |want: fn(Role) -> Option<usize>| {
            let mut idx = vec![usize::MAX; VISITS];
            for (k, n) in self.nodes.iter().enumerate() {
                if let Some(j) = want(n.role) {
                    idx[j] = k;
                }
            }
            idx
        };
        let treatment_nodes = find(|r| match r {
            Role::Treatment { visit } => Some(visit),
            _ => None,
        });
        let covariate_nodes = find(|r| match r {
            Role::Covariate { visit } => Some(visit),
            _ => None,
        });
        StructuralModel {
            visits: VISITS,
            nodes: self.nodes,
            outcome,
            latent_dims: self.latent_dims,
            treatment_nodes,
            covariate_nodes,
        }
    }
}

const BERN: NodeDist = NodeDist::Bernoulli;
const NORMAL_SD: f64 = 2.0;
const NORM: NodeDist = NodeDist::Normal { sd: NORMAL_SD };

/// Shared covariate equations: X1 ~ Bernoulli(0.5), X_j on (X_{j-1}, A_{j-1}).
fn covariate_eq(b: &mut Builder, j: usize) {
    if j == 0 {
        b.covariate(0, 0.0, &[]);
    } else {
        let (xp, ap) = (format!("X{j}"), format!("A{j}"));
        b.covariate(j, 0.0, &[(&xp, 0.5), (&ap, 0.5)]);
    }
}

const OUTCOME_AX: [(&str, f64); 6] = [("A3", -4.0), ("A2", -3.0), ("A1", -2.0), ("X1", -1.0), ("X2", -2.0), ("X3", -3.0)];

fn with_ax(extra: &[(&'static str, f64)]) -> Vec<(&'static str, f64)> {
    OUTCOME_AX.iter().copied().chain(extra.iter().copied()).collect()
}

fn tv_binary(rho: f64) -> StructuralModel {
    let mut b = Builder::new();
    b.latent("U1", 0, 0, BERN, 0.0, &[]);
    covariate_eq(&mut b, 0);
    b.treatment(0, 1.0, &[("X1", 0.5), ("U1", -0.5)]);
    b.latent("U2", 1, 0, BERN, 0.0, &[("U1", rho), ("A1", -0.5)]);
    covariate_eq(&mut b, 1);
    b.treatment(1, 1.0, &[("A1", -0.3), ("X1", 0.4), ("X2", 0.5), ("U1", -0.4), ("U2", -0.5)]);
    b.latent("U3", 2, 0, BERN, 0.0, &[("U2", rho), ("A2", -0.5)]);
    covariate_eq(&mut b, 2);
    b.treatment(
        2,
        1.0,
        &[("A2", -0.3), ("X1", 0.4), ("X2", 0.5), ("X3", 0.6), ("U1", -0.3), ("U2", -0.4), ("U3", -0.5)],
    );
    b.finish(10.0, &with_ax(&[("U1", 1.0), ("U2", 2.0), ("U3", 3.0)]), 2.0)
}

fn tv_normal(rho: f64, loadings: [f64; 3]) -> StructuralModel {
    let mut b = Builder::new();
    b.latent("U1", 0, 0, NORM, 0.5, &[]);
    covariate_eq(&mut b, 0);
    b.treatment(0, 0.0, &[("X1", 0.5), ("U1", -0.5)]);
    b.latent("U2", 1, 0, NORM, 0.0, &[("U1", rho), ("A1", -0.5)]);
    covariate_eq(&mut b, 1);
    b.treatment(1, 0.0, &[("A1", -0.3), ("X1", 0.4), ("X2", 0.5), ("U1", -0.2), ("U2", -0.2)]);
    b.latent("U3", 2, 0, NORM, 0.0, &[("U2", rho), ("A2", -0.5)]);
    covariate_eq(&mut b, 2);
    b.treatment(
        2,
        0.0,
        &[("A2", -0.3), ("X1", 0.4), ("X2", 0.5), ("X3", 0.6), ("U1", -0.4), ("U2", -0.5), ("U3", -0.6)],
    );
    b.finish(10.0, &with_ax(&[("U1", loadings[0]), ("U2", loadings[1]), ("U3", loadings[2])]), 2.0)
}

fn two_tv(rho: f64) -> StructuralModel {
    let mut b = Builder::new();
    b.latent("U1_1", 0, 0, BERN, 0.0, &[]);
    b.latent("U1_2", 0, 1, NORM, 0.5, &[]);
    covariate_eq(&mut b, 0);
    b.treatment(0, 0.0, &[("X1", 0.5), ("U1_1", -0.5), ("U1_2", -0.2)]);
    b.latent("U2_1", 1, 0, BERN, 0.0, &[("U1_1", rho), ("A1", -0.5)]);
    b.latent("U2_2", 1, 1, NORM, 0.0, &[("U1_2", rho), ("A1", -0.5)]);
    covariate_eq(&mut b, 1);
    b.treatment(
        1,
        1.0,
        &[("A1", -0.3), ("X1", 0.4), ("X2", 0.5), ("U1_1", -0.2), ("U2_1", -0.4), ("U1_2", -0.1), ("U2_2", -0.1)],
    );
    b.latent("U3_1", 2, 0, BERN, 0.0, &[("U2_1", rho), ("A2", -0.5)]);
    b.latent("U3_2", 2, 1, NORM, 0.0, &[("U2_2", rho), ("A2", -0.5)]);
    covariate_eq(&mut b, 2);
    b.treatment(
        2,
        1.0,
        &[
            ("A2", -0.3),
            ("X1", 0.3),
            ("X2", 0.5),
            ("X3", 0.6),
            ("U1_1", -0.2),
            ("U2_1", -0.3),
            ("U3_1", -0.4),
            ("U1_2", -0.1),
            ("U2_2", -0.1),
            ("U3_2", -0.1),
        ],
    );
    let extra = [("U1_1", 1.0), ("U2_1", 2.0), ("U3_1", 3.0), ("U1_2", 0.1), ("U2_2", 0.1), ("U3_2", 0.1)];
    b.finish(10.0, &with_ax(&extra), 2.0)
}

fn ti_binary() -> StructuralModel {
    let mut b = Builder::new();
    b.latent("U", 0, 0, BERN, (0.4f64 / 0.6).ln(), &[]);
    covariate_eq(&mut b, 0);
    b.treatment(0, 0.0, &[("X1", 0.5), ("U", -0.5)]);
    covariate_eq(&mut b, 1);
    b.treatment(1, 0.0, &[("A1", 0.5), ("X1", 0.5), ("X2", 0.5), ("U", -0.5)]);
    covariate_eq(&mut b, 2);
    b.treatment(2, 0.0, &[("A2", 0.5), ("X1", 0.5), ("X2", 0.5), ("X3", 0.5), ("U", -0.5)]);
    b.finish(10.0, &with_ax(&[("U", 3.0)]), 2.0)
}

fn no_u() -> StructuralModel {
    let mut b = Builder::new();
    covariate_eq(&mut b, 0);
    b.treatment(0, -0.1, &[("X1", 0.2)]);
    covariate_eq(&mut b, 1);
    b.treatment(1, -0.1, &[("A1", -0.2), ("X1", 0.1), ("X2", 0.2)]);
    covariate_eq(&mut b, 2);
    b.treatment(2, -0.1, &[("A2", -0.2), ("X1", 0.1), ("X2", 0.2), ("X3", 0.3)]);
    let terms = [("A3", -4.0), ("A2", -3.0), ("A1", -2.0), ("X1", -0.5), ("X2", -1.0), ("X3", -1.5)];
    b.finish(10.0, &terms, 2.0)
}

/// A scenario, its coefficient preset and any named overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub preset: CoefficientPreset,
    pub n: usize,
    pub overrides: Vec<(String, f64)>,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, n: usize) -> Self {
        Self { scenario, preset: CoefficientPreset::default(), n, overrides: Vec::new() }
    }

    pub fn with_preset(mut self, preset: CoefficientPreset) -> Self {
        self.preset = preset;
        self
    }

    pub fn with_override(mut self, name: &str, value: f64) -> Self {
        self.overrides.push((name.to_string(), value));
        self
    }

    pub fn visits(&self) -> usize {
        VISITS
    }

    /// Builds the structural model with overrides applied.
    pub fn model(&self) -> Result<StructuralModel> {
        let rho = match self.preset {
            CoefficientPreset::Reported => 0.5,
            CoefficientPreset::Printed => -0.5,
        };
        let mut m = match self.scenario {
            Scenario::TvBinaryU => tv_binary(rho),
            Scenario::TvNormalU => match self.preset {
                CoefficientPreset::Reported => tv_normal(rho, [0.1; 3]),
                CoefficientPreset::Printed => tv_normal(rho, [1.0, 2.0, 3.0]),
            },
            Scenario::TwoTvU => two_tv(rho),
            Scenario::TiBinaryU => ti_binary(),
            Scenario::NoU => no_u(),
        };
        for (name, value) in &self.overrides {
            m.set_coefficient(name, *value)?;
        }
        Ok(m)
    }
}

/// Draws `spec.n` subjects. Latent columns are attached for oracle use.
pub fn simulate(spec: &ScenarioSpec, stream: &mut RandomStream) -> Result<LongitudinalDataset> {
    let model = spec.model()?;
    simulate_model(&model, spec.n, stream)
}

pub fn simulate_model(model: &StructuralModel, n: usize, stream: &mut RandomStream) -> Result<LongitudinalDataset> {
    let mut state = vec![0.0; model.nodes().len()];
    let records = (0..n)
        .map(|i| {
            model.draw_path(stream, None, &mut state);
            let y = model.draw_outcome(&state, stream);
            model.record(i, &state, y)
        })
        .collect();
    LongitudinalDataset::from_records(model.visits(), 1, model.latent_dims(), records)
}

/// Draws `n` subjects with every treatment clamped to `regime`.
pub fn simulate_under_regime(
    model: &StructuralModel,
    n: usize,
    regime: &TreatmentRegime,
    stream: &mut RandomStream,
) -> Result<LongitudinalDataset> {
    let mut state = vec![0.0; model.nodes().len()];
    let records = (0..n)
        .map(|i| {
            model.draw_path(stream, Some(regime.as_slice()), &mut state);
            let y = model.draw_outcome(&state, stream);
            model.record(i, &state, y)
        })
        .collect();
    LongitudinalDataset::from_records(model.visits(), 1, model.latent_dims(), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedSpec;

    #[test]
    fn scenario_names_round_trip() {
        for sc in Scenario::ALL {
            assert_eq!(sc.cli_name().parse::<Scenario>().unwrap(), sc);
        }
        assert!(matches!("tv-binary".parse::<Scenario>(), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn empty_dataset() {
        let d = simulate(&ScenarioSpec::new(Scenario::NoU, 0), &mut SeedSpec::new(1).stream("sim", 0)).unwrap();
        assert_eq!(d.n(), 0);
        assert_eq!(d.visits(), 3);
    }

    #[test]
    fn overrides_apply_and_unknown_names_fail() {
        let m = ScenarioSpec::new(Scenario::TvBinaryU, 1).with_override("A2.X1", 0.9).model().unwrap();
        assert!(m.coefficients().contains(&("A2.X1".to_string(), 0.9)));
        let bad = ScenarioSpec::new(Scenario::TvBinaryU, 1).with_override("A2.X3", 1.0).model();
        assert!(matches!(bad, Err(Error::UnknownCoefficient(_))));
        let sd = ScenarioSpec::new(Scenario::TvNormalU, 1).with_override("U2.sd", 1.5).model().unwrap();
        assert!(sd.coefficients().contains(&("U2.sd".to_string(), 1.5)));
    }

    #[test]
    fn latent_layout() {
        let two = ScenarioSpec::new(Scenario::TwoTvU, 5).model().unwrap();
        assert_eq!(two.latent_dims(), Some(vec![2, 2, 2]));
        let ti = ScenarioSpec::new(Scenario::TiBinaryU, 5).model().unwrap();
        assert_eq!(ti.latent_dims(), Some(vec![1, 0, 0]));
        assert_eq!(ScenarioSpec::new(Scenario::NoU, 5).model().unwrap().latent_dims(), None);
    }

    #[test]
    fn simulated_values_are_binary_where_expected() {
        let d = simulate(&ScenarioSpec::new(Scenario::TvBinaryU, 200), &mut SeedSpec::new(4).stream("sim", 0)).unwrap();
        assert!(d.covariates_binary());
        let l = d.latent().unwrap();
        for i in 0..d.n() {
            assert!(l.history(i, 2).iter().all(|&u| u == 0.0 || u == 1.0));
        }
    }

    #[test]
    fn clamped_simulation_follows_regime() {
        let m = ScenarioSpec::new(Scenario::TvBinaryU, 0).model().unwrap();
        let r: TreatmentRegime = "101".parse().unwrap();
        let d = simulate_under_regime(&m, 50, &r, &mut SeedSpec::new(2).stream("sim", 0)).unwrap();
        assert!((0..50).all(|i| d.treatments(i) == [1, 0, 1]));
    }
}
