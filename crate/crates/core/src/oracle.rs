//! Ground truth for a known structural model: true average potential
//! outcomes, the true treatment effect and the true sensitivity function.
//!
//! Exact mode enumerates every path of the binary nodes. Monte Carlo mode
//! samples forward in fixed-size chunks, each chunk on its own derived
//! stream, so results do not depend on thread scheduling.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TreatmentRegime;
use crate::dgp::{NodeDist, Role, StructuralModel};
use crate::error::{Error, Result};
use crate::seed::{RandomStream, SeedSpec};

const CHUNK: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleMethod {
    ExactEnumeration,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    Exact,
    MonteCarlo { draws: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub true_ate: f64,
    pub apo_treated: f64,
    pub apo_control: f64,
    pub method: OracleMethod,
    pub mc_draws: u64,
    pub mc_standard_error: f64,
}

fn check_regime(model: &StructuralModel, r: &TreatmentRegime) -> Result<()> {
    if r.len() != model.visits() {
        return Err(Error::InvalidArgument(format!("regime {r} does not have {} visits", model.visits())));
    }
    Ok(())
}

fn require_binary(model: &StructuralModel) -> Result<()> {
    match model.continuous_node() {
        Some(name) => Err(Error::NotEnumerable(name.to_string())),
        None => Ok(()),
    }
}

/// E[outcome mean] from node `k` onward with treatments clamped to `regime`.
fn expect_forward(model: &StructuralModel, state: &mut [f64], k: usize, regime: &[u8]) -> f64 {
    let nodes = model.nodes();
    if k == nodes.len() {
        return model.outcome().mean(state);
    }
    let node = &nodes[k];
    match node.role {
        Role::Treatment { visit } => {
            state[k] = regime[visit] as f64;
            expect_forward(model, state, k + 1, regime)
        }
        _ => {
            debug_assert!(matches!(node.dist, NodeDist::Bernoulli));
            let p = node.prob_one(state);
            state[k] = 1.0;
            let hi = expect_forward(model, state, k + 1, regime);
            state[k] = 0.0;
            let lo = expect_forward(model, state, k + 1, regime);
            p * hi + (1.0 - p) * lo
        }
    }
}

/// Exact E[Y(regime)] by enumeration. All stochastic nodes must be binary.
pub fn true_apo_exact(model: &StructuralModel, regime: &TreatmentRegime) -> Result<f64> {
    require_binary(model)?;
    check_regime(model, regime)?;
    let mut state = vec![0.0; model.nodes().len()];
    Ok(expect_forward(model, &mut state, 0, regime.as_slice()))
}

/// E[Y(a)] - E[Y(a*)].
pub fn true_ate(
    model: &StructuralModel,
    pair: (&TreatmentRegime, &TreatmentRegime),
    mode: OracleMode,
    stream: &mut RandomStream,
) -> Result<OracleResult> {
    check_regime(model, pair.0)?;
    check_regime(model, pair.1)?;
    match mode {
        OracleMode::Exact => {
            let apo_treated = true_apo_exact(model, pair.0)?;
            let apo_control = true_apo_exact(model, pair.1)?;
            Ok(OracleResult {
                true_ate: apo_treated - apo_control,
                apo_treated,
                apo_control,
                method: OracleMethod::ExactEnumeration,
                mc_draws: 0,
                mc_standard_error: 0.0,
            })
        }
        OracleMode::MonteCarlo { draws } => mc_ate(model, pair, draws, stream),
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: [f64; 3],
    m2: f64,
}

impl Moments {
    fn push(&mut self, t: f64, c: f64) {
        let d = t - c;
        self.n += 1.0;
        let delta = d - self.mean[2];
        self.mean[0] += (t - self.mean[0]) / self.n;
        self.mean[1] += (c - self.mean[1]) / self.n;
        self.mean[2] += delta / self.n;
        self.m2 += delta * (d - self.mean[2]);
    }

    fn merge(self, o: Moments) -> Moments {
        if o.n == 0.0 {
            return self;
        }
        if self.n == 0.0 {
            return o;
        }
        let n = self.n + o.n;
        let mut mean = [0.0; 3];
        for k in 0..3 {
            mean[k] = self.mean[k] + (o.mean[k] - self.mean[k]) * o.n / n;
        }
        let delta = o.mean[2] - self.mean[2];
        Moments { n, mean, m2: self.m2 + o.m2 + delta * delta * self.n * o.n / n }
    }
}

fn chunk_plan(draws: u64, stream: &mut RandomStream) -> (SeedSpec, Vec<(u64, u64)>) {
    let seed = SeedSpec::new(stream.random::<u64>());
    let chunks = draws.div_ceil(CHUNK);
    let plan = (0..chunks).map(|c| (c, CHUNK.min(draws - c * CHUNK))).collect();
    (seed, plan)
}

/// Forward Monte Carlo with common random numbers across the two regimes.
/// Each draw contributes the conditional outcome mean, not a noisy outcome.
fn mc_ate(
    model: &StructuralModel,
    pair: (&TreatmentRegime, &TreatmentRegime),
    draws: u64,
    stream: &mut RandomStream,
) -> Result<OracleResult> {
    if draws == 0 {
        return Err(Error::InvalidArgument("Monte Carlo oracle needs at least one draw".into()));
    }
    let (seed, plan) = chunk_plan(draws, stream);
    let width = model.nodes().len();
    let parts: Vec<Moments> = plan
        .par_iter()
        .map(|&(c, len)| {
            let mut rng = seed.stream("oracle-ate", c);
            let mut s1 = vec![0.0; width];
            let mut s0 = vec![0.0; width];
            let mut m = Moments::default();
            for _ in 0..len {
                let key: u64 = rng.random();
                let mut r1 = RandomStream::seed_from_u64(key);
                let mut r0 = RandomStream::seed_from_u64(key);
                model.draw_path(&mut r1, Some(pair.0.as_slice()), &mut s1);
                model.draw_path(&mut r0, Some(pair.1.as_slice()), &mut s0);
                m.push(model.outcome().mean(&s1), model.outcome().mean(&s0));
            }
            m
        })
        .collect();
    let m = parts.into_iter().fold(Moments::default(), Moments::merge);
    let var = if m.n > 1.0 { m.m2 / (m.n - 1.0) } else { 0.0 };
    Ok(OracleResult {
        true_ate: m.mean[2],
        apo_treated: m.mean[0],
        apo_control: m.mean[1],
        method: OracleMethod::MonteCarlo,
        mc_draws: draws,
        mc_standard_error: (var / m.n).sqrt(),
    })
}

fn encode(bits: &[u8]) -> usize {
    bits.iter().enumerate().fold(0, |acc, (k, &b)| acc | ((b as usize & 1) << k))
}

fn decode(code: usize, len: usize) -> Vec<u8> {
    (0..len).map(|k| ((code >> k) & 1) as u8).collect()
}

fn bit_string(bits: &[u8]) -> String {
    bits.iter().map(|b| char::from(b'0' + b)).collect()
}

fn parse_bits(s: &str) -> Result<Vec<u8>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            _ => Err(Error::InvalidData(format!("'{s}' is not a 0/1 history"))),
        })
        .collect()
}

/// One cell of the sensitivity function.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SensitivityCell {
    /// `None` when the conditioning history has probability zero.
    pub c: Option<f64>,
    pub se: f64,
}

/// True sensitivity function `c(j, a_bar, x_bar_j)` for every binary history,
/// plus the true treatment probabilities `P(A_j = 1 | a_bar_{j-1}, x_bar_j)`.
///
/// Visits are 0-based in the API and 1-based in CSV files.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTable {
    visits: usize,
    method: OracleMethod,
    /// `cells[j][regime code + (x code << visits)]`
    cells: Vec<Vec<SensitivityCell>>,
    /// `probs[j][a_prev code + (x code << j)]`
    probs: Vec<Vec<Option<f64>>>,
}

impl SensitivityTable {
    fn blank(visits: usize, method: OracleMethod) -> Self {
        let cells = (0..visits).map(|j| vec![SensitivityCell::default(); 1 << (visits + j + 1)]).collect();
        let probs = (0..visits).map(|j| vec![None; 1 << (2 * j + 1)]).collect();
        Self { visits, method, cells, probs }
    }

    /// Table with `c = 0` everywhere and no treatment probabilities.
    pub fn zero(visits: usize) -> Self {
        let mut t = Self::blank(visits, OracleMethod::ExactEnumeration);
        for row in &mut t.cells {
            for cell in row {
                cell.c = Some(0.0);
            }
        }
        t
    }

    pub fn visits(&self) -> usize {
        self.visits
    }

    pub fn method(&self) -> OracleMethod {
        self.method
    }

    fn cell_index(&self, j: usize, a_bar: &[u8], x_hist: &[u8]) -> Option<usize> {
        if j >= self.visits || a_bar.len() != self.visits || x_hist.len() != j + 1 {
            return None;
        }
        Some(encode(a_bar) + (encode(x_hist) << self.visits))
    }

    /// Cell for visit `j` (0-based), full regime `a_bar` and covariates `x_1..x_{j+1}`.
    pub fn cell(&self, j: usize, a_bar: &[u8], x_hist: &[u8]) -> Option<SensitivityCell> {
        self.cell_index(j, a_bar, x_hist).map(|k| self.cells[j][k])
    }

    pub fn c(&self, j: usize, a_bar: &[u8], x_hist: &[u8]) -> Option<f64> {
        self.cell(j, a_bar, x_hist).and_then(|c| c.c)
    }

    /// `P(A_j = 1 | a_prev, x_hist)`, `a_prev` of length j and `x_hist` of length j+1.
    pub fn p_treat(&self, j: usize, a_prev: &[u8], x_hist: &[u8]) -> Option<f64> {
        if j >= self.visits || a_prev.len() != j || x_hist.len() != j + 1 {
            return None;
        }
        self.probs[j][encode(a_prev) + (encode(x_hist) << j)]
    }

    /// Stores a treatment probability for history `(a_prev, x_hist)` at visit `j`.
    pub fn set_p_treat(&mut self, j: usize, a_prev: &[u8], x_hist: &[u8], p: f64) {
        assert!(j < self.visits && a_prev.len() == j && x_hist.len() == j + 1, "history shape");
        self.probs[j][encode(a_prev) + (encode(x_hist) << j)] = Some(p);
    }

    /// Copy with every `c` (and its SE) multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut t = self.clone();
        for cell in t.cells.iter_mut().flatten() {
            cell.c = cell.c.map(|v| v * factor);
            cell.se *= factor.abs();
        }
        t
    }

    /// `(j, a_bar, x_hist, cell)` in canonical order.
    pub fn rows(&self) -> Vec<(usize, Vec<u8>, Vec<u8>, SensitivityCell)> {
        let mut out = Vec::new();
        for j in 0..self.visits {
            for xc in 0..(1usize << (j + 1)) {
                for ac in 0..(1usize << self.visits) {
                    let a = decode(ac, self.visits);
                    let x = decode(xc, j + 1);
                    out.push((j, a, x, self.cells[j][ac + (xc << self.visits)]));
                }
            }
        }
        out
    }

    /// Maximum |c| over available cells.
    pub fn max_abs(&self) -> f64 {
        self.cells.iter().flatten().filter_map(|c| c.c).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with columns `j,a,x,c,c_se,p_treat`. Histories are 0/1 strings,
    /// `a` covers every visit, unavailable values are left empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["j", "a", "x", "c", "c_se", "p_treat"])?;
        for (j, a, x, cell) in self.rows() {
            let p = self.p_treat(j, &a[..j], &x);
            wtr.write_record([
                (j + 1).to_string(),
                bit_string(&a),
                bit_string(&x),
                cell.c.map(|v| v.to_string()).unwrap_or_default(),
                cell.se.to_string(),
                p.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["j", "a", "x", "c", "c_se", "p_treat"] {
            return Err(Error::InvalidData("sensitivity table header must be j,a,x,c,c_se,p_treat".into()));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let j: usize = rec[0].parse().map_err(|_| Error::InvalidData(format!("bad visit '{}'", &rec[0])))?;
            let a = parse_bits(&rec[1])?;
            let x = parse_bits(&rec[2])?;
            let num = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| Error::InvalidData(format!("bad number '{s}'")))
                }
            };
            rows.push((j, a, x, num(&rec[3])?, num(&rec[4])?.unwrap_or(0.0), num(&rec[5])?));
        }
        let visits = rows.first().map(|r| r.1.len()).ok_or_else(|| Error::InvalidData("empty table".into()))?;
        let mut t = Self::blank(visits, OracleMethod::ExactEnumeration);
        for (j1, a, x, c, se, p) in rows {
            if j1 == 0 || j1 > visits || a.len() != visits || x.len() != j1 {
                return Err(Error::InvalidData(format!("malformed table row for visit {j1}")));
            }
            let j = j1 - 1;
            let k = t.cell_index(j, &a, &x).expect("validated shape");
            t.cells[j][k] = SensitivityCell { c, se };
            if let Some(p) = p {
                t.probs[j][encode(&a[..j]) + (encode(&x) << j)] = Some(p);
            }
        }
        Ok(t)
    }
}

fn table_shape_check(model: &StructuralModel) -> Result<()> {
    for j in 0..model.visits() {
        let xk = model.covariate_node(j);
        if !model.nodes()[xk].is_binary() {
            return Err(Error::NotEnumerable(model.nodes()[xk].name.clone()));
        }
    }
    Ok(())
}

/// Enumerates latent paths up to (not including) the treatment node at visit
/// `j`, with covariates fixed to `x_hist` and earlier treatments to `a_prev`.
/// Calls `f(state, weight)` with the joint probability of each path.
fn enumerate_history(
    model: &StructuralModel,
    state: &mut [f64],
    k: usize,
    stop: usize,
    a_prev: &[u8],
    x_hist: &[u8],
    weight: f64,
    f: &mut dyn FnMut(&mut [f64], f64),
) {
    if weight == 0.0 {
        return;
    }
    if k == stop {
        f(state, weight);
        return;
    }
    let node = &model.nodes()[k];
    let fixed = match node.role {
        Role::Covariate { visit } => Some(x_hist[visit]),
        Role::Treatment { visit } => Some(a_prev[visit]),
        Role::Latent { .. } => None,
    };
    let p = node.prob_one(state);
    match fixed {
        Some(v) => {
            state[k] = v as f64;
            let pv = if v == 1 { p } else { 1.0 - p };
            enumerate_history(model, state, k + 1, stop, a_prev, x_hist, weight * pv, f);
        }
        None => {
            state[k] = 1.0;
            enumerate_history(model, state, k + 1, stop, a_prev, x_hist, weight * p, f);
            state[k] = 0.0;
            enumerate_history(model, state, k + 1, stop, a_prev, x_hist, weight * (1.0 - p), f);
        }
    }
}

/// Builds the true sensitivity table.
///
/// For history `(a_prev, x_hist)` at visit j and full regime `a_bar` with
/// prefix `a_prev`:
/// `c = E[Y(a_bar) | a_prev, A_j = a_j, x_hist] - E[Y(a_bar) | a_prev, A_j = 1 - a_j, x_hist]`,
/// where the latent history is integrated over its conditional law given the
/// observed history and the future runs with treatments clamped to `a_bar`.
pub fn true_sensitivity_table(
    model: &StructuralModel,
    mode: OracleMode,
    stream: &mut RandomStream,
) -> Result<SensitivityTable> {
    table_shape_check(model)?;
    match mode {
        OracleMode::Exact => {
            require_binary(model)?;
            Ok(exact_table(model))
        }
        OracleMode::MonteCarlo { draws } => {
            if draws == 0 {
                return Err(Error::InvalidArgument("Monte Carlo oracle needs at least one draw".into()));
            }
            Ok(mc_table(model, draws, stream))
        }
    }
}

fn exact_table(model: &StructuralModel) -> SensitivityTable {
    let visits = model.visits();
    let mut t = SensitivityTable::blank(visits, OracleMethod::ExactEnumeration);
    let width = model.nodes().len();
    for j in 0..visits {
        let tnode = model.treatment_node(j);
        let tails = visits - j;
        for ap in 0..(1usize << j) {
            let a_prev = decode(ap, j);
            for xc in 0..(1usize << (j + 1)) {
                let x_hist = decode(xc, j + 1);
                let mut den = [0.0f64; 2];
                let mut mass = 0.0;
                let mut state = vec![0.0; width];
                enumerate_history(model, &mut state, 0, tnode, &a_prev, &x_hist, 1.0, &mut |s, w| {
                    let p1 = model.nodes()[tnode].prob_one(s);
                    mass += w;
                    den[0] += w * (1.0 - p1);
                    den[1] += w * p1;
                });
                if mass > 0.0 {
                    t.probs[j][ap + (xc << j)] = Some(den[1] / mass);
                }
                // c accumulates E * (posterior weight given a_j - posterior weight given 1 - a_j),
                // so a history with a single latent path gives exactly zero.
                let mut acc = vec![0.0f64; 1 << tails];
                let usable = den[0] > 0.0 && den[1] > 0.0;
                if usable {
                    enumerate_history(model, &mut state, 0, tnode, &a_prev, &x_hist, 1.0, &mut |s, w| {
                        let p1 = model.nodes()[tnode].prob_one(s);
                        let post = [w * (1.0 - p1) / den[0], w * p1 / den[1]];
                        for (rc, slot) in acc.iter_mut().enumerate() {
                            let mut regime = a_prev.clone();
                            regime.extend(decode(rc, tails));
                            let aj = regime[j] as usize;
                            let mut s2 = s.to_vec();
                            let e = expect_forward(model, &mut s2, tnode, &regime);
                            *slot += e * (post[aj] - post[1 - aj]);
                        }
                    });
                }
                for (rc, &value) in acc.iter().enumerate() {
                    let mut regime = a_prev.clone();
                    regime.extend(decode(rc, tails));
                    let k = encode(&regime) + (xc << visits);
                    t.cells[j][k] = SensitivityCell { c: usable.then_some(value), se: 0.0 };
                }
            }
        }
    }
    t
}

/// Accumulators for the ratio-of-sums estimator of one cell and its
/// delta-method variance.
#[derive(Debug, Clone, Copy, Default)]
struct CellSums {
    s_same: f64,
    s_opp: f64,
    f_same: f64,
    f_opp: f64,
    ff_ss: f64,
    ff_so: f64,
    ff_oo: f64,
    f_ss: f64,
    f_so: f64,
    f_oo: f64,
    ss: f64,
    so: f64,
    oo: f64,
}

impl CellSums {
    fn push(&mut self, f: f64, ps: f64, po: f64) {
        self.s_same += ps;
        self.s_opp += po;
        self.f_same += f * ps;
        self.f_opp += f * po;
        self.ff_ss += f * f * ps * ps;
        self.ff_so += f * f * ps * po;
        self.ff_oo += f * f * po * po;
        self.f_ss += f * ps * ps;
        self.f_so += f * ps * po;
        self.f_oo += f * po * po;
        self.ss += ps * ps;
        self.so += ps * po;
        self.oo += po * po;
    }

    fn merge(&mut self, o: &CellSums) {
        self.s_same += o.s_same;
        self.s_opp += o.s_opp;
        self.f_same += o.f_same;
        self.f_opp += o.f_opp;
        self.ff_ss += o.ff_ss;
        self.ff_so += o.ff_so;
        self.ff_oo += o.ff_oo;
        self.f_ss += o.f_ss;
        self.f_so += o.f_so;
        self.f_oo += o.f_oo;
        self.ss += o.ss;
        self.so += o.so;
        self.oo += o.oo;
    }

    fn finish(&self) -> SensitivityCell {
        if self.s_same <= 0.0 || self.s_opp <= 0.0 {
            return SensitivityCell { c: None, se: 0.0 };
        }
        let (s1, s0) = (self.s_same, self.s_opp);
        let r1 = self.f_same / s1;
        let r0 = self.f_opp / s0;
        let (a2, ab, b2) = (1.0 / (s1 * s1), 1.0 / (s1 * s0), 1.0 / (s0 * s0));
        let ffdd = self.ff_ss * a2 - 2.0 * self.ff_so * ab + self.ff_oo * b2;
        let fde = -r1 * self.f_ss * a2 + (r0 + r1) * self.f_so * ab - r0 * self.f_oo * b2;
        let ee = r1 * r1 * self.ss * a2 - 2.0 * r1 * r0 * self.so * ab + r0 * r0 * self.oo * b2;
        let var = (ffdd + 2.0 * fde + ee).max(0.0);
        SensitivityCell { c: Some(r1 - r0), se: var.sqrt() }
    }
}

struct TableSums {
    cells: Vec<Vec<CellSums>>,
    probs: Vec<Vec<(f64, f64)>>,
}

impl TableSums {
    fn new(visits: usize) -> Self {
        Self {
            cells: (0..visits).map(|j| vec![CellSums::default(); 1 << (visits + j + 1)]).collect(),
            probs: (0..visits).map(|j| vec![(0.0, 0.0); 1 << (2 * j + 1)]).collect(),
        }
    }

    fn merge(&mut self, o: &TableSums) {
        for (a, b) in self.cells.iter_mut().flatten().zip(o.cells.iter().flatten()) {
            a.merge(b);
        }
        for (a, b) in self.probs.iter_mut().flatten().zip(o.probs.iter().flatten()) {
            a.0 += b.0;
            a.1 += b.1;
        }
    }
}

/// Monte Carlo table. Subjects are simulated under the natural treatment
/// process; each subject's latent history is a draw from its conditional law
/// given the observed history. Conditioning on the treatment at visit j is
/// Rao-Blackwellized: every subject with the history contributes to both
/// arms, weighted by its true treatment propensities. The future under each
/// regime is one forward continuation per subject.
fn mc_table(model: &StructuralModel, draws: u64, stream: &mut RandomStream) -> SensitivityTable {
    let visits = model.visits();
    let (seed, plan) = chunk_plan(draws, stream);
    let width = model.nodes().len();
    let parts: Vec<TableSums> = plan
        .par_iter()
        .map(|&(c, len)| {
            let mut rng = seed.stream("oracle-table", c);
            let mut sums = TableSums::new(visits);
            let mut state = vec![0.0; width];
            let mut cont = vec![0.0; width];
            let mut x = vec![0u8; visits];
            let mut a = vec![0u8; visits];
            for _ in 0..len {
                model.draw_path(&mut rng, None, &mut state);
                for j in 0..visits {
                    x[j] = state[model.covariate_node(j)] as u8;
                    a[j] = state[model.treatment_node(j)] as u8;
                }
                for j in 0..visits {
                    let tnode = model.treatment_node(j);
                    let p1 = model.nodes()[tnode].prob_one(&state);
                    let xc = encode(&x[..=j]);
                    let ap = encode(&a[..j]);
                    let pr = &mut sums.probs[j][ap + (xc << j)];
                    pr.0 += p1;
                    pr.1 += 1.0;
                    let tails = visits - j;
                    for rc in 0..(1usize << tails) {
                        let code = ap | (rc << j);
                        let regime = decode(code, visits);
                        cont[..tnode].copy_from_slice(&state[..tnode]);
                        model.draw_from(tnode, &mut rng, Some(&regime), &mut cont);
                        let f = model.outcome().mean(&cont);
                        let ps = if regime[j] == 1 { p1 } else { 1.0 - p1 };
                        sums.cells[j][code + (xc << visits)].push(f, ps, 1.0 - ps);
                    }
                }
            }
            sums
        })
        .collect();
    let mut total = TableSums::new(visits);
    for p in &parts {
        total.merge(p);
    }
    let mut t = SensitivityTable::blank(visits, OracleMethod::MonteCarlo);
    for j in 0..visits {
        for (k, s) in total.cells[j].iter().enumerate() {
            t.cells[j][k] = s.finish();
        }
        for (k, &(sp, cnt)) in total.probs[j].iter().enumerate() {
            if cnt > 0.0 {
                t.probs[j][k] = Some(sp / cnt);
            }
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{Scenario, ScenarioSpec};

    fn model(sc: Scenario) -> StructuralModel {
        ScenarioSpec::new(sc, 0).model().unwrap()
    }

    fn rng() -> RandomStream {
        SeedSpec::new(11).stream("oracle-test", 0)
    }

    #[test]
    fn exact_requires_binary_nodes() {
        let m = model(Scenario::TvNormalU);
        let r = TreatmentRegime::always(3);
        let z = TreatmentRegime::never(3);
        assert!(matches!(true_ate(&m, (&r, &z), OracleMode::Exact, &mut rng()), Err(Error::NotEnumerable(_))));
    }

    #[test]
    fn regime_symmetry_is_exact() {
        for sc in [Scenario::TvBinaryU, Scenario::TiBinaryU, Scenario::NoU] {
            for r in TreatmentRegime::enumerate(3) {
                let res = true_ate(&model(sc), (&r, &r), OracleMode::Exact, &mut rng()).unwrap();
                assert_eq!(res.true_ate, 0.0);
            }
        }
        let m = model(Scenario::TvNormalU);
        let r = TreatmentRegime::always(3);
        let res = true_ate(&m, (&r, &r), OracleMode::MonteCarlo { draws: 1000 }, &mut rng()).unwrap();
        assert_eq!(res.true_ate, 0.0);
    }

    #[test]
    fn no_causal_pathway_gives_zero() {
        let mut spec = ScenarioSpec::new(Scenario::TvBinaryU, 0);
        for v in ["A1", "A2", "A3", "X1", "X2", "X3", "U1", "U2", "U3"] {
            spec = spec.with_override(&format!("Y.{v}"), 0.0);
        }
        let m = spec.model().unwrap();
        let res = true_ate(&m, (&TreatmentRegime::always(3), &TreatmentRegime::never(3)), OracleMode::Exact, &mut rng())
            .unwrap();
        assert_eq!(res.true_ate, 0.0);
        assert_eq!(res.mc_standard_error, 0.0);
    }

    #[test]
    fn no_u_table_is_identically_zero() {
        let t = true_sensitivity_table(&model(Scenario::NoU), OracleMode::Exact, &mut rng()).unwrap();
        for (_, _, _, cell) in t.rows() {
            assert_eq!(cell.c, Some(0.0));
        }
    }

    #[test]
    fn table_csv_round_trip() {
        let t = true_sensitivity_table(&model(Scenario::TvBinaryU), OracleMode::Exact, &mut rng()).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = SensitivityTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn exact_probabilities_match_visit_one_formula() {
        let m = model(Scenario::TvBinaryU);
        let t = true_sensitivity_table(&m, OracleMode::Exact, &mut rng()).unwrap();
        let lg = crate::glm::inv_logit;
        for x in [0u8, 1] {
            let want = 0.5 * lg(1.0 + 0.5 * x as f64) + 0.5 * lg(1.0 + 0.5 * x as f64 - 0.5);
            assert!((t.p_treat(0, &[], &[x]).unwrap() - want).abs() < 1e-15);
        }
    }
}
