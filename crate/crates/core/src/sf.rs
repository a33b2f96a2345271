//! Sensitivity functions and the corrected outcome
//! `y_sf = y - sum_j c(j, a_bar, x_bar_j) * P(A_j = 1 - a_j | a_bar_{j-1}, x_bar_j)`.

use std::sync::Arc;

use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::glm::{fit_linear, DesignMatrix};
use crate::msm::{TreatmentModels, INTERCEPT};
use crate::oracle::SensitivityTable;

#[derive(Debug, Clone, PartialEq)]
pub enum SfKind {
    Zero,
    /// One value per visit.
    ConstantPerVisit(Vec<f64>),
    OracleTable(Arc<SensitivityTable>),
    /// `sign * h * sigma_hat` everywhere.
    ResidualBand { h: f64, sigma_hat: f64, sign: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbabilitySource {
    /// Visit-specific logistic fits on treatment and covariate history.
    FittedModels,
    /// True probabilities stored in a table.
    OracleTable(Arc<SensitivityTable>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityFunctionSpec {
    pub kind: SfKind,
    pub probability_source: ProbabilitySource,
}

impl SensitivityFunctionSpec {
    pub fn new(kind: SfKind) -> Self {
        Self { kind, probability_source: ProbabilitySource::FittedModels }
    }

    pub fn zero() -> Self {
        Self::new(SfKind::Zero)
    }

    pub fn with_probabilities(mut self, source: ProbabilitySource) -> Self {
        self.probability_source = source;
        self
    }

    /// Oracle `c` and oracle probabilities from the same table.
    pub fn oracle(table: Arc<SensitivityTable>) -> Self {
        Self { kind: SfKind::OracleTable(table.clone()), probability_source: ProbabilitySource::OracleTable(table) }
    }

    /// `c = sign * h * sigma_hat`, with `sigma_hat` the residual SD of the
    /// outcome regression on treatment and covariate history.
    pub fn residual_band(data: &LongitudinalDataset, h: f64, sign: f64) -> Result<Self> {
        Ok(Self::new(SfKind::ResidualBand { h, sigma_hat: outcome_residual_sd(data)?, sign }))
    }

    pub fn needs_fitted_models(&self) -> bool {
        !matches!(self.kind, SfKind::Zero) && matches!(self.probability_source, ProbabilitySource::FittedModels)
    }

    /// Same spec with every `c` negated.
    pub fn negated(&self) -> Self {
        let kind = match &self.kind {
            SfKind::Zero => SfKind::Zero,
            SfKind::ConstantPerVisit(c) => SfKind::ConstantPerVisit(c.iter().map(|v| -v).collect()),
            SfKind::OracleTable(t) => SfKind::OracleTable(Arc::new(t.scaled(-1.0))),
            SfKind::ResidualBand { h, sigma_hat, sign } => SfKind::ResidualBand { h: *h, sigma_hat: *sigma_hat, sign: -sign },
        };
        Self { kind, probability_source: self.probability_source.clone() }
    }
}

fn binary_history(x_bar: &[f64]) -> Result<Vec<u8>> {
    x_bar
        .iter()
        .map(|&v| match v {
            0.0 => Ok(0),
            1.0 => Ok(1),
            _ => Err(Error::UnavailableCell(format!("covariate value {v} is not binary"))),
        })
        .collect()
}

/// `c(j, a_bar, x_bar)` for visit `j` (0-based). `x_bar` holds the single
/// covariate for visits `1..=j+1` (more entries are ignored).
pub fn eval_c(spec: &SensitivityFunctionSpec, j: usize, a_bar: &[u8], x_bar: &[f64]) -> Result<f64> {
    if a_bar.len() <= j || x_bar.len() <= j {
        return Err(Error::InvalidArgument(format!("histories too short for visit {}", j + 1)));
    }
    match &spec.kind {
        SfKind::Zero => Ok(0.0),
        SfKind::ConstantPerVisit(c) => c.get(j).copied().ok_or(Error::MissingModel(j + 1)),
        SfKind::ResidualBand { h, sigma_hat, sign } => Ok(sign * h * sigma_hat),
        SfKind::OracleTable(t) => {
            let x = binary_history(&x_bar[..=j])?;
            t.c(j, a_bar, &x).ok_or_else(|| {
                Error::UnavailableCell(format!("visit {} regime {:?} covariates {:?}", j + 1, a_bar, x))
            })
        }
    }
}

/// Outcomes with the sensitivity correction applied.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedDataset {
    pub base: LongitudinalDataset,
    pub y_sf: Vec<f64>,
    pub correction: Vec<f64>,
}

impl CorrectedDataset {
    /// The base dataset with `y` replaced by `y_sf`.
    pub fn as_dataset(&self) -> Result<LongitudinalDataset> {
        self.base.with_outcome(self.y_sf.clone())
    }
}

/// Applies the correction subject by subject with each subject's own history.
pub fn correct_outcomes(
    data: &LongitudinalDataset,
    spec: &SensitivityFunctionSpec,
    models: Option<&TreatmentModels>,
) -> Result<CorrectedDataset> {
    let n = data.n();
    let visits = data.visits();
    let mut correction = vec![0.0; n];
    if !matches!(spec.kind, SfKind::Zero) {
        if data.covariates() != 1 && matches!(spec.probability_source, ProbabilitySource::OracleTable(_)) {
            return Err(Error::InvalidArgument("oracle probabilities need one covariate per visit".into()));
        }
        for (i, corr) in correction.iter_mut().enumerate() {
            let a = data.treatments(i);
            let x = data.x_history(i, visits - 1);
            let mut total = 0.0;
            for j in 0..visits {
                let c = eval_c(spec, j, a, x)?;
                let p1 = match &spec.probability_source {
                    ProbabilitySource::FittedModels => {
                        models.ok_or(Error::MissingModel(j + 1))?.denominator_prob(data, i, j)?
                    }
                    ProbabilitySource::OracleTable(t) => {
                        let xb = binary_history(&x[..=j])?;
                        t.p_treat(j, &a[..j], &xb).ok_or_else(|| {
                            Error::UnavailableCell(format!("treatment probability at visit {}", j + 1))
                        })?
                    }
                };
                if !(p1 > 0.0 && p1 < 1.0) {
                    return Err(Error::ProbabilityOutOfRange { subject: i, visit: j + 1, p: p1 });
                }
                let p_opp = if a[j] == 1 { 1.0 - p1 } else { p1 };
                total += c * p_opp;
            }
            *corr = total;
        }
    }
    let y_sf = data.y().iter().zip(&correction).map(|(y, c)| y - c).collect();
    Ok(CorrectedDataset { base: data.clone(), y_sf, correction })
}

/// Residual SD of the linear regression of y on `(1, a_1..a_J, x_1..x_J)`.
pub fn outcome_residual_sd(data: &LongitudinalDataset) -> Result<f64> {
    let visits = data.visits();
    let mut names = vec![INTERCEPT.to_string()];
    names.extend((1..=visits).map(|j| format!("a{j}")));
    let p = data.covariates();
    for j in 1..=visits {
        for k in 1..=p {
            names.push(if p == 1 { format!("x{j}") } else { format!("x{j}_{k}") });
        }
    }
    let mut values = Vec::with_capacity(data.n() * names.len());
    for i in 0..data.n() {
        values.push(1.0);
        values.extend(data.treatments(i).iter().map(|&a| a as f64));
        values.extend_from_slice(data.x_history(i, visits - 1));
    }
    let x = DesignMatrix::new(names, data.n(), values)?;
    let fit = fit_linear(&x, data.y(), &vec![1.0; data.n()])?;
    Ok(fit.residual_sd.expect("linear fit"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SubjectRecord;
    use crate::dgp::{simulate, Scenario, ScenarioSpec};
    use crate::msm::fit_treatment_models;
    use crate::oracle::{true_sensitivity_table, OracleMode};
    use crate::seed::SeedSpec;
    use proptest::prelude::*;

    fn one_visit(a: u8, x: f64, y: f64) -> LongitudinalDataset {
        let rec = SubjectRecord { id: "1".into(), x: vec![vec![x]], a: vec![a], y, u: None };
        LongitudinalDataset::from_records(1, 1, None, vec![rec]).unwrap()
    }

    #[test]
    fn single_subject_arithmetic() {
        let d = one_visit(1, 0.0, 10.0);
        let mut t = SensitivityTable::zero(1);
        t.set_p_treat(0, &[], &[0], 0.7);
        let spec = SensitivityFunctionSpec::new(SfKind::ConstantPerVisit(vec![2.0]))
            .with_probabilities(ProbabilitySource::OracleTable(Arc::new(t)));
        let out = correct_outcomes(&d, &spec, None).unwrap();
        assert!((out.y_sf[0] - 9.4).abs() < 1e-12);
        assert!((out.correction[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn zero_is_bitwise_identity() {
        let d = simulate(&ScenarioSpec::new(Scenario::TvBinaryU, 200), &mut SeedSpec::new(1).stream("sim", 0))
            .unwrap()
            .observed();
        let out = correct_outcomes(&d, &SensitivityFunctionSpec::zero(), None).unwrap();
        assert!(out.y_sf.iter().zip(d.y()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn missing_models_and_cells_are_errors() {
        let d = one_visit(0, 1.0, 1.0);
        let spec = SensitivityFunctionSpec::new(SfKind::ConstantPerVisit(vec![1.0]));
        assert!(matches!(correct_outcomes(&d, &spec, None), Err(Error::MissingModel(1))));
        let table = Arc::new(SensitivityTable::zero(1));
        let oracle = SensitivityFunctionSpec::oracle(table);
        assert!(matches!(correct_outcomes(&d, &oracle, None), Err(Error::UnavailableCell(_))));
    }

    #[test]
    fn oracle_lookup_for_no_u_is_zero() {
        let m = ScenarioSpec::new(Scenario::NoU, 0).model().unwrap();
        let t = true_sensitivity_table(&m, OracleMode::Exact, &mut SeedSpec::new(1).stream("o", 0)).unwrap();
        let spec = SensitivityFunctionSpec::oracle(Arc::new(t));
        assert_eq!(eval_c(&spec, 2, &[1, 0, 1], &[0.0, 1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn band_is_history_free() {
        let spec = SensitivityFunctionSpec::new(SfKind::ResidualBand { h: 1.5, sigma_hat: 2.0, sign: -1.0 });
        assert_eq!(eval_c(&spec, 0, &[0, 1, 1], &[1.0]).unwrap(), -3.0);
        assert_eq!(eval_c(&spec, 2, &[1, 1, 1], &[0.0, 0.0, 1.0]).unwrap(), -3.0);
    }

    #[test]
    fn residual_sd_near_outcome_noise() {
        let d = simulate(&ScenarioSpec::new(Scenario::NoU, 20_000), &mut SeedSpec::new(5).stream("sim", 0)).unwrap();
        let s = outcome_residual_sd(&d).unwrap();
        assert!((s - 2.0).abs() < 0.05, "{s}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn negating_c_negates_every_correction(seed in 0u64..1000, c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, c3 in -3.0f64..3.0) {
            let d = simulate(&ScenarioSpec::new(Scenario::TvBinaryU, 120), &mut SeedSpec::new(seed).stream("sim", 0))
                .unwrap()
                .observed();
            let models = fit_treatment_models(&d, false).unwrap();
            let spec = SensitivityFunctionSpec::new(SfKind::ConstantPerVisit(vec![c1, c2, c3]));
            let a = correct_outcomes(&d, &spec, Some(&models)).unwrap();
            let b = correct_outcomes(&d, &spec.negated(), Some(&models)).unwrap();
            for (x, y) in a.correction.iter().zip(&b.correction) {
                prop_assert_eq!(*x, -*y);
            }
        }
    }
}
