//! Replicated simulation studies and their summary metrics.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::bmsm::{BmsmConfig, BmsmEstimator};
use crate::bsa::{build_model, fit_bsa, ChainConfig, PriorConfig, UStructure};
use crate::data::{LongitudinalDataset, TreatmentRegime};
use crate::dgp::{simulate, ScenarioSpec};
use crate::error::{Error, Result};
use crate::msm::{MarginalForm, MsmEstimator, Weighting};
use crate::oracle::{true_ate, true_sensitivity_table, OracleMode, OracleResult, SensitivityTable};
use crate::seed::SeedSpec;
use crate::sf::SensitivityFunctionSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum EstimatorKind {
    MsmUExcluded,
    MsmUIncluded,
    SfFreqMsm,
    SfBayesMsm,
    BsaTimeInvariant,
    BsaTimeVarying,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::MsmUExcluded,
        EstimatorKind::MsmUIncluded,
        EstimatorKind::SfFreqMsm,
        EstimatorKind::SfBayesMsm,
        EstimatorKind::BsaTimeInvariant,
        EstimatorKind::BsaTimeVarying,
    ];

    pub fn cli_name(self) -> &'static str {
        match self {
            EstimatorKind::MsmUExcluded => "msm-x",
            EstimatorKind::MsmUIncluded => "msm-u",
            EstimatorKind::SfFreqMsm => "sf-freq",
            EstimatorKind::SfBayesMsm => "sf-bayes",
            EstimatorKind::BsaTimeInvariant => "bsa-ti",
            EstimatorKind::BsaTimeVarying => "bsa-tv",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::MsmUExcluded => "MSM U excluded",
            EstimatorKind::MsmUIncluded => "MSM U included",
            EstimatorKind::SfFreqMsm => "Sensitivity Function (MSM)",
            EstimatorKind::SfBayesMsm => "Sensitivity Function (Bayesian MSM)",
            EstimatorKind::BsaTimeInvariant => "BSA time-invariant U",
            EstimatorKind::BsaTimeVarying => "BSA time-varying U",
        }
    }

    fn needs_table(self) -> bool {
        matches!(self, EstimatorKind::SfFreqMsm | EstimatorKind::SfBayesMsm)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|e| e.cli_name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorConfigs {
    pub form: MarginalForm,
    pub msm_bootstrap: usize,
    pub bmsm: BmsmConfig,
    pub chain: ChainConfig,
    pub priors: PriorConfig,
}

impl Default for EstimatorConfigs {
    fn default() -> Self {
        Self {
            form: MarginalForm::default(),
            msm_bootstrap: 200,
            bmsm: BmsmConfig::default(),
            chain: ChainConfig::short(),
            priors: PriorConfig::simulation(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TruthSource {
    /// Enumeration when every node is binary, otherwise 10^7 Monte Carlo draws.
    Auto,
    Exact,
    MonteCarlo { draws: u64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyConfig {
    pub scenario: ScenarioSpec,
    pub ns: usize,
    pub estimators: Vec<EstimatorKind>,
    pub configs: EstimatorConfigs,
    pub truth: TruthSource,
    pub seed: u64,
}

impl StudyConfig {
    pub fn new(scenario: ScenarioSpec, ns: usize, estimators: Vec<EstimatorKind>, seed: u64) -> Self {
        Self { scenario, ns, estimators, configs: EstimatorConfigs::default(), truth: TruthSource::Auto, seed }
    }
}

/// Ground truth shared by every replication of a study.
#[derive(Debug, Clone)]
pub struct StudyOracle {
    pub truth: OracleResult,
    pub table: Option<Arc<SensitivityTable>>,
}

pub const AUTO_MC_DRAWS: u64 = 10_000_000;

pub fn study_oracle(cfg: &StudyConfig) -> Result<StudyOracle> {
    let model = cfg.scenario.model()?;
    let root = SeedSpec::new(cfg.seed);
    let mode = match cfg.truth {
        TruthSource::Exact => OracleMode::Exact,
        TruthSource::MonteCarlo { draws } => OracleMode::MonteCarlo { draws },
        TruthSource::Auto if model.all_binary() => OracleMode::Exact,
        TruthSource::Auto => OracleMode::MonteCarlo { draws: AUTO_MC_DRAWS },
    };
    let j = model.visits();
    let truth = true_ate(&model, (&TreatmentRegime::always(j), &TreatmentRegime::never(j)), mode, &mut root.stream("oracle-ate", 0))?;
    let table = if cfg.estimators.iter().any(|e| e.needs_table()) {
        Some(Arc::new(true_sensitivity_table(&model, mode, &mut root.stream("oracle-table", 0))?))
    } else {
        None
    };
    Ok(StudyOracle { truth, table })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RepRecord {
    pub replication: usize,
    pub estimate: f64,
    pub se: f64,
    pub ci95: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub mean: f64,
    /// Percent; `None` when the true effect is zero.
    pub rb: Option<f64>,
    pub ese: f64,
    pub ase: f64,
    /// Percent; `None` when ESE is zero.
    pub serb: Option<f64>,
    pub cp: f64,
}

/// Summary metrics over replications. ESE is the root mean squared deviation
/// from the true effect and SERB compares the aggregate ASE and ESE.
pub fn compute_metrics(estimates: &[f64], ses: &[f64], cis: &[(f64, f64)], true_ate: f64) -> Result<Metrics> {
    let n = estimates.len();
    if n == 0 || ses.len() != n || cis.len() != n {
        return Err(Error::InvalidArgument("metric inputs must be non-empty and aligned".into()));
    }
    let nf = n as f64;
    let mean = estimates.iter().sum::<f64>() / nf;
    let rb = (true_ate != 0.0).then(|| 100.0 * estimates.iter().map(|e| (e - true_ate) / true_ate).sum::<f64>() / nf);
    let ese = (estimates.iter().map(|e| (e - true_ate).powi(2)).sum::<f64>() / nf).sqrt();
    let ase = ses.iter().sum::<f64>() / nf;
    let serb = (ese > 0.0).then(|| 100.0 * (ase - ese) / ese);
    let cp = 100.0 * cis.iter().filter(|(lo, hi)| *lo <= true_ate && true_ate <= *hi).count() as f64 / nf;
    Ok(Metrics { mean, rb, ese, ase, serb, cp })
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorReport {
    pub estimator: EstimatorKind,
    pub metrics: Option<Metrics>,
    pub records: Vec<RepRecord>,
    pub failures: Vec<(usize, String)>,
    /// False when more than 5% of replications failed.
    pub valid: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationReport {
    pub scenario: String,
    pub n: usize,
    pub ns: usize,
    pub true_ate: f64,
    pub estimators: Vec<EstimatorReport>,
}

fn run_estimator(
    kind: EstimatorKind,
    full: &LongitudinalDataset,
    oracle: &StudyOracle,
    cfg: &EstimatorConfigs,
    seed: &SeedSpec,
) -> Result<(f64, f64, (f64, f64))> {
    let observed = full.observed();
    let msm = |include_u: bool, sf: Option<SensitivityFunctionSpec>| MsmEstimator {
        weighting: Weighting::Iptw { include_u },
        form: cfg.form,
        sf,
        bootstrap: cfg.msm_bootstrap,
        ..MsmEstimator::default()
    };
    let oracle_sf = || -> Result<SensitivityFunctionSpec> {
        let table = oracle.table.clone().ok_or_else(|| Error::InvalidArgument("no sensitivity table".into()))?;
        Ok(SensitivityFunctionSpec::oracle(table))
    };
    match kind {
        EstimatorKind::MsmUExcluded => {
            let r = msm(false, None).estimate(&observed, seed)?;
            Ok((r.ate, r.se, r.ci95))
        }
        EstimatorKind::MsmUIncluded => {
            let r = msm(true, None).estimate(full, seed)?;
            Ok((r.ate, r.se, r.ci95))
        }
        EstimatorKind::SfFreqMsm => {
            let r = msm(false, Some(oracle_sf()?)).estimate(&observed, seed)?;
            Ok((r.ate, r.se, r.ci95))
        }
        EstimatorKind::SfBayesMsm => {
            let est = BmsmEstimator { msm: msm(false, Some(oracle_sf()?)), config: cfg.bmsm, ..BmsmEstimator::default() };
            let p = est.estimate(&observed, seed)?;
            Ok((p.mean, p.sd, p.ci95))
        }
        EstimatorKind::BsaTimeInvariant | EstimatorKind::BsaTimeVarying => {
            let structure = if kind == EstimatorKind::BsaTimeVarying { UStructure::TimeVarying } else { UStructure::TimeInvariant };
            let model = build_model(observed.visits(), observed.covariates(), structure, &cfg.priors)?;
            let p = fit_bsa(&model, &observed, &cfg.chain, seed)?;
            Ok((p.mean, p.sd, p.ci95))
        }
    }
}

pub fn run_study(cfg: &StudyConfig) -> Result<ReplicationReport> {
    let oracle = study_oracle(cfg)?;
    run_study_with_oracle(cfg, &oracle)
}

/// Replication r draws its dataset from `("rep", r)`; every estimator sees
/// that same dataset.
pub fn run_study_with_oracle(cfg: &StudyConfig, oracle: &StudyOracle) -> Result<ReplicationReport> {
    if cfg.ns == 0 {
        return Err(Error::InvalidArgument("at least one replication is required".into()));
    }
    let root = SeedSpec::new(cfg.seed);
    let per_rep: Vec<Vec<Result<(f64, f64, (f64, f64))>>> = (0..cfg.ns)
        .into_par_iter()
        .map(|r| {
            let rep = root.child("rep", r as u64);
            let data = match simulate(&cfg.scenario, &mut rep.stream("data", 0)) {
                Ok(d) => d,
                Err(e) => return cfg.estimators.iter().map(|_| Err(Error::InvalidData(e.to_string()))).collect(),
            };
            cfg.estimators
                .iter()
                .map(|&kind| run_estimator(kind, &data, oracle, &cfg.configs, &rep.child(kind.cli_name(), 0)))
                .collect()
        })
        .collect();
    let true_ate = oracle.truth.true_ate;
    let mut estimators = Vec::with_capacity(cfg.estimators.len());
    for (k, &kind) in cfg.estimators.iter().enumerate() {
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for (r, results) in per_rep.iter().enumerate() {
            match &results[k] {
                Ok((estimate, se, ci95)) => records.push(RepRecord { replication: r, estimate: *estimate, se: *se, ci95: *ci95 }),
                Err(e) => {
                    log::warn!("{kind} failed in replication {r}: {e}");
                    failures.push((r, e.to_string()));
                }
            }
        }
        let metrics = if records.is_empty() {
            None
        } else {
            let est: Vec<f64> = records.iter().map(|r| r.estimate).collect();
            let ses: Vec<f64> = records.iter().map(|r| r.se).collect();
            let cis: Vec<(f64, f64)> = records.iter().map(|r| r.ci95).collect();
            Some(compute_metrics(&est, &ses, &cis, true_ate)?)
        };
        let valid = failures.len() * 20 <= cfg.ns && metrics.is_some();
        estimators.push(EstimatorReport { estimator: kind, metrics, records, failures, valid });
    }
    Ok(ReplicationReport { scenario: cfg.scenario.scenario.to_string(), n: cfg.scenario.n, ns: cfg.ns, true_ate, estimators })
}

impl ReplicationReport {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimatorReport> {
        self.estimators.iter().find(|e| e.estimator == kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::InvalidArgument(format!("unknown report format '{other}'"))),
        }
    }
}

const HEADER: [&str; 6] = ["Estimator", "Mean", "RB", "SD", "SE", "CP"];

fn cells(e: &EstimatorReport, digits: usize) -> [String; 6] {
    let f = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.digits$}"));
    let mut label = e.estimator.label().to_string();
    if !e.valid {
        label.push_str(" (invalid)");
    }
    match e.metrics {
        Some(m) => [label, f(Some(m.mean)), f(m.rb), f(Some(m.ese)), f(Some(m.ase)), f(Some(m.cp))],
        None => [label, f(None), f(None), f(None), f(None), f(None)],
    }
}

/// Table with columns Estimator, Mean, RB, SD, SE, CP (SD is ESE, SE is ASE).
pub fn render_report(report: &ReplicationReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(&HEADER.join(","));
            out.push('\n');
            for e in &report.estimators {
                let row = cells(e, 6);
                let quoted: Vec<String> =
                    row.iter().map(|c| if c.contains(',') || c.contains(' ') { format!("\"{c}\"") } else { c.clone() }).collect();
                out.push_str(&quoted.join(","));
                out.push('\n');
            }
        }
        ReportFormat::Markdown => {
            let _ = writeln!(out, "| {} |", HEADER.join(" | "));
            let _ = writeln!(out, "|---|---:|---:|---:|---:|---:|");
            for e in &report.estimators {
                let _ = writeln!(out, "| {} |", cells(e, 2).join(" | "));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_estimates() {
        let m = compute_metrics(&[-10.0; 4], &[0.0; 4], &[(-10.0, -10.0); 4], -10.0).unwrap();
        assert_eq!((m.rb, m.ese, m.cp, m.serb), (Some(0.0), 0.0, 100.0, None));
    }

    #[test]
    fn alternating_errors_have_zero_serb() {
        let eps = 0.25;
        let est: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 2.0 + eps } else { 2.0 - eps }).collect();
        let m = compute_metrics(&est, &[eps; 10], &[(0.0, 1.0); 10], 2.0).unwrap();
        assert!((m.ese - eps).abs() < 1e-15);
        assert!((m.ase - eps).abs() < 1e-15);
        assert!(m.serb.unwrap().abs() < 1e-12);
        assert_eq!(m.cp, 0.0);
    }

    #[test]
    fn zero_truth_has_no_relative_bias() {
        assert_eq!(compute_metrics(&[0.1], &[1.0], &[(-1.0, 1.0)], 0.0).unwrap().rb, None);
    }

    #[test]
    fn single_replication() {
        let m = compute_metrics(&[-9.0], &[0.5], &[(-10.0, -8.0)], -9.5).unwrap();
        assert_eq!(m.mean, -9.0);
        assert_eq!(m.ese, 0.5);
        assert_eq!(m.cp, 100.0);
    }

    #[test]
    fn empty_and_single_renders() {
        let mut report = ReplicationReport { scenario: "no-u".into(), n: 10, ns: 1, true_ate: 1.0, estimators: vec![] };
        assert_eq!(render_report(&report, ReportFormat::Csv), "Estimator,Mean,RB,SD,SE,CP\n");
        assert_eq!(render_report(&report, ReportFormat::Markdown).lines().count(), 2);
        report.estimators.push(EstimatorReport {
            estimator: EstimatorKind::MsmUExcluded,
            metrics: Some(compute_metrics(&[1.5], &[0.2], &[(1.0, 2.0)], 1.0).unwrap()),
            records: vec![],
            failures: vec![],
            valid: true,
        });
        assert_eq!(render_report(&report, ReportFormat::Csv).lines().count(), 2);
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in EstimatorKind::ALL {
            assert_eq!(e.cli_name().parse::<EstimatorKind>().unwrap(), e);
        }
    }
}
