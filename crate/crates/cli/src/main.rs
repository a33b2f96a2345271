use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use longconf::bmsm::{BmsmConfig, BmsmEstimator, WeightMode};
use longconf::bsa::{build_model, fit_bsa, ChainConfig, PriorConfig, UStructure};
use longconf::data::{LongitudinalDataset, TreatmentRegime};
use longconf::dgp::{simulate, CoefficientPreset, Scenario, ScenarioSpec};
use longconf::harness::{render_report, run_study, EstimatorKind, ReportFormat, StudyConfig, TruthSource};
use longconf::msm::{fit_treatment_models, MarginalForm, MsmEstimator, WeightOptions, Weighting};
use longconf::oracle::{true_ate, true_sensitivity_table, OracleMode, SensitivityTable};
use longconf::seed::SeedSpec;
use longconf::sf::{correct_outcomes, ProbabilitySource, SensitivityFunctionSpec, SfKind};

#[derive(Parser)]
#[command(name = "longconf", version, about = "Sensitivity analysis for time-varying unmeasured confounding")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a scenario.
    Simulate(SimulateArgs),
    /// True effect and true sensitivity table of a scenario.
    Oracle(OracleArgs),
    /// Write sensitivity-corrected outcomes.
    Correct(CorrectArgs),
    /// Frequentist marginal structural model.
    Msm(MsmArgs),
    /// Bayesian marginal structural model.
    Bmsm(BmsmArgs),
    /// Bayesian sensitivity analysis with a latent confounder.
    Bsa(BsaArgs),
    /// Replicated simulation study.
    Replicate(ReplicateArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    scenario: Scenario,
    #[arg(long, default_value = "reported")]
    coefficients: CoefficientPreset,
    /// Coefficient override, e.g. `--set Y.A3=-5`; repeatable.
    #[arg(long = "set", value_parser = parse_assignment)]
    overrides: Vec<(String, f64)>,
}

impl ScenarioArgs {
    fn spec(&self, n: usize) -> ScenarioSpec {
        let mut spec = ScenarioSpec::new(self.scenario, n).with_preset(self.coefficients);
        for (k, v) in &self.overrides {
            spec = spec.with_override(k, *v);
        }
        spec
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Keep the latent columns in the output.
    #[arg(long)]
    include_u: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// `exact`, or `mc` for Monte Carlo.
    #[arg(long, default_value = "exact")]
    mode: String,
    #[arg(long, default_value_t = 10_000_000)]
    draws: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write the sensitivity table as CSV.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SfArgs {
    /// `zero`, `const:c1,c2,c3`, `oracle:table.csv` or `band:h[:sign]`.
    #[arg(long)]
    sf: Option<String>,
    /// Treatment probabilities for the correction: `fitted` or `oracle` (oracle tables only).
    #[arg(long)]
    probabilities: Option<String>,
}

#[derive(Args)]
struct CorrectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    sf: SfArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MsmArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    sf: SfArgs,
    /// `iptw` or `unit`.
    #[arg(long, default_value = "iptw")]
    weights: String,
    /// Adjust for the latent columns (they must be present).
    #[arg(long)]
    include_u: bool,
    #[arg(long)]
    unstabilized: bool,
    /// Percentile truncation, e.g. `1,99`.
    #[arg(long, value_parser = parse_pair)]
    truncate: Option<(f64, f64)>,
    #[arg(long, default_value = "cumdose")]
    form: MarginalForm,
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BmsmArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    sf: SfArgs,
    #[arg(long = "B", default_value_t = 1000)]
    draws: usize,
    #[arg(long, default_value = "cumdose")]
    form: MarginalForm,
    /// `plugin` or `posterior:<draws>`.
    #[arg(long, default_value = "plugin")]
    weight_mode: String,
    #[arg(long)]
    include_u: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BsaArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "u", default_value = "time-varying")]
    structure: UStructure,
    #[arg(long, default_value_t = 25000)]
    burnin: usize,
    #[arg(long, default_value_t = 25000)]
    keep: usize,
    #[arg(long, default_value_t = 5)]
    thin: usize,
    /// `simulation` or `application`.
    #[arg(long, default_value = "simulation")]
    priors: String,
    /// Override the bias-parameter bounds, e.g. `-1,1`.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    bias_bounds: Option<(f64, f64)>,
    /// Forward trajectories per draw (default: n).
    #[arg(long)]
    mc_paths: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Dump monitored chains as CSV.
    #[arg(long)]
    chains_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplicateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    ns: usize,
    #[arg(long, value_delimiter = ',', default_value = "msm-x,msm-u,sf-freq,sf-bayes,bsa-ti,bsa-tv")]
    estimators: Vec<EstimatorKind>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Full-length chains (25000 / 25000 / 5) instead of 2000 / 2000 / 2.
    #[arg(long)]
    full_scale: bool,
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,
    #[arg(long, default_value_t = 1000)]
    bmsm_draws: usize,
    /// `auto`, `exact` or `mc:<draws>`.
    #[arg(long, default_value = "auto")]
    truth: String,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full report with per-replication records as JSON.
    #[arg(long)]
    raw: Option<PathBuf>,
}

fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got '{s}'"))?;
    Ok((k.to_string(), v.parse().map_err(|e| format!("{e}"))?))
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected LO,HI, got '{s}'"))?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

fn write_output(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, content).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(content.as_bytes())?;
            Ok(())
        }
    }
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_output(path, &s)
}

fn read_data(path: &Path) -> Result<LongitudinalDataset> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(LongitudinalDataset::read_csv(BufReader::new(f))?)
}

fn read_table(path: &Path) -> Result<SensitivityTable> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(SensitivityTable::read_csv(BufReader::new(f))?)
}

fn sensitivity_spec(args: &SfArgs, data: &LongitudinalDataset) -> Result<Option<SensitivityFunctionSpec>> {
    let Some(sf) = args.sf.as_deref() else {
        if args.probabilities.is_some() {
            bail!("--probabilities needs --sf");
        }
        return Ok(None);
    };
    let (kind, rest) = sf.split_once(':').unwrap_or((sf, ""));
    let spec = match kind {
        "zero" => SensitivityFunctionSpec::zero(),
        "const" => {
            let c = rest.split(',').map(|v| v.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>().context("parsing constants")?;
            if c.len() != data.visits() {
                bail!("expected {} constants, got {}", data.visits(), c.len());
            }
            SensitivityFunctionSpec::new(SfKind::ConstantPerVisit(c))
        }
        "oracle" => SensitivityFunctionSpec::oracle(Arc::new(read_table(Path::new(rest))?)),
        "band" => {
            let mut parts = rest.split(':');
            let h: f64 = parts.next().unwrap_or("").parse().context("parsing band multiplier")?;
            let sign: f64 = parts.next().map(str::parse).transpose().context("parsing band sign")?.unwrap_or(1.0);
            SensitivityFunctionSpec::residual_band(data, h, sign)?
        }
        other => bail!("unknown sensitivity function '{other}'"),
    };
    let spec = match args.probabilities.as_deref() {
        None => spec,
        Some("fitted") => spec.with_probabilities(ProbabilitySource::FittedModels),
        Some("oracle") => match &spec.kind {
            SfKind::OracleTable(t) => {
                let t = t.clone();
                spec.with_probabilities(ProbabilitySource::OracleTable(t))
            }
            _ => bail!("oracle probabilities need an oracle table"),
        },
        Some(other) => bail!("unknown probability source '{other}'"),
    };
    Ok(Some(spec))
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let spec = a.scenario.spec(a.n);
    let data = simulate(&spec, &mut SeedSpec::new(a.seed).stream("simulate", 0))?;
    let data = if a.include_u { data } else { data.observed() };
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    write_output(a.out.as_deref(), std::str::from_utf8(&buf)?)
}

#[derive(Serialize)]
struct OracleOutput {
    scenario: String,
    coefficients: CoefficientPreset,
    #[serde(flatten)]
    result: longconf::oracle::OracleResult,
}

fn cmd_oracle(a: OracleArgs) -> Result<()> {
    let model = a.scenario.spec(0).model()?;
    let mode = match a.mode.as_str() {
        "exact" => OracleMode::Exact,
        "mc" => OracleMode::MonteCarlo { draws: a.draws },
        other => bail!("unknown oracle mode '{other}'"),
    };
    let seed = SeedSpec::new(a.seed);
    let j = model.visits();
    let result = true_ate(&model, (&TreatmentRegime::always(j), &TreatmentRegime::never(j)), mode, &mut seed.stream("oracle-ate", 0))?;
    if let Some(path) = &a.table {
        let table = true_sensitivity_table(&model, mode, &mut seed.stream("oracle-table", 0))?;
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        table.write_csv(BufWriter::new(f))?;
    }
    let out = OracleOutput { scenario: a.scenario.scenario.to_string(), coefficients: a.scenario.coefficients, result };
    write_json(a.out.as_deref(), &out)
}

fn cmd_correct(a: CorrectArgs) -> Result<()> {
    let data = read_data(&a.input)?;
    let Some(spec) = sensitivity_spec(&a.sf, &data)? else { bail!("--sf is required") };
    let fits = if spec.needs_fitted_models() { Some(fit_treatment_models(&data.observed(), false)?) } else { None };
    let corrected = correct_outcomes(&data, &spec, fits.as_ref())?;
    let mut buf = Vec::new();
    data.write_csv_with_extras(&mut buf, &[("y_sf", &corrected.y_sf), ("correction", &corrected.correction)])?;
    write_output(a.out.as_deref(), std::str::from_utf8(&buf)?)
}

fn cmd_msm(a: MsmArgs) -> Result<()> {
    let data = read_data(&a.input)?;
    let weighting = match a.weights.as_str() {
        "iptw" => Weighting::Iptw { include_u: a.include_u },
        "unit" => Weighting::Unit,
        other => bail!("unknown weighting '{other}'"),
    };
    let est = MsmEstimator {
        weighting,
        weight_options: WeightOptions { stabilized: !a.unstabilized, truncation: a.truncate },
        form: a.form,
        sf: sensitivity_spec(&a.sf, &data)?,
        bootstrap: a.bootstrap,
    };
    let result = est.estimate(&data, &SeedSpec::new(a.seed))?;
    write_json(a.out.as_deref(), &result)
}

#[derive(Serialize)]
struct BmsmOutput {
    point: f64,
    mean: f64,
    sd: f64,
    ci95: (f64, f64),
    #[serde(rename = "B")]
    draws: usize,
    skipped: usize,
}

fn cmd_bmsm(a: BmsmArgs) -> Result<()> {
    let data = read_data(&a.input)?;
    let weight_mode = match a.weight_mode.split_once(':') {
        None if a.weight_mode == "plugin" => WeightMode::PluginML,
        Some(("posterior", d)) => WeightMode::PosteriorMean { draws: d.parse().context("parsing posterior draws")? },
        _ => bail!("unknown weight mode '{}'", a.weight_mode),
    };
    let msm = MsmEstimator {
        weighting: Weighting::Iptw { include_u: a.include_u },
        form: a.form,
        sf: sensitivity_spec(&a.sf, &data)?,
        ..MsmEstimator::default()
    };
    let est = BmsmEstimator { msm, config: BmsmConfig { draws: a.draws, form: a.form, weight_mode }, ..BmsmEstimator::default() };
    let p = est.estimate(&data, &SeedSpec::new(a.seed))?;
    write_json(a.out.as_deref(), &BmsmOutput { point: p.point, mean: p.mean, sd: p.sd, ci95: p.ci95, draws: a.draws, skipped: p.skipped })
}

fn cmd_bsa(a: BsaArgs) -> Result<()> {
    let data = read_data(&a.input)?.observed();
    let mut priors = match a.priors.as_str() {
        "simulation" => PriorConfig::simulation(),
        "application" => PriorConfig::application(),
        other => bail!("unknown prior preset '{other}'"),
    };
    if let Some((lo, hi)) = a.bias_bounds {
        priors = priors.with_bias_bounds(lo, hi);
    }
    let model = build_model(data.visits(), data.covariates(), a.structure, &priors)?;
    let cfg = ChainConfig { burn_in: a.burnin, kept_iterations: a.keep, thin: a.thin, mc_paths: a.mc_paths, ..ChainConfig::default() };
    let post = fit_bsa(&model, &data, &cfg, &SeedSpec::new(a.seed))?;
    if let Some(path) = &a.chains_out {
        let names: Vec<&str> = model.outcome.terms.iter().map(|t| t.name.as_str()).collect();
        let cols: Vec<Vec<f64>> = names.iter().map(|n| post.chain.draws_of(n).expect("outcome parameter")).collect();
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        writeln!(w, "{},ATE", names.join(","))?;
        for (s, ate) in post.ate_draws.iter().enumerate() {
            let row: Vec<String> = cols.iter().map(|c| c[s].to_string()).collect();
            writeln!(w, "{},{ate}", row.join(","))?;
        }
        w.flush()?;
    }
    write_json(a.out.as_deref(), &post.summary())
}

fn cmd_replicate(a: ReplicateArgs) -> Result<()> {
    let mut cfg = StudyConfig::new(a.scenario.spec(a.n), a.ns, a.estimators.clone(), a.seed);
    cfg.truth = match a.truth.split_once(':') {
        None if a.truth == "auto" => TruthSource::Auto,
        None if a.truth == "exact" => TruthSource::Exact,
        Some(("mc", d)) => TruthSource::MonteCarlo { draws: d.parse().context("parsing oracle draws")? },
        _ => bail!("unknown truth source '{}'", a.truth),
    };
    cfg.configs.msm_bootstrap = a.bootstrap;
    cfg.configs.bmsm.draws = a.bmsm_draws;
    if a.full_scale {
        cfg.configs.chain = ChainConfig::default();
    }
    let report = run_study(&cfg)?;
    if let Some(path) = &a.raw {
        write_json(Some(path), &report)?;
    }
    write_output(a.out.as_deref(), &render_report(&report, a.format))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global()?;
    }
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Correct(a) => cmd_correct(a),
        Command::Msm(a) => cmd_msm(a),
        Command::Bmsm(a) => cmd_bmsm(a),
        Command::Bsa(a) => cmd_bsa(a),
        Command::Replicate(a) => cmd_replicate(a),
    }
}
