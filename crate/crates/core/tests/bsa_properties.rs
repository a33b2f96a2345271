use longconf::bsa::{build_model, fit_bsa, gcomp_apo, geweke_z, run_chain, BsaModel, ChainConfig, ChainState, PriorConfig, UStructure, Var};
use longconf::data::{LongitudinalDataset, TreatmentRegime};
use longconf::dgp::{simulate, Scenario, ScenarioSpec};
use longconf::glm::DesignMatrix;
use longconf::mh::{sample_logistic_posterior, Prior, SamplerConfig};
use longconf::msm::{MsmEstimator, Weighting};
use longconf::seed::SeedSpec;
use longconf::Error;
use rand::Rng;
use rand_distr::StandardNormal;

fn sim(scenario: Scenario, n: usize, seed: u64) -> LongitudinalDataset {
    simulate(&ScenarioSpec::new(scenario, n), &mut SeedSpec::new(seed).stream("bsa-props", 0)).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// Monte Carlo standard error of a chain mean from 20 batch means.
fn mcse(v: &[f64]) -> f64 {
    let b = 20;
    let size = v.len() / b;
    let means: Vec<f64> = (0..b).map(|k| mean(&v[k * size..(k + 1) * size])).collect();
    sd(&means) / (b as f64).sqrt()
}

#[test]
fn chain_rejects_oracle_columns() {
    let data = sim(Scenario::TvBinaryU, 50, 1);
    let model = build_model(3, 1, UStructure::TimeVarying, &PriorConfig::simulation()).unwrap();
    let cfg = ChainConfig { burn_in: 5, kept_iterations: 5, thin: 1, ..ChainConfig::short() };
    assert!(matches!(run_chain(&model, &data, &cfg, &SeedSpec::new(1)), Err(Error::OracleColumns)));
}

#[test]
fn draws_stay_inside_prior_support() {
    let data = sim(Scenario::TvBinaryU, 300, 2).observed();
    let priors = PriorConfig::simulation().with_bias_bounds(-0.5, 0.5);
    for structure in [UStructure::TimeVarying, UStructure::TimeInvariant] {
        let model = build_model(3, 1, structure, &priors).unwrap();
        let cfg = ChainConfig { burn_in: 200, kept_iterations: 400, thin: 1, ..ChainConfig::short() };
        let chain = run_chain(&model, &data, &cfg, &SeedSpec::new(3)).unwrap();
        let bounded: Vec<(usize, f64, f64)> = model
            .terms()
            .enumerate()
            .filter_map(|(k, t)| match t.prior {
                Prior::Uniform { lo, hi } => Some((k, lo, hi)),
                Prior::Normal { .. } => None,
            })
            .collect();
        assert!(!bounded.is_empty());
        for d in &chain.draws {
            for &(k, lo, hi) in &bounded {
                assert!(d[k] >= lo && d[k] <= hi, "{} = {} outside [{lo}, {hi}]", chain.names[k], d[k]);
            }
            assert!(*d.last().unwrap() > 0.0);
        }
    }
}

fn treatment_design_for(model: &BsaModel, data: &LongitudinalDataset, node: &str) -> (DesignMatrix, Vec<f64>, Vec<String>) {
    let spec = model.nodes.iter().find(|s| s.name == node).unwrap();
    let terms: Vec<_> = spec.terms.iter().filter(|t| !matches!(t.var, Var::U(_))).collect();
    let rows: Vec<Vec<f64>> = (0..data.n())
        .map(|i| {
            terms
                .iter()
                .map(|t| match t.var {
                    Var::One => 1.0,
                    Var::X(j) => data.x(i, j, 0),
                    Var::A(j) => data.a(i, j) as f64,
                    Var::U(_) => unreachable!(),
                })
                .collect()
        })
        .collect();
    let names: Vec<String> = terms.iter().map(|t| t.name.clone()).collect();
    let Var::A(j) = spec.response else { panic!("{node} is not a treatment model") };
    let y = (0..data.n()).map(|i| data.a(i, j) as f64).collect();
    (DesignMatrix::from_rows(names.clone(), &rows).unwrap(), y, names)
}

#[test]
fn zero_bias_bounds_factorize_the_posterior() {
    let data = sim(Scenario::NoU, 1500, 4).observed();
    let priors = PriorConfig::simulation().with_bias_bounds(0.0, 0.0);
    let model = build_model(3, 1, UStructure::TimeVarying, &priors).unwrap();
    let cfg = ChainConfig { burn_in: 1000, kept_iterations: 4000, thin: 1, ..ChainConfig::short() };
    let chain = run_chain(&model, &data, &cfg, &SeedSpec::new(5)).unwrap();

    // Treatment model coefficients match a standalone fit of the same model.
    let (x, y, names) = treatment_design_for(&model, &data, "A3");
    let standalone_priors: Vec<Prior> = names
        .iter()
        .map(|n| Prior::Normal { precision: if n.ends_with("intercept") { priors.intercept_precision } else { priors.coefficient_precision } })
        .collect();
    let sampler = SamplerConfig { burn_in: 1000, draws: 4000, thin: 1, initial_scale: 0.3 };
    let alone = sample_logistic_posterior(&x, &y, &standalone_priors, sampler, &mut SeedSpec::new(6).stream("standalone", 0)).unwrap();
    for (k, name) in names.iter().enumerate() {
        let joint = chain.draws_of(name).unwrap();
        let single: Vec<f64> = alone.iter().map(|d| d[k]).collect();
        let tol = 3.0 * (mcse(&joint).powi(2) + mcse(&single).powi(2)).sqrt();
        assert!((mean(&joint) - mean(&single)).abs() < tol, "{name}: {} vs {} (tol {tol})", mean(&joint), mean(&single));
    }

    // Outcome treatment effects recover the generating values.
    for (name, truth) in [("Y.A1", -2.0), ("Y.A2", -3.0), ("Y.A3", -4.0), ("Y.X2", -1.0)] {
        let d = chain.draws_of(name).unwrap();
        assert!((mean(&d) - truth).abs() < 3.0 * sd(&d), "{name}: {} (sd {}) vs {truth}", mean(&d), sd(&d));
    }
    for name in ["Y.U1", "Y.U2", "Y.U3", "A3.U1", "X2.U1"] {
        assert!(chain.draws_of(name).unwrap().iter().all(|&v| v == 0.0), "{name} moved");
    }
}

#[test]
fn known_latent_values_give_consistent_g_computation() {
    let full = sim(Scenario::TvBinaryU, 2000, 7);
    let model = build_model(3, 1, UStructure::TimeVarying, &PriorConfig::simulation()).unwrap();
    let lat = full.latent().unwrap();
    let u: Vec<Vec<f64>> = (0..3).map(|m| (0..full.n()).map(|i| lat.get(i, m)[0]).collect()).collect();
    let observed = full.observed();
    let mut params: Vec<f64> = model.terms().map(|t| t.prior.initial()).collect();
    params.push(0.25);
    let mut state = ChainState::new(&model, &observed, &params, &u, 0.3).unwrap();
    let mut rng = SeedSpec::new(8).stream("fixed-u", 0);
    for _ in 0..1500 {
        state.sweep_parameters(&mut rng, true);
    }
    let mut draws = Vec::new();
    for it in 0..2000 {
        state.sweep_parameters(&mut rng, false);
        if it % 10 == 0 {
            draws.push(state.parameters());
        }
        assert_eq!(state.latent(0), u[0].as_slice());
    }
    let gseed = SeedSpec::new(9);
    let a1 = gcomp_apo(&model, &draws, &TreatmentRegime::always(3), 2000, &gseed).unwrap();
    let a0 = gcomp_apo(&model, &draws, &TreatmentRegime::never(3), 2000, &gseed).unwrap();
    let ate: Vec<f64> = a1.iter().zip(&a0).map(|(a, b)| a - b).collect();

    let msm_u = MsmEstimator { weighting: Weighting::Iptw { include_u: true }, bootstrap: 0, ..MsmEstimator::default() };
    let reference = msm_u.point(&full).unwrap().0.ate;
    assert!((mean(&ate) - reference).abs() < 0.5, "g-computation {} vs weighted {reference}", mean(&ate));
    assert!((mean(&ate) - (-10.27)).abs() < 4.0 * sd(&ate), "g-computation {} (sd {})", mean(&ate), sd(&ate));
}

/// Parameters of the same model written in terms of `1 - U`.
fn relabel(model: &BsaModel, params: &[f64]) -> Vec<f64> {
    let mut out = params.to_vec();
    let offsets = model.offsets();
    let mut blocks: Vec<(usize, &[longconf::bsa::Term], Option<usize>)> = model
        .nodes
        .iter()
        .enumerate()
        .map(|(k, n)| (offsets[k], n.terms.as_slice(), if let Var::U(m) = n.response { Some(m) } else { None }))
        .collect();
    blocks.push((offsets[model.nodes.len()], model.outcome.terms.as_slice(), None));
    for &(off, terms, _) in &blocks {
        let intercept = terms.iter().position(|t| t.var == Var::One).unwrap();
        for (t, term) in terms.iter().enumerate() {
            if let Var::U(_) = term.var {
                out[off + intercept] += params[off + t];
                out[off + t] = -params[off + t];
            }
        }
    }
    for &(off, terms, response) in &blocks {
        if response.is_some() {
            for t in 0..terms.len() {
                out[off + t] = -out[off + t];
            }
        }
    }
    out
}

#[test]
fn relabelled_latent_leaves_potential_outcomes_unchanged() {
    let mut rng = SeedSpec::new(10).stream("relabel", 0);
    for structure in [UStructure::TimeVarying, UStructure::TimeInvariant] {
        let model = build_model(3, 1, structure, &PriorConfig::simulation()).unwrap();
        let mut params: Vec<f64> = model.terms().map(|_| rng.random_range(-1.0..1.0)).collect();
        let yo = model.offsets()[model.nodes.len()];
        for (t, term) in model.outcome.terms.iter().enumerate() {
            params[yo + t] = if term.var == Var::One { 10.0 } else { rng.random_range(-4.0..4.0) };
        }
        params.push(1.0);
        let flipped = relabel(&model, &params);
        assert_ne!(params, flipped);
        let paths = 400_000;
        for regime in [TreatmentRegime::always(3), TreatmentRegime::never(3)] {
            let a = gcomp_apo(&model, &[params.clone()], &regime, paths, &SeedSpec::new(11)).unwrap()[0];
            let b = gcomp_apo(&model, &[flipped.clone()], &regime, paths, &SeedSpec::new(12)).unwrap()[0];
            // Outcome means vary by at most ~20 across paths.
            let tol = 5.0 * 2.0f64.sqrt() * 20.0 / (paths as f64).sqrt() / 2.0;
            assert!((a - b).abs() < tol, "{structure:?} {regime}: {a} vs {b}");
        }
    }
}

#[test]
fn geweke_is_calibrated_on_independent_draws() {
    let mut rng = SeedSpec::new(13).stream("geweke", 0);
    let chains = 300;
    let mut inside = 0;
    for _ in 0..chains {
        let v: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        inside += (geweke_z(&v, 0.1, 0.5).unwrap().abs() < 2.0) as usize;
    }
    let frac = inside as f64 / chains as f64;
    assert!((0.90..=0.99).contains(&frac), "fraction {frac}");
}

#[test]
fn geweke_flags_a_drifting_chain() {
    let mut rng = SeedSpec::new(14).stream("geweke", 0);
    let v: Vec<f64> = (0..5000).map(|i| i as f64 / 1000.0 + rng.sample::<f64, _>(StandardNormal)).collect();
    assert!(geweke_z(&v, 0.1, 0.5).unwrap().abs() > 2.0);
}

#[test]
fn fit_reports_diagnostics_for_outcome_terms() {
    let data = sim(Scenario::TvBinaryU, 200, 15).observed();
    let model = build_model(3, 1, UStructure::TimeInvariant, &PriorConfig::simulation()).unwrap();
    let cfg = ChainConfig { burn_in: 200, kept_iterations: 400, thin: 2, mc_paths: Some(50), ..ChainConfig::short() };
    let post = fit_bsa(&model, &data, &cfg, &SeedSpec::new(16)).unwrap();
    let s = post.summary();
    assert_eq!(s.kept_draws, 200);
    assert!(s.geweke.contains_key("ATE") && s.geweke.contains_key("Y.A3"));
    assert!(s.ate.ci95.0 <= s.ate.mean && s.ate.mean <= s.ate.ci95.1);
    assert!(s.acceptance_rates.keys().all(|k| !k.starts_with("Y.")));
}
