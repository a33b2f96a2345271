use longconf::bmsm::draw_dirichlet;
use longconf::seed::SeedSpec;

#[test]
fn flat_dirichlet_component_moments() {
    let n = 100_000usize;
    let d = draw_dirichlet(n, &mut SeedSpec::new(31).stream("dirichlet", 0));
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    assert!((mean - 1.0 / nf).abs() < 1e-15);

    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let m4 = d.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / nf;
    let se = ((m4 - var * var) / nf).sqrt();
    let want = (nf - 1.0) / (nf * nf * (nf + 1.0));
    assert!((var - want).abs() < 5.0 * se, "variance {var} vs {want} (se {se})");
}

#[test]
fn repeated_small_draws_match_beta_marginal() {
    // Each component of a flat Dirichlet on k categories is Beta(1, k - 1).
    let k = 4usize;
    let reps = 40_000;
    let mut rng = SeedSpec::new(32).stream("dirichlet", 0);
    let first: Vec<f64> = (0..reps).map(|_| draw_dirichlet(k, &mut rng)[0]).collect();
    let m = first.iter().sum::<f64>() / reps as f64;
    let v = first.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
    let kf = k as f64;
    let want_var = (kf - 1.0) / (kf * kf * (kf + 1.0));
    assert!((m - 1.0 / kf).abs() < 5.0 * (want_var / reps as f64).sqrt());
    assert!((v / want_var - 1.0).abs() < 0.05, "variance {v} vs {want_var}");
}
