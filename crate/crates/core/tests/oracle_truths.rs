use longconf::data::TreatmentRegime;
use longconf::dgp::{Scenario, ScenarioSpec};
use longconf::oracle::{true_ate, true_sensitivity_table, OracleMode};
use longconf::seed::SeedSpec;

fn pair() -> (TreatmentRegime, TreatmentRegime) {
    (TreatmentRegime::always(3), TreatmentRegime::never(3))
}

#[test]
fn exact_truths_match_published_values() {
    let (t, c) = pair();
    let mut rng = SeedSpec::new(1).stream("oracle", 0);
    for (sc, want) in [(Scenario::TvBinaryU, -10.27), (Scenario::TiBinaryU, -9.62), (Scenario::NoU, -9.30)] {
        let m = ScenarioSpec::new(sc, 0).model().unwrap();
        let r = true_ate(&m, (&t, &c), OracleMode::Exact, &mut rng).unwrap();
        assert!((r.true_ate - want).abs() <= 0.01, "{sc}: {}", r.true_ate);
    }
}

#[test]
fn monte_carlo_agrees_with_enumeration() {
    let (t, c) = pair();
    let m = ScenarioSpec::new(Scenario::TvBinaryU, 0).model().unwrap();
    let mut rng = SeedSpec::new(2).stream("oracle", 0);
    let exact = true_ate(&m, (&t, &c), OracleMode::Exact, &mut rng).unwrap();
    let mc = true_ate(&m, (&t, &c), OracleMode::MonteCarlo { draws: 1_000_000 }, &mut rng).unwrap();
    assert!((mc.true_ate - exact.true_ate).abs() < 4.0 * mc.mc_standard_error, "{mc:?} vs {exact:?}");
}

#[test]
fn monte_carlo_table_reproduces_enumeration() {
    let m = ScenarioSpec::new(Scenario::TvBinaryU, 0).model().unwrap();
    let mut rng = SeedSpec::new(3).stream("oracle", 0);
    let exact = true_sensitivity_table(&m, OracleMode::Exact, &mut rng).unwrap();
    let mc = true_sensitivity_table(&m, OracleMode::MonteCarlo { draws: 10_000_000 }, &mut rng).unwrap();
    for ((j, a, x, e), (_, _, _, s)) in exact.rows().into_iter().zip(mc.rows()) {
        let (ev, sv) = (e.c.unwrap(), s.c.unwrap());
        assert!((ev - sv).abs() <= 0.02, "j={j} a={a:?} x={x:?}: exact {ev} vs mc {sv} (se {})", s.se);
    }
    for j in 0..3 {
        for ap in 0..(1u8 << j) {
            let a_prev: Vec<u8> = (0..j).map(|k| (ap >> k) & 1).collect();
            for xc in 0..(1u8 << (j + 1)) {
                let x: Vec<u8> = (0..=j).map(|k| (xc >> k) & 1).collect();
                let (pe, pm) = (exact.p_treat(j, &a_prev, &x).unwrap(), mc.p_treat(j, &a_prev, &x).unwrap());
                assert!((pe - pm).abs() < 0.01, "p_treat j={j} {a_prev:?} {x:?}: {pe} vs {pm}");
            }
        }
    }
}
