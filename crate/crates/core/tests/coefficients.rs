use longconf::dgp::{CoefficientPreset, Scenario, ScenarioSpec};

fn render(preset: CoefficientPreset) -> String {
    let mut out = String::new();
    for sc in Scenario::ALL {
        out.push_str(&format!("[{sc}]\n"));
        out.push_str(&ScenarioSpec::new(sc, 0).with_preset(preset).model().unwrap().render_coefficients());
    }
    out
}

fn check(preset: CoefficientPreset, path: &str) {
    let got = render(preset);
    let full = format!("{}/tests/golden/{path}", env!("CARGO_MANIFEST_DIR"));
    if std::env::var_os("LONGCONF_BLESS").is_some() {
        std::fs::write(&full, &got).unwrap();
    }
    let want = std::fs::read_to_string(&full).unwrap();
    assert_eq!(got, want, "coefficient table drifted from {path}");
}

#[test]
fn printed_coefficients_match_golden() {
    check(CoefficientPreset::Printed, "coefficients_printed.txt");
}

#[test]
fn reported_coefficients_match_golden() {
    check(CoefficientPreset::Reported, "coefficients_reported.txt");
}
