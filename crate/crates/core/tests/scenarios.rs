use exrob_core::criteria::CriterionId;
use exrob_core::explainers::MethodId;
use exrob_core::scenarios::*;

fn run(id: ScenarioId) -> ScenarioResult {
    run_scenario(&ScenarioFixture::builtin(id).unwrap()).unwrap()
}

fn assert_clean(r: &ScenarioResult) {
    if let Some(o) = r.observed.iter().find(|o| !o.matches()) {
        panic!("{}: {o:?}", r.scenario);
    }
    if let Some(g) = r.regressions.iter().find(|g| !g.ok) {
        panic!("{}: {g:?}", r.scenario);
    }
    assert!(r.agreement && r.regressions_ok());
}

#[test]
fn every_packaged_scenario_matches_its_fixture() {
    for id in ScenarioId::ALL {
        let r = run(id);
        assert_eq!(r.scenario, id);
        assert_clean(&r);
    }
}

#[test]
fn kindermans_separates_gradient_from_input_x_gradient() {
    let r = run(ScenarioId::KindermansShift);
    for arm in ["linear", "mlp"] {
        let ixg = r.observation(arm, CriterionId::Emr1, &[MethodId::InputXGradient]).unwrap();
        let g = r.observation(arm, CriterionId::Emr1, &[MethodId::Gradient]).unwrap();
        assert_eq!((ixg.pass, g.pass), (Some(false), Some(true)), "{arm}");
        assert!(r.measurements[&format!("{arm}/max_shift_identity_deviation")] < 1e-10);
    }
}

#[test]
fn changed_expectation_is_reported_as_disagreement() {
    let mut fx = ScenarioFixture::builtin(ScenarioId::RudinDistinctPredictions).unwrap();
    let e = fx
        .expected
        .iter_mut()
        .find(|e| e.methods == [MethodId::ExactShapley])
        .unwrap();
    e.pass = !e.pass;
    let r = run_scenario(&fx).unwrap();
    assert!(!r.agreement);
    assert_eq!(r.observed.iter().filter(|o| !o.matches()).count(), 1);
}

#[test]
fn fixture_parse_errors_name_the_field() {
    let text = ScenarioId::AdebayoRandomization
        .builtin_fixture()
        .replace("\"seed\": 2", "\"seed\": \"two\"");
    let err = ScenarioFixture::from_json(&text).unwrap_err().to_string();
    assert!(err.contains("seed"), "{err}");
}

#[test]
fn scenario_ids_round_trip() {
    for id in ScenarioId::ALL {
        assert_eq!(id.as_str().parse::<ScenarioId>().unwrap(), id);
    }
    assert!("nope".parse::<ScenarioId>().is_err());
}
