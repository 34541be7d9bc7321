use misclass_core::sim::run_estimator;
use misclass_core::{
    fit_em, generate_dataset, read_dataset, write_dataset, EmConfig, Method, ScenarioConfig,
};

#[test]
fn csv_round_trip_preserves_fit() {
    let scenario = ScenarioConfig { n: 1500, seed: 3, ..ScenarioConfig::setting1() };
    let g = generate_dataset(&scenario, 0).unwrap();
    let mut buf = Vec::new();
    write_dataset(&g.data, Some(&g.y_true), &mut buf).unwrap();
    let loaded = read_dataset(buf.as_slice()).unwrap();
    assert_eq!(loaded.data, g.data);
    assert_eq!(loaded.y_true.as_deref(), Some(g.y_true.as_slice()));

    let a = fit_em(&g.data, &EmConfig::default()).unwrap();
    let b = fit_em(&loaded.data, &EmConfig::default()).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn em_beats_naive_on_slope() {
    let scenario = ScenarioConfig { n: 4000, seed: 8, ..ScenarioConfig::setting2() };
    let g = generate_dataset(&scenario, 0).unwrap();
    let em = run_estimator(Method::Em, &g.data, &scenario, 0).unwrap();
    let naive = run_estimator(Method::Naive, &g.data, &scenario, 0).unwrap();
    let truth = scenario.beta_true[1];
    assert!((em.beta[1] - truth).abs() < (naive.beta[1] - truth).abs());
    let json = em.to_json();
    assert_eq!(json["method"], "em");
    assert_eq!(json["coefficients"]["gamma2"].as_array().unwrap().len(), 2);
    assert_eq!(json["covariance"]["matrix"].as_array().unwrap().len(), 6);
}

#[test]
fn transposed_start_lands_in_the_same_corrected_mode() {
    let scenario = ScenarioConfig { n: 3000, seed: 12, ..ScenarioConfig::setting2() };
    let g = generate_dataset(&scenario, 0).unwrap();
    let truth = scenario.truth();
    let from = |p| {
        fit_em(&g.data, &EmConfig { init: misclass_core::InitStrategy::Given { params: p }, ..EmConfig::default() }).unwrap()
    };
    let a = from(truth.clone());
    let b = from(truth.transpose());
    assert!(b.correction.unwrap().flipped);
    for (x, y) in a.free_values().iter().zip(b.free_values()) {
        assert!((x - y).abs() < 1e-3, "{x} vs {y}");
    }
}
