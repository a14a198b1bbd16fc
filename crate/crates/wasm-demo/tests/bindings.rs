use flashnet_demo::{contagion, network, shock};

#[test]
fn complete_network_is_one_component() {
    let json = network(3, 2, 1.0, 0.0, 1.0, 7).unwrap();
    assert!(json.starts_with("{\"edges\":[[0,0,2000000],[0,1,2000000],"), "{json}");
    assert!(json.ends_with("\"component_funds\":[3]}"), "{json}");
}

#[test]
fn shock_reports_prices_per_second() {
    let json = shock(0.09, 10.0, 20_000, 3).unwrap();
    let prices = json.split("\"prices\":[").nth(1).unwrap().split(']').next().unwrap();
    assert_eq!(prices.split(',').count(), 1_000);
    assert!(json.contains("\"shock_step\":4000"));
}

#[test]
fn contagion_is_deterministic() {
    let a = contagion(5, 0.5, 0.0, 3.0, 1.01, 11).unwrap();
    assert_eq!(a, contagion(5, 0.5, 0.0, 3.0, 1.01, 11).unwrap());
    assert!(a.starts_with("{\"f_default\":"));
}
