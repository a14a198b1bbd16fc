//! Browser bindings: network generation, a single-asset shock and a small
//! contagion trial. Results are returned as JSON strings.

use std::fmt::Write;

use flashnet::engine::{run_trial, TrialConfig};
use flashnet::metrics::{propagation_speed, Speed, DEFAULT_ZETA};
use flashnet::netgen::{components, generate_network, NetworkParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "null".into(), |x| x.to_string())
}

/// Generates a fund-asset network; returns its edges and component sizes.
#[wasm_bindgen]
pub fn network(n_funds: usize, n_assets: usize, rho: f64, beta: f64, alpha: f64, seed: u64) -> Result<String, JsError> {
    let params = NetworkParams { n_funds, n_assets, rho, beta, alpha, ..NetworkParams::default() };
    let net = generate_network(&params, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut s = String::from("{\"edges\":[");
    for (i, (f, a, v)) in net.edges().enumerate() {
        let _ = write!(s, "{}[{f},{a},{v}]", if i > 0 { "," } else { "" });
    }
    let sizes: Vec<String> = components(&net).iter().map(|c| c.funds.len().to_string()).collect();
    let _ = write!(s, "],\"component_funds\":[{}]}}", sizes.join(","));
    Ok(s)
}

/// Runs one fund holding one asset and shocks it with a distressed seller.
/// Returns the price once per second and the crash timing in steps.
#[wasm_bindgen]
pub fn shock(eta: f64, delta_s: f64, steps: u64, seed: u64) -> Result<String, JsError> {
    let mut config = TrialConfig { steps, seed, ..TrialConfig::default() };
    config.shock.eta = eta;
    config.shock.delta_s = delta_s;
    let r = run_trial(&config)?;
    let prices: Vec<String> = r.prices[0].iter().step_by(20).map(ToString::to_string).collect();
    let onset = r.crash_sets[0].first_at_or_after(r.shock_step).map(|t| t - r.shock_step);
    Ok(format!(
        "{{\"prices\":[{}],\"shock_step\":{},\"first_crash\":{},\"onset_gap\":{},\"auctions\":{}}}",
        prices.join(","),
        r.shock_step,
        opt(r.first_crash[0]),
        opt(onset),
        r.volatility_auctions[0]
    ))
}

/// Runs a shocked trial on a generated network and reports the contagion.
#[wasm_bindgen]
pub fn contagion(n: usize, rho: f64, beta: f64, leverage: f64, tau_c: f64, seed: u64) -> Result<String, JsError> {
    let network = NetworkParams { n_funds: n, n_assets: n, rho, beta, leverage, ..NetworkParams::default() };
    let config = TrialConfig { network, tau_c, seed, ..TrialConfig::default() };
    let r = run_trial(&config)?;
    let speed = match propagation_speed(&r.first_crash, DEFAULT_ZETA, r.dt_ms) {
        Speed::Undefined => "null".to_string(),
        Speed::Infinite => "\"inf\"".to_string(),
        Speed::Finite(s) => s.to_string(),
    };
    Ok(format!(
        "{{\"f_default\":{},\"margin_called\":{},\"crashed_assets\":{},\"speed\":{},\"shocked_asset\":{}}}",
        r.fraction_defaulted(),
        r.margin_calls.iter().filter(|&&c| c > 0).count(),
        r.first_crash.iter().flatten().count(),
        speed,
        opt(r.shocked_asset)
    ))
}
