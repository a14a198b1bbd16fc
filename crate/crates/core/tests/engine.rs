use flashnet::agents::AgentKind;
use flashnet::engine::{run_ensemble, run_ensemble_with, run_trial, EngineError, TrialConfig, TrialState};
use flashnet::macrofin::FundState;
use flashnet::metrics::{write_trial_metrics, TrialMetrics};
use flashnet::netgen::NetworkParams;

fn small(seed: u64) -> TrialConfig {
    TrialConfig {
        steps: 20_000,
        network: NetworkParams { n_funds: 3, n_assets: 3, rho: 0.5, ..NetworkParams::default() },
        seed,
        record_trades: true,
        snapshot_every: Some(1_000),
        ..TrialConfig::default()
    }
}

fn metrics_csv(results: &[flashnet::engine::TrialResult]) -> Vec<u8> {
    let rows: Vec<TrialMetrics> = results.iter().map(|r| TrialMetrics::from_result(0, r, 0.05, 0.8)).collect();
    let mut out = Vec::new();
    write_trial_metrics(&mut out, &rows).unwrap();
    out
}

#[test]
fn same_seed_same_result() {
    let a = run_trial(&small(17)).unwrap();
    let b = run_trial(&small(17)).unwrap();
    assert_eq!(a, b);
    assert_eq!(metrics_csv(&[a.clone()]), metrics_csv(&[b]));
    let c = run_trial(&small(18)).unwrap();
    assert_ne!(a.prices, c.prices);
}

#[test]
fn ensemble_output_ignores_worker_count() {
    let configs: Vec<TrialConfig> = (0..5).map(small).collect();
    let serial = run_ensemble(&configs, 1).unwrap();
    let parallel = run_ensemble(&configs, 3).unwrap();
    assert_eq!(serial, parallel);
    assert_eq!(serial.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
}

#[test]
fn empty_ensemble() {
    assert!(run_ensemble(&[], 4).unwrap().is_empty());
}

#[test]
fn ensemble_reports_every_bad_config() {
    let mut bad = small(1);
    bad.tau_c = 0.5;
    let err = run_ensemble_with(&[small(0), bad, bad], 1, |_, r| r.seed).unwrap_err();
    assert_eq!(err.errors.iter().map(|e| e.0).collect::<Vec<_>>(), vec![1, 2]);
}

#[test]
fn invalid_configs_are_rejected() {
    let cases = [
        TrialConfig { dt_ms: 0, ..small(0) },
        TrialConfig { tau_c: 0.9, ..small(0) },
        TrialConfig { shock_fraction: 0.01, ..small(0) },
        TrialConfig { shock_fraction: 1.0, ..small(0) },
        TrialConfig { snapshot_every: Some(0), ..small(0) },
    ];
    for c in cases {
        assert!(matches!(c.validate(), Err(EngineError::InvalidConfig(_))), "{c:?}");
    }
    let bad_net = TrialConfig { network: NetworkParams { rho: 2.0, ..small(0).network }, ..small(0) };
    assert!(matches!(bad_net.validate(), Err(EngineError::Network(_))));
}

#[test]
fn shock_arrives_at_the_shock_step() {
    let cfg = small(5);
    let t_star = cfg.shock_step();
    assert_eq!(t_star, 4_000);
    let mut state = TrialState::new(cfg).unwrap();
    let distressed = |s: &TrialState| s.agents().iter().filter(|a| a.kind == AgentKind::Distressed).count();
    while state.now() < t_star {
        state.step();
    }
    assert_eq!(distressed(&state), 0);
    state.step();
    assert_eq!(distressed(&state), 1);
    let result = state.finish();
    let asset = result.shocked_asset.expect("shock injected");
    assert!(asset < 3);
}

#[test]
fn unshocked_trial_has_no_shocked_asset() {
    let mut cfg = small(6);
    cfg.shock.enabled = false;
    let r = run_trial(&cfg).unwrap();
    assert_eq!(r.shocked_asset, None);
}

#[test]
fn infinite_tolerance_means_no_calls_or_defaults() {
    let mut cfg = small(7);
    cfg.tau_c = f64::INFINITY;
    let r = run_trial(&cfg).unwrap();
    assert!(r.margin_calls.iter().all(|&c| c == 0));
    assert!(r.fund_states.iter().all(|&s| s == FundState::Normal));
    assert_eq!(r.fraction_defaulted(), 0.0);
}

#[test]
fn recorded_series_have_the_expected_shape() {
    let cfg = small(8);
    let r = run_trial(&cfg).unwrap();
    assert_eq!(r.n_assets(), 3);
    for p in &r.prices {
        assert_eq!(p.len(), cfg.steps as usize);
        assert!(p.iter().all(|&x| x > 0));
    }
    for book in r.trades.as_ref().unwrap() {
        assert!(book.iter().all(|t| t.time < cfg.steps && t.price > 0 && t.quantity > 0));
        assert!(book.windows(2).all(|w| w[0].time <= w[1].time));
    }
    // Balance sheets are sampled once monitoring starts at the shock.
    assert_eq!(r.snapshots.len(), 3 * 16);
    assert_eq!(r.snapshots[0].step, cfg.shock_step());
    assert!(r.snapshots.windows(2).all(|w| w[0].step <= w[1].step));
    for (j, set) in r.crash_sets.iter().enumerate() {
        assert_eq!(set.first(), r.first_crash[j]);
    }
}

#[test]
fn default_times_lie_inside_the_run() {
    for seed in 0..3 {
        let mut cfg = small(seed);
        cfg.network.leverage = 10.0;
        let r = run_trial(&cfg).unwrap();
        for (state, step) in r.fund_states.iter().zip(&r.default_steps) {
            assert_eq!(*state == FundState::Default, step.is_some());
            assert!(step.map_or(true, |t| t < cfg.steps));
        }
    }
}
