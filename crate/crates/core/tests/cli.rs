use std::fs;
use std::path::Path;
use std::process::Command;

use flashnet::cli::{self, parse_config, replicate_specs, run_experiment, ConfigError, FIGURES, WORKERS_ENV};

const SMALL: &str = r#"
name = "small"
trials = 2
steps = 20000
network.n_funds = 2
network.n_assets = 2
sweep.theta.lambda0 = [1, 10]
output.price_paths = true
output.trades = true
output.edges = true
output.snapshot_every = 2000
output.stylised = true
"#;

fn spec_in(dir: &Path, text: &str) -> cli::ExperimentSpec {
    let mut spec = parse_config(text).unwrap();
    spec.output.dir = dir.to_path_buf();
    spec
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn experiment_writes_every_table() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = spec_in(tmp.path(), SMALL);
    let report = run_experiment(&spec, 1).unwrap();
    assert_eq!(report.trials, 2 * 2);

    let metrics = fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next().unwrap(), "config_id,seed,f_default,cascade,n_crashed_assets,first_crash_step,speed,onset_gap_steps");
    assert_eq!(lines.count(), 4);
    let summary = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("config_id,trials,p_contagion,p_contagion_ci95,omega,"));
    assert_eq!(summary.lines().count(), 3);
    assert_eq!(fs::read_to_string(tmp.path().join("points.csv")).unwrap(), "config_id,theta.lambda0\n0,1\n1,10\n");

    let seeds = spec.trial_seeds();
    let trial = tmp.path().join(format!("trials/c0001_s{}", seeds[1]));
    assert_eq!(header(&trial.join("trades.csv")), "time,asset,price,qty,aggressor");
    assert_eq!(header(&trial.join("edges.csv")), "fund,asset,investment");
    assert_eq!(header(&trial.join("snapshots.csv")), "step,fund,capital,leverage,state");
    assert_eq!(header(&trial.join("prices.csv")), "step,asset,price");
    assert_eq!(header(&trial.join("market.csv")), "second,asset,volume,bid_depth,ask_depth");
    assert_eq!(header(&trial.join("stylised.csv")), "series,lag,value");
    // Once per second, two assets.
    let prices = fs::read_to_string(trial.join("prices.csv")).unwrap();
    assert_eq!(prices.lines().count(), 1 + 2 * 1000);
}

#[test]
fn manifest_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    run_experiment(&spec_in(&first, SMALL), 2).unwrap();
    let manifest = fs::read_to_string(first.join("manifest.toml")).unwrap();
    assert!(manifest.contains("manifest.version = \"flashnet "));
    assert!(manifest.contains("manifest.trial_seeds = ["));

    let second = tmp.path().join("second");
    run_experiment(&spec_in(&second, &manifest), 1).unwrap();
    for file in ["metrics.csv", "summary.csv", "gaps.csv", "points.csv"] {
        assert_eq!(fs::read(first.join(file)).unwrap(), fs::read(second.join(file)).unwrap(), "{file}");
    }
    let mut renamed = fs::read_to_string(second.join("manifest.toml")).unwrap();
    renamed = renamed.replace(&second.to_string_lossy().to_string(), &first.to_string_lossy());
    assert_eq!(renamed, manifest);
}

#[test]
fn empty_sweep_runs_the_base_config_once_per_trial() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = spec_in(tmp.path(), "trials = 3\nsteps = 20000\nseed = 9");
    assert_eq!(spec.trial_seeds(), vec![9, 10, 11]);
    let report = run_experiment(&spec, 1).unwrap();
    assert_eq!(report.trials, 3);
    assert_eq!(report.summary.len(), 1);
}

#[test]
fn missing_seed_comes_from_the_spec() {
    let a = parse_config("trials = 2").unwrap();
    let b = parse_config("trials = 2\noutput.dir = \"elsewhere\"\nworkers = 3").unwrap();
    let c = parse_config("trials = 2\nnetwork.rho = 0.25").unwrap();
    assert_eq!(a.base_seed(), b.base_seed());
    assert_ne!(a.base_seed(), c.base_seed());
    assert!(a.base_seed() < cli::MAX_SEED);
    assert!(cli::manifest(&a).contains(&format!("seed = {}", a.base_seed())));
}

#[test]
fn row_count_is_the_product_of_axes_and_trials() {
    let spec = parse_config("trials = 4\nsweep.network.rho = [0.1, 0.5, 1]\nsweep.network.beta = [-2, 0]").unwrap();
    assert_eq!(spec.n_points(), 6);
    let points = spec.points().unwrap();
    assert_eq!(points.len(), 6);
    // First axis varies slowest.
    assert_eq!(points[1].config.network.rho, 0.1);
    assert_eq!(points[1].config.network.beta, 0.0);
    assert_eq!(points[2].config.network.rho, 0.5);
}

#[test]
fn sweep_values_are_validated() {
    assert!(matches!(parse_config("sweep.network.rho = [0.5, 1.5]"), Err(ConfigError::BadValue { .. })));
    assert!(parse_config("trials = 0").is_err());
}

#[test]
fn figure_specs_parse() {
    for fig in FIGURES {
        for (name, text) in replicate_specs(fig).unwrap() {
            let spec = parse_config(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(spec.points().is_ok(), "{name}");
        }
    }
    let fig4 = parse_config(&replicate_specs("fig4").unwrap()[0].1).unwrap();
    assert_eq!(fig4.n_points(), 77);
    let fig6 = replicate_specs("fig6").unwrap();
    assert_eq!(fig6.len(), 3);
    assert!(replicate_specs("fig2").is_none());
}

#[test]
fn presets_text_parses_back_to_the_defaults() {
    let spec = parse_config(&cli::presets_text()).unwrap();
    assert_eq!(spec, cli::ExperimentSpec::default());
}

fn flashnet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flashnet"))
}

#[test]
fn binary_verbs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("spec.toml");
    fs::write(&cfg, "trials = 1\nsteps = 20000\nworkers = 1\nnetwork.n_funds = 2\nnetwork.n_assets = 2\n").unwrap();

    let out = flashnet().args(["validate", cfg.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok, 1 point(s) x 1 trial(s)"));

    let out = flashnet().arg("presets").output().unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("theta.lambda0 = 3"));

    let out = flashnet().args(["replicate", "fig6", "--out"]).arg(tmp.path().join("specs")).output().unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("specs/fig6-tau_c.toml").exists());

    let out_dir = tmp.path().join("run");
    let out = flashnet()
        .args(["run", cfg.to_str().unwrap(), "--out"])
        .arg(&out_dir)
        .env(WORKERS_ENV, "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("on 2 worker(s)"));
    assert!(out_dir.join("metrics.csv").exists());

    let out = flashnet().args(["run", cfg.to_str().unwrap()]).env(WORKERS_ENV, "zero").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(WORKERS_ENV));

    fs::write(&cfg, "network.rho = 2").unwrap();
    let out = flashnet().args(["validate", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}
