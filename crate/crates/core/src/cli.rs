//! Experiment specs, sweeps and result files.
//!
//! A spec is a flat text file of `key = value` lines with dotted keys, e.g.
//!
//! ```text
//! name = "leverage"
//! preset = "theta1"
//! trials = 20
//! network.n_funds = 20
//! sweep.theta.lambda0 = [1, 3, 10]
//! ```
//!
//! Values use TOML syntax, so every spec is also a valid TOML document.
//! Sweep axes are expanded combinatorially, the first axis varying slowest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{self, EnsembleError, TrialConfig, TrialResult};
use crate::metrics::{self, MetricsError, TrialMetrics, DEFAULT_GAMMA, DEFAULT_ZETA};
use crate::orderbook::{write_trades_csv, STEPS_PER_SECOND};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "FLASHNET_WORKERS";

/// Seeds must stay below this so every trial seed is a valid TOML integer.
pub const MAX_SEED: u64 = 1 << 62;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: `{key}` is already set on line {first}")]
    Duplicate { key: String, line: usize, first: usize },
    #[error("line {line}: `{key}`: {message}")]
    BadValue { key: String, line: usize, message: String },
    #[error("sweep point {point} ({values}): {message}")]
    InvalidPoint { point: usize, values: String, message: String },
    #[error("invalid spec: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamValue {
    Num(f64),
    Bool(bool),
}

impl std::fmt::Display for ParamValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamValue::Num(x) => write!(f, "{x}"),
            ParamValue::Bool(b) => write!(f, "{b}"),
        }
    }
}

trait Field: Sized {
    fn to_param(&self) -> ParamValue;
    fn from_param(v: ParamValue) -> Result<Self, String>;
}

impl Field for f64 {
    fn to_param(&self) -> ParamValue {
        ParamValue::Num(*self)
    }
    fn from_param(v: ParamValue) -> Result<Self, String> {
        match v {
            ParamValue::Num(x) => Ok(x),
            ParamValue::Bool(_) => Err("expected a number".into()),
        }
    }
}

impl Field for bool {
    fn to_param(&self) -> ParamValue {
        ParamValue::Bool(*self)
    }
    fn from_param(v: ParamValue) -> Result<Self, String> {
        match v {
            ParamValue::Bool(b) => Ok(b),
            ParamValue::Num(_) => Err("expected true or false".into()),
        }
    }
}

macro_rules! integer_field {
    ($($t:ty),*) => {$(
        impl Field for $t {
            fn to_param(&self) -> ParamValue {
                ParamValue::Num(*self as f64)
            }
            fn from_param(v: ParamValue) -> Result<Self, String> {
                let x = f64::from_param(v)?;
                if x.fract() != 0.0 || x < <$t>::MIN as f64 || x > <$t>::MAX as f64 {
                    return Err(format!("expected an integer, got {x}"));
                }
                Ok(x as $t)
            }
        }
    )*};
}
integer_field!(u32, u64, usize, i64);

/// A settable trial parameter.
pub struct Param {
    pub key: &'static str,
    pub help: &'static str,
    /// Inclusive bounds for numeric values.
    pub range: (f64, f64),
    get: fn(&TrialConfig) -> ParamValue,
    set: fn(&mut TrialConfig, ParamValue) -> Result<(), String>,
}

impl Param {
    pub fn get(&self, config: &TrialConfig) -> ParamValue {
        (self.get)(config)
    }

    /// Range-checks and stores `value`.
    pub fn set(&self, config: &mut TrialConfig, value: ParamValue) -> Result<(), String> {
        if let ParamValue::Num(x) = value {
            let (lo, hi) = self.range;
            if !(x >= lo && x <= hi) {
                return Err(format!("{x} is outside [{lo}, {hi}]"));
            }
        }
        (self.set)(config, value)
    }
}

const ANY: (f64, f64) = (f64::NEG_INFINITY, f64::INFINITY);
const NON_NEG: (f64, f64) = (0.0, f64::INFINITY);
const POSITIVE_INT: (f64, f64) = (1.0, f64::INFINITY);
const UNIT: (f64, f64) = (0.0, 1.0);

macro_rules! param {
    ($key:literal, $range:expr, $help:literal, $($path:ident).+) => {
        Param {
            key: $key,
            help: $help,
            range: $range,
            get: |c| c.$($path).+.to_param(),
            set: |c, v| {
                c.$($path).+ = Field::from_param(v)?;
                Ok(())
            },
        }
    };
}

pub static PARAMS: &[Param] = &[
    param!("steps", POSITIVE_INT, "simulated steps per trial", steps),
    param!("dt_ms", POSITIVE_INT, "step length in milliseconds", dt_ms),
    param!("shock.enabled", ANY, "inject the exogenous distressed seller", shock.enabled),
    param!("shock.fraction", UNIT, "shock step as a fraction of the run", shock_fraction),
    param!("shock.quantity", NON_NEG, "unscaled shares sold by the exogenous seller", shock.quantity),
    param!("shock.eta", NON_NEG, "exogenous seller volume fraction", shock.eta),
    param!("shock.delta_s", NON_NEG, "exogenous seller mean interval in seconds", shock.delta_s),
    param!("liquidation.eta", NON_NEG, "fund seller volume fraction", liquidation_eta),
    param!("liquidation.delta_s", NON_NEG, "fund seller mean interval in seconds", liquidation_delta_s),
    param!("theta.lambda0", NON_NEG, "initial fund leverage", network.leverage),
    param!("theta.tau_c", (1.0, f64::INFINITY), "margin call tolerance", tau_c),
    Param {
        key: "theta.c0",
        help: "initial fund capital in millions",
        range: NON_NEG,
        get: |c| ParamValue::Num(c.network.capital / 1.0e6),
        set: |c, v| {
            c.network.capital = f64::from_param(v)? * 1.0e6;
            Ok(())
        },
    },
    Param {
        key: "margin.from_start",
        help: "monitor margins from step 0 instead of from the shock",
        range: ANY,
        get: |c| ParamValue::Bool(c.monitor_from == Some(0)),
        set: |c, v| {
            c.monitor_from = bool::from_param(v)?.then_some(0);
            Ok(())
        },
    },
    param!("network.n_funds", POSITIVE_INT, "number of funds", network.n_funds),
    param!("network.n_assets", POSITIVE_INT, "number of assets", network.n_assets),
    param!("network.rho", UNIT, "diversification", network.rho),
    param!("network.beta", ANY, "crowding exponent", network.beta),
    param!("network.alpha", UNIT, "allocation uniformity", network.alpha),
    param!("network.sigma", NON_NEG, "per-fund noise on rho", network.sigma),
    param!("agents.scale_divisor", POSITIVE_INT, "population and inventory divisor", scale_divisor),
    param!("agents.initial_price", POSITIVE_INT, "opening price in ticks", initial_price),
    param!("agents.small_spread_ticks", NON_NEG, "small trader price spread", behaviour.small_spread_ticks),
    param!("agents.fundamental_size", NON_NEG, "fundamental order size", behaviour.fundamental_size),
    param!("agents.fundamental_offset_ticks", NON_NEG, "fundamental quote offset", behaviour.fundamental_offset_ticks),
    param!("agents.fundamental_toxic_ticks", NON_NEG, "fundamental withdrawal trend", behaviour.fundamental_toxic_ticks),
    param!("agents.valuation_std", NON_NEG, "std of fundamental valuations in ticks", behaviour.valuation_std),
    param!("agents.opportunistic_size", NON_NEG, "opportunistic order size", behaviour.opportunistic_size),
    param!("agents.opportunistic_step_std", NON_NEG, "opportunistic spread walk step", behaviour.opportunistic_step_std),
    param!("agents.opportunistic_reversion", UNIT, "opportunistic spread reversion", behaviour.opportunistic_reversion),
    param!("agents.mm_size", NON_NEG, "market maker quote size", behaviour.mm_size),
    param!("agents.mm_toxic_ticks", NON_NEG, "market maker withdrawal trend", behaviour.mm_toxic_ticks),
    param!("agents.mm_half_spread", NON_NEG, "market maker half spread", behaviour.mm_half_spread),
    param!("agents.mm_widen_factor", NON_NEG, "market maker spread widening", behaviour.mm_widen_factor),
    param!("agents.hft_size", NON_NEG, "HFT order size", behaviour.hft_size),
];

pub fn param(key: &str) -> Option<&'static Param> {
    PARAMS.iter().find(|p| p.key == key)
}

/// Named `(lambda0, tau_c, c0 in millions)` points.
pub const PRESETS: &[(&str, f64, f64, f64, &str)] = &[
    ("theta1", 3.0, 1.01, 1.0, "high leverage"),
    ("theta2", 2.0, 1.01, 0.5, "medium leverage"),
    ("theta3", 1.5, 1.01, 0.25, "low leverage"),
];

pub fn apply_preset(config: &mut TrialConfig, name: &str) -> Option<()> {
    let &(_, lambda0, tau_c, c0, _) = PRESETS.iter().find(|p| p.0 == name)?;
    config.network.leverage = lambda0;
    config.tau_c = tau_c;
    config.network.capital = c0 * 1.0e6;
    Some(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputOptions {
    pub dir: PathBuf,
    /// Per-trial price, volume and depth files.
    pub price_paths: bool,
    /// Prices at every step rather than once per second.
    pub full_resolution: bool,
    pub trades: bool,
    pub edges: bool,
    /// Fund snapshot interval in steps; 0 disables snapshots.
    pub snapshot_every: u64,
    pub stylised: bool,
}

impl Default for OutputOptions {
    fn default() -> Self {
        OutputOptions {
            dir: PathBuf::from("out"),
            price_paths: false,
            full_resolution: false,
            trades: false,
            edges: false,
            snapshot_every: 0,
            stylised: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub base: TrialConfig,
    pub axes: Vec<(&'static Param, Vec<ParamValue>)>,
    pub trials: usize,
    /// `None` derives the seed from the spec itself.
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub gamma: f64,
    pub zeta: f64,
    pub output: OutputOptions,
}

impl PartialEq for Param {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl std::fmt::Debug for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key)
    }
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "experiment".into(),
            base: TrialConfig::default(),
            axes: Vec::new(),
            trials: 1,
            seed: None,
            workers: None,
            gamma: DEFAULT_GAMMA,
            zeta: DEFAULT_ZETA,
            output: OutputOptions::default(),
        }
    }
}

/// One expanded sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub config_id: usize,
    pub values: Vec<ParamValue>,
    pub config: TrialConfig,
}

impl ExperimentSpec {
    pub fn n_points(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    /// Sweep points in row-major order over the axes.
    pub fn points(&self) -> Result<Vec<SweepPoint>, ConfigError> {
        let n = self.n_points();
        let mut out = Vec::with_capacity(n);
        for id in 0..n {
            let mut rem = id;
            let mut values = vec![ParamValue::Num(0.0); self.axes.len()];
            for (k, (_, vals)) in self.axes.iter().enumerate().rev() {
                values[k] = vals[rem % vals.len()];
                rem /= vals.len();
            }
            let mut config = self.base;
            let describe = || {
                self.axes.iter().zip(&values).map(|((p, _), v)| format!("{}={v}", p.key)).collect::<Vec<_>>().join(", ")
            };
            for ((p, _), v) in self.axes.iter().zip(&values) {
                p.set(&mut config, *v).map_err(|message| ConfigError::InvalidPoint {
                    point: id,
                    values: describe(),
                    message,
                })?;
            }
            config.validate().map_err(|e| ConfigError::InvalidPoint {
                point: id,
                values: describe(),
                message: e.to_string(),
            })?;
            out.push(SweepPoint { config_id: id, values, config });
        }
        Ok(out)
    }

    pub fn base_seed(&self) -> u64 {
        self.seed.unwrap_or_else(|| {
            let digest = Sha256::digest(self.render(false).as_bytes());
            let bytes: [u8; 8] = digest[..8].try_into().expect("digest is 32 bytes");
            u64::from_le_bytes(bytes) % MAX_SEED
        })
    }

    /// Seeds of trials `0..trials`, shared by every sweep point.
    pub fn trial_seeds(&self) -> Vec<u64> {
        let base = self.base_seed();
        (0..self.trials as u64).map(|m| base + m).collect()
    }

    /// Worker count: environment, then spec, then available cores.
    pub fn resolve_workers(&self) -> Result<usize, ConfigError> {
        if let Ok(v) = std::env::var(WORKERS_ENV) {
            return match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(ConfigError::Invalid(format!("{WORKERS_ENV}={v} is not a positive integer"))),
            };
        }
        Ok(self
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)))
    }

    /// Canonical text form. With `runtime` the seed, worker count and output
    /// directory are included; without, the text identifies the experiment
    /// independent of where and how fast it runs.
    pub fn render(&self, runtime: bool) -> String {
        let mut s = String::new();
        let o = &self.output;
        let _ = writeln!(s, "name = {}", toml_string(&self.name));
        let _ = writeln!(s, "trials = {}", self.trials);
        if runtime {
            let _ = writeln!(s, "seed = {}", self.base_seed());
            if let Some(w) = self.workers {
                let _ = writeln!(s, "workers = {w}");
            }
            let _ = writeln!(s, "output.dir = {}", toml_string(&o.dir.to_string_lossy()));
        }
        let _ = writeln!(s, "metrics.gamma = {}", self.gamma);
        let _ = writeln!(s, "metrics.zeta = {}", self.zeta);
        let _ = writeln!(s, "output.price_paths = {}", o.price_paths);
        let _ = writeln!(s, "output.full_resolution = {}", o.full_resolution);
        let _ = writeln!(s, "output.trades = {}", o.trades);
        let _ = writeln!(s, "output.edges = {}", o.edges);
        let _ = writeln!(s, "output.snapshot_every = {}", o.snapshot_every);
        let _ = writeln!(s, "output.stylised = {}", o.stylised);
        for p in PARAMS {
            let _ = writeln!(s, "{} = {}", p.key, p.get(&self.base));
        }
        for (p, values) in &self.axes {
            let list: Vec<String> = values.iter().map(ToString::to_string).collect();
            let _ = writeln!(s, "sweep.{} = [{}]", p.key, list.join(", "));
        }
        s
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_owned()).to_string()
}

fn parse_value(text: &str) -> Result<toml::Value, String> {
    let mut table: toml::Table = toml::from_str(&format!("v = {text}")).map_err(|e| e.message().to_owned())?;
    table.remove("v").ok_or_else(|| "missing value".to_owned())
}

fn to_param(v: &toml::Value) -> Result<ParamValue, String> {
    match v {
        toml::Value::Integer(i) => Ok(ParamValue::Num(*i as f64)),
        toml::Value::Float(x) => Ok(ParamValue::Num(*x)),
        toml::Value::Boolean(b) => Ok(ParamValue::Bool(*b)),
        other => Err(format!("expected a number or boolean, got {}", other.type_str())),
    }
}

fn to_uint(v: &toml::Value) -> Result<u64, String> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        other => Err(format!("expected a non-negative integer, got {other}")),
    }
}

fn to_bool(v: &toml::Value) -> Result<bool, String> {
    v.as_bool().ok_or_else(|| format!("expected true or false, got {v}"))
}

fn to_str(v: &toml::Value) -> Result<String, String> {
    v.as_str().map(str::to_owned).ok_or_else(|| format!("expected a string, got {v}"))
}

/// Parses and validates a spec. Every sweep point must form a valid trial.
pub fn parse_config(text: &str) -> Result<ExperimentSpec, ConfigError> {
    let mut entries: BTreeMap<String, (usize, toml::Value)> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw_line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if trimmed.starts_with('[') {
            return Err(ConfigError::Syntax { line, message: "table headers are not supported; use dotted keys".into() });
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(ConfigError::Syntax { line, message: "expected `key = value`".into() });
        };
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-')) {
            return Err(ConfigError::Syntax { line, message: format!("invalid key `{key}`") });
        }
        let value = parse_value(value.trim()).map_err(|message| ConfigError::BadValue {
            key: key.to_owned(),
            line,
            message,
        })?;
        if let Some((first, _)) = entries.get(key) {
            return Err(ConfigError::Duplicate { key: key.to_owned(), line, first: *first });
        }
        entries.insert(key.to_owned(), (line, value));
        order.push(key.to_owned());
    }

    let mut spec = ExperimentSpec::default();
    if let Some((line, v)) = entries.get("preset") {
        let name = to_str(v).map_err(|message| ConfigError::BadValue { key: "preset".into(), line: *line, message })?;
        apply_preset(&mut spec.base, &name).ok_or_else(|| ConfigError::BadValue {
            key: "preset".into(),
            line: *line,
            message: format!("unknown preset `{name}`"),
        })?;
    }

    for key in &order {
        let (line, value) = &entries[key];
        let bad = |message: String| ConfigError::BadValue { key: key.clone(), line: *line, message };
        match key.as_str() {
            "preset" => {}
            "name" => spec.name = to_str(value).map_err(bad)?,
            "trials" => {
                spec.trials = match to_uint(value).map_err(bad)? {
                    0 => return Err(bad("at least one trial is required".into())),
                    n => n as usize,
                }
            }
            "seed" => {
                let seed = to_uint(value).map_err(bad)?;
                if seed >= MAX_SEED {
                    return Err(bad(format!("seed must be below 2^62, got {seed}")));
                }
                spec.seed = Some(seed);
            }
            "workers" => {
                spec.workers = match to_uint(value).map_err(bad)? {
                    0 => return Err(bad("worker count must be positive".into())),
                    n => Some(n as usize),
                }
            }
            "metrics.gamma" => {
                let gamma = value.as_float().or_else(|| value.as_integer().map(|i| i as f64));
                match gamma {
                    Some(g) if g > 0.0 && g <= 1.0 => spec.gamma = g,
                    _ => return Err(bad(format!("expected a number in (0, 1], got {value}"))),
                }
            }
            "metrics.zeta" => {
                let zeta = value.as_float().or_else(|| value.as_integer().map(|i| i as f64));
                match zeta {
                    Some(z) if (0.0..=1.0).contains(&z) => spec.zeta = z,
                    _ => return Err(bad(format!("expected a number in [0, 1], got {value}"))),
                }
            }
            "output.dir" => spec.output.dir = PathBuf::from(to_str(value).map_err(bad)?),
            "output.price_paths" => spec.output.price_paths = to_bool(value).map_err(bad)?,
            "output.full_resolution" => spec.output.full_resolution = to_bool(value).map_err(bad)?,
            "output.trades" => spec.output.trades = to_bool(value).map_err(bad)?,
            "output.edges" => spec.output.edges = to_bool(value).map_err(bad)?,
            "output.snapshot_every" => spec.output.snapshot_every = to_uint(value).map_err(bad)?,
            "output.stylised" => spec.output.stylised = to_bool(value).map_err(bad)?,
            // Written by manifests for the record; not needed to reproduce.
            "manifest.version" => {
                to_str(value).map_err(bad)?;
            }
            "manifest.trial_seeds" => {
                value.as_array().ok_or_else(|| bad("expected an array".into()))?;
            }
            k if k.starts_with("sweep.") => {
                let pk = &k["sweep.".len()..];
                let Some(p) = param(pk) else {
                    return Err(ConfigError::UnknownKey { key: key.clone(), line: *line });
                };
                let list = value.as_array().ok_or_else(|| bad("expected an array of values".into()))?;
                if list.is_empty() {
                    return Err(bad("a sweep axis needs at least one value".into()));
                }
                let mut values = Vec::with_capacity(list.len());
                for v in list {
                    let pv = to_param(v).map_err(bad)?;
                    // Type and range check against a scratch config.
                    p.set(&mut TrialConfig::default(), pv).map_err(bad)?;
                    values.push(pv);
                }
                spec.axes.push((p, values));
            }
            k => {
                let Some(p) = param(k) else {
                    return Err(ConfigError::UnknownKey { key: key.clone(), line: *line });
                };
                let pv = to_param(value).map_err(bad)?;
                p.set(&mut spec.base, pv).map_err(bad)?;
            }
        }
    }
    spec.base.snapshot_every = (spec.output.snapshot_every > 0).then_some(spec.output.snapshot_every);
    spec.base.record_trades = spec.output.trades;
    spec.points()?;
    Ok(spec)
}

pub fn load_config(path: &Path) -> Result<ExperimentSpec, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.to_owned(), source })?;
    Ok(parse_config(&text)?)
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("config {config_id}: {source}")]
    Metrics { config_id: usize, source: MetricsError },
}

/// What a finished experiment wrote.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub dir: PathBuf,
    pub trials: usize,
    pub metrics: Vec<TrialMetrics>,
    pub summary: Vec<metrics::EnsembleStats>,
}

struct TrialOutput {
    metrics: TrialMetrics,
    files: Vec<(String, Vec<u8>)>,
}

fn trial_files(spec: &ExperimentSpec, config_id: usize, r: &TrialResult) -> io::Result<Vec<(String, Vec<u8>)>> {
    let o = &spec.output;
    let dir = format!("trials/c{config_id:04}_s{}", r.seed);
    let mut files = Vec::new();
    if o.price_paths {
        let every = if o.full_resolution { 1 } else { STEPS_PER_SECOND as usize };
        let mut buf = Vec::new();
        writeln!(buf, "step,asset,price")?;
        for (asset, path) in r.prices.iter().enumerate() {
            for (t, p) in path.iter().enumerate().step_by(every) {
                writeln!(buf, "{t},{asset},{p}")?;
            }
        }
        files.push((format!("{dir}/prices.csv"), buf));
        let mut buf = Vec::new();
        writeln!(buf, "second,asset,volume,bid_depth,ask_depth")?;
        for asset in 0..r.n_assets() {
            for (s, v) in r.volume_per_second[asset].iter().enumerate() {
                writeln!(buf, "{s},{asset},{v},{},{}", r.bid_depth[asset][s], r.ask_depth[asset][s])?;
            }
        }
        files.push((format!("{dir}/market.csv"), buf));
    }
    if let Some(trades) = &r.trades {
        let mut buf = Vec::new();
        for (asset, log) in trades.iter().enumerate() {
            write_trades_csv(&mut buf, asset, log, asset == 0)?;
        }
        files.push((format!("{dir}/trades.csv"), buf));
    }
    if o.edges {
        let mut buf = Vec::new();
        r.network.write_edges_csv(&mut buf)?;
        files.push((format!("{dir}/edges.csv"), buf));
    }
    if o.snapshot_every > 0 {
        let mut buf = Vec::new();
        writeln!(buf, "step,fund,capital,leverage,state")?;
        for s in &r.snapshots {
            s.write_row(&mut buf)?;
        }
        files.push((format!("{dir}/snapshots.csv"), buf));
    }
    if o.stylised {
        let asset = r.shocked_asset.unwrap_or(0);
        if let Ok(facts) = metrics::stylised_facts(&r.prices[asset]) {
            let mut buf = Vec::new();
            writeln!(buf, "series,lag,value")?;
            for (h, k) in &facts.kurtosis {
                writeln!(buf, "kurtosis,{h},{k}")?;
            }
            for (lag, v) in facts.return_acf.iter().enumerate() {
                writeln!(buf, "return_acf,{lag},{v}")?;
            }
            for (lag, v) in facts.abs_return_acf.iter().enumerate() {
                writeln!(buf, "abs_return_acf,{lag},{v}")?;
            }
            files.push((format!("{dir}/stylised.csv"), buf));
        }
    }
    Ok(files)
}

fn write_file(dir: &Path, rel: &str, bytes: &[u8]) -> Result<(), ExperimentError> {
    let path = dir.join(rel);
    let io_err = |source| ExperimentError::Io { path: path.clone(), source };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    fs::write(&path, bytes).map_err(io_err)
}

/// Manifest text: the resolved spec plus code version and trial seeds. It
/// parses as a spec and reproduces the run.
pub fn manifest(spec: &ExperimentSpec) -> String {
    let seeds: Vec<String> = spec.trial_seeds().iter().map(ToString::to_string).collect();
    format!(
        "# Resolved experiment; `flashnet run` on this file reproduces it.\nmanifest.version = {}\nmanifest.trial_seeds = [{}]\n{}",
        toml_string(concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"))),
        seeds.join(", "),
        spec.render(true)
    )
}

/// Expands the sweep, runs every trial and writes the result files.
pub fn run_experiment(spec: &ExperimentSpec, workers: usize) -> Result<ExperimentReport, ExperimentError> {
    let points = spec.points()?;
    let seeds = spec.trial_seeds();
    let mut configs = Vec::with_capacity(points.len() * seeds.len());
    for p in &points {
        for &seed in &seeds {
            configs.push(TrialConfig { seed, ..p.config });
        }
    }
    let m = seeds.len();
    let outputs = engine::run_ensemble_with(&configs, workers, |i, result| {
        let config_id = i / m;
        TrialOutput {
            metrics: TrialMetrics::from_result(config_id, &result, spec.gamma, spec.zeta),
            files: trial_files(spec, config_id, &result).expect("writing to memory"),
        }
    })?;

    let dir = &spec.output.dir;
    let mut rows = Vec::with_capacity(outputs.len());
    for out in outputs {
        for (rel, bytes) in &out.files {
            write_file(dir, rel, bytes)?;
        }
        rows.push(out.metrics);
    }
    let mut summary = Vec::with_capacity(points.len());
    for (id, chunk) in rows.chunks(m).enumerate() {
        let refs: Vec<&TrialMetrics> = chunk.iter().collect();
        summary.push(
            metrics::ensemble_stats(id, &refs, spec.gamma).map_err(|source| ExperimentError::Metrics { config_id: id, source })?,
        );
    }

    let mut buf = Vec::new();
    metrics::write_trial_metrics(&mut buf, &rows).expect("writing to memory");
    write_file(dir, "metrics.csv", &buf)?;
    let mut buf = Vec::new();
    metrics::write_trial_extras(&mut buf, &rows).expect("writing to memory");
    write_file(dir, "gaps.csv", &buf)?;
    let mut buf = Vec::new();
    metrics::write_summary(&mut buf, &summary).expect("writing to memory");
    write_file(dir, "summary.csv", &buf)?;
    write_file(dir, "points.csv", points_csv(spec, &points).as_bytes())?;
    write_file(dir, "manifest.toml", manifest(spec).as_bytes())?;

    Ok(ExperimentReport { dir: dir.clone(), trials: rows.len(), metrics: rows, summary })
}

fn points_csv(spec: &ExperimentSpec, points: &[SweepPoint]) -> String {
    let mut s = String::from("config_id");
    for (p, _) in &spec.axes {
        s.push(',');
        s.push_str(p.key);
    }
    s.push('\n');
    for p in points {
        let _ = write!(s, "{}", p.config_id);
        for v in &p.values {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Parameter reference and presets, as spec text.
pub fn presets_text() -> String {
    let mut s = String::from("# Defaults; every key below may be set in a spec or swept with `sweep.<key> = [...]`.\n");
    let defaults = ExperimentSpec::default();
    for p in PARAMS {
        let _ = writeln!(s, "{:<36} # {}", format!("{} = {}", p.key, p.get(&defaults.base)), p.help);
    }
    s.push_str("\n# Sampled domains\n");
    for (key, domain) in [
        ("network.n_funds", "[1, 195]"),
        ("network.n_assets", "[1, 195]"),
        ("network.rho", "[0, 1]"),
        ("network.beta", "[-7.5, 7.5]"),
        ("network.alpha", "[0, 1]"),
        ("theta.lambda0", "[1, 20]"),
        ("theta.c0", "[0.25, 5]"),
        ("theta.tau_c", "[1.001, 1.2]"),
        ("shock.eta", "[0.05, 0.18]"),
        ("shock.delta_s", "[1, 60]"),
    ] {
        let _ = writeln!(s, "# {key:<20} {domain}");
    }
    s.push_str("\n# Presets (`preset = \"theta1\"`)\n");
    for (name, l, t, c, regime) in PRESETS {
        let _ = writeln!(s, "# {name}: theta.lambda0 = {l}, theta.tau_c = {t}, theta.c0 = {c}  ({regime})");
    }
    s
}

pub const FIGURES: &[&str] = &["fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9"];

const NETWORK_20: &str = "network.n_funds = 20\nnetwork.n_assets = 20\n";

/// Prebuilt desk-scale specs for a figure, as `(name, text)` pairs.
pub fn replicate_specs(figure: &str) -> Option<Vec<(String, String)>> {
    let spec = |name: &str, body: String| (name.to_owned(), format!("name = \"{name}\"\noutput.dir = \"{name}\"\n{body}"));
    let specs = match figure {
        "fig3" => vec![spec(
            "fig3",
            "trials = 20\noutput.price_paths = true\noutput.stylised = true\n".into(),
        )],
        "fig4" => vec![spec(
            "fig4",
            "trials = 20\n\
             sweep.shock.eta = [0.05, 0.063, 0.076, 0.089, 0.102, 0.115, 0.128, 0.141, 0.154, 0.167, 0.18]\n\
             sweep.shock.delta_s = [1, 5, 10, 20, 30, 45, 60]\n"
                .into(),
        )],
        "fig5" => vec![spec(
            "fig5",
            format!(
                "trials = 10\n{NETWORK_20}network.rho = 0.5\nnetwork.beta = 0\n\
                 sweep.theta.tau_c = [1.001, 1.01, 1.1, 1.2]\n\
                 sweep.theta.lambda0 = [1, 2, 3, 5, 7.5, 10, 15, 20]\n\
                 sweep.theta.c0 = [0.25, 0.5, 1, 2.5, 5]\n"
            ),
        )],
        "fig6" => [
            ("lambda0", "[1, 2, 3, 5, 10, 15, 20]"),
            ("tau_c", "[1.002, 1.005, 1.01, 1.02, 1.05, 1.1, 1.2]"),
            ("c0", "[0.25, 0.5, 1, 2, 5]"),
        ]
        .iter()
        .map(|(axis, values)| {
            spec(
                &format!("fig6-{axis}"),
                format!(
                    "preset = \"theta1\"\ntrials = 20\n{NETWORK_20}network.rho = 0.5\nnetwork.beta = 0\nsweep.theta.{axis} = {values}\n"
                ),
            )
        })
        .collect(),
        "fig7" | "fig8" => PRESETS
            .iter()
            .map(|(preset, ..)| {
                spec(
                    &format!("{figure}-{preset}"),
                    format!(
                        "preset = \"{preset}\"\ntrials = 20\n{NETWORK_20}\
                         sweep.network.rho = [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 1]\n\
                         sweep.network.beta = [-7.5, -2, 0, 2, 7.5]\n"
                    ),
                )
            })
            .collect(),
        "fig9" => vec![spec(
            "fig9",
            format!(
                "preset = \"theta1\"\ntrials = 30\n{NETWORK_20}network.rho = 1\n\
                 sweep.network.alpha = [0, 0.25, 0.5, 0.75, 1]\n\
                 sweep.network.beta = [-7.5, 0, 7.5]\n"
            ),
        )],
        _ => return None,
    };
    Some(specs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_sets_theta() {
        let spec = parse_config("preset = \"theta1\"").unwrap();
        assert_eq!(spec.base.network.leverage, 3.0);
        assert_eq!(spec.base.tau_c, 1.01);
        assert_eq!(spec.base.network.capital, 1.0e6);
    }

    #[test]
    fn explicit_keys_override_preset_wherever_it_appears() {
        let spec = parse_config("theta.lambda0 = 7\npreset = \"theta2\"").unwrap();
        assert_eq!(spec.base.network.leverage, 7.0);
        assert_eq!(spec.base.network.capital, 0.5e6);
    }

    #[test]
    fn rho_outside_unit_interval_is_rejected_with_line() {
        let err = parse_config("trials = 2\nnetwork.rho = 1.5").unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("network.rho"));
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let err = parse_config("\n# comment\nnetwork.rhoo = 0.5").unwrap_err();
        assert_eq!(err.to_string(), "line 3: unknown key `network.rhoo`");
        let err = parse_config("sweep.trials = [1, 2]").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 1, .. }));
    }

    #[test]
    fn duplicates_and_headers_are_rejected() {
        assert!(matches!(
            parse_config("trials = 1\ntrials = 2").unwrap_err(),
            ConfigError::Duplicate { line: 2, first: 1, .. }
        ));
        assert!(matches!(parse_config("[network]\nrho = 1").unwrap_err(), ConfigError::Syntax { line: 1, .. }));
    }

    #[test]
    fn integer_fields_reject_fractions() {
        let err = parse_config("network.n_funds = 2.5").unwrap_err();
        assert!(err.to_string().contains("integer"), "{err}");
    }

    #[test]
    fn missing_seed_is_derived_from_the_spec() {
        let a = parse_config("trials = 3\nnetwork.beta = 2").unwrap();
        let b = parse_config("network.beta = 2.0\n\ntrials = 3 # same spec\noutput.dir = \"elsewhere\"").unwrap();
        let c = parse_config("trials = 3\nnetwork.beta = 2.5").unwrap();
        assert_eq!(a.base_seed(), b.base_seed());
        assert_ne!(a.base_seed(), c.base_seed());
        assert!(a.base_seed() < MAX_SEED);
        assert_eq!(parse_config("seed = 7").unwrap().base_seed(), 7);
    }

    #[test]
    fn sweep_expands_row_major() {
        let spec = parse_config("sweep.network.beta = [-1, 1]\nsweep.theta.lambda0 = [1, 2, 3]").unwrap();
        let points = spec.points().unwrap();
        assert_eq!(points.len(), 6);
        assert_eq!(points[1].config.network.beta, -1.0);
        assert_eq!(points[1].config.network.leverage, 2.0);
        assert_eq!(points[3].config.network.beta, 1.0);
        assert_eq!(points[3].config.network.leverage, 1.0);
    }

    #[test]
    fn empty_sweep_is_one_point() {
        let spec = parse_config("trials = 4").unwrap();
        assert_eq!(spec.points().unwrap().len(), 1);
        assert_eq!(spec.trial_seeds().len(), 4);
    }

    #[test]
    fn invalid_sweep_point_is_reported() {
        let err = parse_config("steps = 10000\nsweep.shock.fraction = [0.5, 0.01]").unwrap_err();
        assert!(matches!(err, ConfigError::InvalidPoint { point: 1, .. }), "{err}");
    }

    #[test]
    fn render_round_trips() {
        let spec = parse_config(
            "name = \"x\"\npreset = \"theta3\"\ntrials = 2\nseed = 11\nsweep.network.rho = [0.1, 0.9]\nsweep.shock.enabled = [true, false]",
        )
        .unwrap();
        let again = parse_config(&spec.render(true)).unwrap();
        assert_eq!(again, spec);
        let from_manifest = parse_config(&manifest(&spec)).unwrap();
        assert_eq!(from_manifest, spec);
    }

    #[test]
    fn every_replication_spec_parses() {
        for fig in FIGURES {
            for (name, text) in replicate_specs(fig).unwrap() {
                let spec = parse_config(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
                assert_eq!(spec.name, name);
            }
        }
        assert_eq!(parse_config(&replicate_specs("fig4").unwrap()[0].1).unwrap().n_points(), 77);
        assert!(replicate_specs("fig2").is_none());
    }

    #[test]
    fn presets_text_parses_as_a_spec() {
        let spec = parse_config(&presets_text()).unwrap();
        assert_eq!(spec, ExperimentSpec::default());
    }
}
