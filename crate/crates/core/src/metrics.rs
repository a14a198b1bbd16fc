//! Crash, contagion and return statistics computed from trial output.

use std::io::{self, Write};

use thiserror::Error;

use crate::orderbook::{Step, Tick};

/// Default fraction of funds that must default for a cascade.
pub const DEFAULT_GAMMA: f64 = 0.05;
/// Fraction of crashed assets used for the propagation speed.
pub const DEFAULT_ZETA: f64 = 0.8;
pub const RETURN_HORIZONS: [usize; 5] = [1, 10, 100, 1_000, 10_000];
pub const MAX_ACF_LAG: usize = 1_000;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no trials to aggregate")]
    NoTrials,
    #[error("gamma = {0} must lie in (0, 1]")]
    Gamma(f64),
    #[error("need at least {needed} price samples, got {got}")]
    TooShort { needed: usize, got: usize },
}

/// Steps in the five-minute crash window.
pub fn crash_window_steps(dt_ms: u32) -> usize {
    (300_000 / dt_ms) as usize
}

/// Whether the price at `t` is more than 5% below the price `window` steps
/// earlier (or at step 0 if that lies before the start).
pub fn flash_crash_indicator(prices: &[Tick], t: usize, window: usize) -> bool {
    let reference = prices[t.saturating_sub(window)];
    // p_t / p_ref < 0.95, in integers.
    20 * i128::from(prices[t]) < 19 * i128::from(reference)
}

/// Steps at which the crash indicator is on, stored as half-open runs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CrashSet {
    runs: Vec<(Step, Step)>,
}

impl CrashSet {
    pub fn from_steps<I: IntoIterator<Item = Step>>(steps: I) -> Self {
        let mut runs: Vec<(Step, Step)> = Vec::new();
        for t in steps {
            match runs.last_mut() {
                Some(last) if last.1 == t => last.1 = t + 1,
                Some(last) => {
                    assert!(t > last.1, "crash steps must be ascending");
                    runs.push((t, t + 1));
                }
                None => runs.push((t, t + 1)),
            }
        }
        CrashSet { runs }
    }

    pub fn first(&self) -> Option<Step> {
        self.runs.first().map(|r| r.0)
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.runs.iter().map(|r| (r.1 - r.0) as usize).sum()
    }

    pub fn runs(&self) -> &[(Step, Step)] {
        &self.runs
    }

    pub fn iter(&self) -> impl Iterator<Item = Step> + '_ {
        self.runs.iter().flat_map(|&(a, b)| a..b)
    }

    pub fn contains(&self, t: Step) -> bool {
        self.runs.iter().any(|&(a, b)| a <= t && t < b)
    }

    /// First crash step at or after `t`.
    pub fn first_at_or_after(&self, t: Step) -> Option<Step> {
        self.runs.iter().find(|r| r.1 > t).map(|r| r.0.max(t))
    }
}

/// All steps `t >= 1` at which the crash indicator fires.
pub fn crash_set(prices: &[Tick], window: usize) -> CrashSet {
    CrashSet::from_steps((1..prices.len()).filter(|&t| flash_crash_indicator(prices, t, window)).map(|t| t as Step))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Speed {
    /// Fewer than two assets crashed.
    Undefined,
    /// The p-th crash coincided with the first.
    Infinite,
    /// Crashes per minute.
    Finite(f64),
}

impl Speed {
    pub fn finite(self) -> Option<f64> {
        match self {
            Speed::Finite(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_csv(self) -> String {
        match self {
            Speed::Undefined => String::new(),
            Speed::Infinite => "inf".into(),
            Speed::Finite(s) => s.to_string(),
        }
    }
}

/// Propagation speed over the per-asset first-crash times; assets that never
/// crashed are `None` and ignored.
pub fn propagation_speed(first_crashes: &[Option<Step>], zeta: f64, dt_ms: u32) -> Speed {
    let mut f: Vec<Step> = first_crashes.iter().flatten().copied().collect();
    if f.len() <= 1 {
        return Speed::Undefined;
    }
    f.sort_unstable();
    let p = ((zeta * f.len() as f64).floor() as usize).max(1);
    let span = f[p - 1] - f[0];
    if span == 0 {
        return Speed::Infinite;
    }
    let c = 60_000.0 / f64::from(dt_ms);
    Speed::Finite(c * zeta * (f.len() - 1) as f64 / span as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContagionStats {
    pub probability: f64,
    /// Mean default fraction over cascade trials.
    pub extent: Option<f64>,
    pub cascades: usize,
    pub trials: usize,
}

pub fn is_cascade(f_default: f64, gamma: f64) -> bool {
    f_default > gamma
}

pub fn contagion_stats(fractions: &[f64], gamma: f64) -> Result<ContagionStats, MetricsError> {
    if fractions.is_empty() {
        return Err(MetricsError::NoTrials);
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(MetricsError::Gamma(gamma));
    }
    let cascades: Vec<f64> = fractions.iter().copied().filter(|&f| is_cascade(f, gamma)).collect();
    let extent = (!cascades.is_empty()).then(|| cascades.iter().sum::<f64>() / cascades.len() as f64);
    Ok(ContagionStats {
        probability: cascades.len() as f64 / fractions.len() as f64,
        extent,
        cascades: cascades.len(),
        trials: fractions.len(),
    })
}

/// Log returns over `horizon` steps, overlapping.
pub fn log_returns(prices: &[Tick], horizon: usize) -> Vec<f64> {
    if prices.len() <= horizon {
        return Vec::new();
    }
    prices.windows(horizon + 1).map(|w| (w[horizon] as f64 / w[0] as f64).ln()).collect()
}

/// Fourth standardised moment; a normal sample gives about 3. `None` for
/// fewer than four samples or zero variance.
pub fn kurtosis(x: &[f64]) -> Option<f64> {
    if x.len() < 4 {
        return None;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (m2, m4) = x.iter().fold((0.0, 0.0), |(m2, m4), v| {
        let d = (v - mean) * (v - mean);
        (m2 + d, m4 + d * d)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    (m2 > 0.0).then(|| m4 / (m2 * m2))
}

/// Sample autocorrelation at lags `0..=max_lag`. Zero variance yields NaN past lag 0.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n.max(1) as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let var: f64 = d.iter().map(|v| v * v).sum();
    (0..=max_lag.min(n.saturating_sub(1)))
        .map(|lag| {
            if lag == 0 {
                return 1.0;
            }
            d[..n - lag].iter().zip(&d[lag..]).map(|(a, b)| a * b).sum::<f64>() / var
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StylisedFacts {
    /// `(horizon, kurtosis)`; horizons with too few or constant returns are skipped.
    pub kurtosis: Vec<(usize, f64)>,
    pub return_acf: Vec<f64>,
    pub abs_return_acf: Vec<f64>,
    /// Sorted one-step returns, for plotting the empirical distribution.
    pub sorted_returns: Vec<f64>,
}

impl StylisedFacts {
    pub fn kurtosis_at(&self, horizon: usize) -> Option<f64> {
        self.kurtosis.iter().find(|k| k.0 == horizon).map(|k| k.1)
    }
}

pub const MIN_STYLISED_SAMPLES: usize = 10_000;

pub fn stylised_facts(prices: &[Tick]) -> Result<StylisedFacts, MetricsError> {
    if prices.len() < MIN_STYLISED_SAMPLES {
        return Err(MetricsError::TooShort { needed: MIN_STYLISED_SAMPLES, got: prices.len() });
    }
    let kurt = RETURN_HORIZONS
        .iter()
        .filter_map(|&h| kurtosis(&log_returns(prices, h)).map(|k| (h, k)))
        .collect();
    let r1 = log_returns(prices, 1);
    let abs: Vec<f64> = r1.iter().map(|r| r.abs()).collect();
    let mut sorted_returns = r1.clone();
    sorted_returns.sort_by(f64::total_cmp);
    Ok(StylisedFacts {
        kurtosis: kurt,
        return_acf: autocorrelation(&r1, MAX_ACF_LAG),
        abs_return_acf: autocorrelation(&abs, MAX_ACF_LAG),
        sorted_returns,
    })
}

/// Mean and normal-approximation 95% half-width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl MeanCi {
    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn overlaps(&self, other: &MeanCi) -> bool {
        self.lower() <= other.upper() && other.lower() <= self.upper()
    }
}

pub fn mean_ci(x: &[f64]) -> Option<MeanCi> {
    if x.is_empty() {
        return None;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let half_width = if x.len() > 1 {
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        1.96 * (var / n).sqrt()
    } else {
        0.0
    };
    Some(MeanCi { mean, half_width, n: x.len() })
}

/// Proportion with a normal-approximation 95% interval.
pub fn proportion_ci(successes: usize, trials: usize) -> Option<MeanCi> {
    if trials == 0 {
        return None;
    }
    let p = successes as f64 / trials as f64;
    Some(MeanCi { mean: p, half_width: 1.96 * (p * (1.0 - p) / trials as f64).sqrt(), n: trials })
}

/// One-sided p-value for `p_a < p_b` from a pooled two-proportion z test.
pub fn one_sided_proportion_test(successes_a: usize, n_a: usize, successes_b: usize, n_b: usize) -> f64 {
    let (pa, pb) = (successes_a as f64 / n_a as f64, successes_b as f64 / n_b as f64);
    let pooled = (successes_a + successes_b) as f64 / (n_a + n_b) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n_a as f64 + 1.0 / n_b as f64)).sqrt();
    if se == 0.0 {
        return if pa < pb { 0.0 } else { 1.0 };
    }
    standard_normal_cdf((pa - pb) / se)
}

/// Standard normal CDF via the Abramowitz-Stegun erf approximation (error below 1.5e-7).
pub fn standard_normal_cdf(z: f64) -> f64 {
    let x = z.abs() / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t * (0.254_829_592 + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let erf = 1.0 - poly * (-x * x).exp();
    if z >= 0.0 {
        0.5 * (1.0 + erf)
    } else {
        0.5 * (1.0 - erf)
    }
}

/// One row of the per-trial metrics table.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialMetrics {
    pub config_id: usize,
    pub seed: u64,
    pub f_default: f64,
    pub cascade: bool,
    pub n_crashed_assets: usize,
    /// Earliest crash over all assets.
    pub first_crash_step: Option<Step>,
    pub speed: Speed,
    /// First crash of the shocked asset at or after the shock, minus the shock step.
    pub onset_gap_steps: Option<Step>,
    /// Second element of the sorted first-crash times, minus the shock step.
    pub second_crash_gap_steps: Option<Step>,
    /// Same, ignoring the shocked asset.
    pub second_crash_gap_excl_shocked: Option<Step>,
}

impl TrialMetrics {
    pub fn from_result(config_id: usize, result: &crate::engine::TrialResult, gamma: f64, zeta: f64) -> Self {
        let f_default = result.fraction_defaulted();
        let firsts = &result.first_crash;
        let t_star = result.shock_step;
        let onset_gap_steps = result
            .shocked_asset
            .and_then(|a| result.crash_sets[a].first_at_or_after(t_star))
            .map(|t| t - t_star);
        let shocked = result.shocked_asset;
        let nth_after_shock = |skip: Option<usize>, n: usize| {
            let mut f: Vec<Step> =
                firsts.iter().enumerate().filter(|(j, _)| Some(*j) != skip).filter_map(|(_, t)| *t).collect();
            f.sort_unstable();
            f.get(n).map(|&t| t.saturating_sub(t_star))
        };
        TrialMetrics {
            config_id,
            seed: result.seed,
            f_default,
            cascade: is_cascade(f_default, gamma),
            n_crashed_assets: firsts.iter().flatten().count(),
            first_crash_step: firsts.iter().flatten().min().copied(),
            speed: propagation_speed(firsts, zeta, result.dt_ms),
            onset_gap_steps,
            second_crash_gap_steps: nth_after_shock(None, 1),
            // Without the shocked asset the first remaining crash is the second overall.
            second_crash_gap_excl_shocked: shocked.and_then(|a| nth_after_shock(Some(a), 0)),
        }
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const TRIAL_METRICS_HEADER: &str =
    "config_id,seed,f_default,cascade,n_crashed_assets,first_crash_step,speed,onset_gap_steps";

pub fn write_trial_metrics<W: Write>(out: &mut W, rows: &[TrialMetrics]) -> io::Result<()> {
    writeln!(out, "{TRIAL_METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.config_id,
            r.seed,
            r.f_default,
            u8::from(r.cascade),
            r.n_crashed_assets,
            opt(r.first_crash_step),
            r.speed.as_csv(),
            opt(r.onset_gap_steps)
        )?;
    }
    Ok(())
}

pub fn write_trial_extras<W: Write>(out: &mut W, rows: &[TrialMetrics]) -> io::Result<()> {
    writeln!(out, "config_id,seed,second_crash_gap_steps,second_crash_gap_excl_shocked_steps")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.config_id,
            r.seed,
            opt(r.second_crash_gap_steps),
            opt(r.second_crash_gap_excl_shocked)
        )?;
    }
    Ok(())
}

/// Aggregates of one configuration's trials.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    pub config_id: usize,
    pub contagion: ContagionStats,
    pub f_default: MeanCi,
    pub p_contagion: MeanCi,
    pub crash_probability: MeanCi,
    /// Finite speeds only.
    pub speed: Option<MeanCi>,
    pub infinite_speeds: usize,
    pub onset_gap_steps: Option<MeanCi>,
    pub second_crash_gap_steps: Option<MeanCi>,
    pub second_crash_gap_excl_shocked: Option<MeanCi>,
}

pub fn ensemble_stats(config_id: usize, rows: &[&TrialMetrics], gamma: f64) -> Result<EnsembleStats, MetricsError> {
    let fractions: Vec<f64> = rows.iter().map(|r| r.f_default).collect();
    let contagion = contagion_stats(&fractions, gamma)?;
    let n = rows.len();
    let crashed = rows.iter().filter(|r| r.n_crashed_assets > 0).count();
    let speeds: Vec<f64> = rows.iter().filter_map(|r| r.speed.finite()).collect();
    let gaps = |f: &dyn Fn(&TrialMetrics) -> Option<Step>| {
        mean_ci(&rows.iter().filter_map(|r| f(r)).map(|s| s as f64).collect::<Vec<_>>())
    };
    Ok(EnsembleStats {
        config_id,
        contagion,
        f_default: mean_ci(&fractions).expect("non-empty"),
        p_contagion: proportion_ci(contagion.cascades, n).expect("non-empty"),
        crash_probability: proportion_ci(crashed, n).expect("non-empty"),
        speed: mean_ci(&speeds),
        infinite_speeds: rows.iter().filter(|r| r.speed == Speed::Infinite).count(),
        onset_gap_steps: gaps(&|r| r.onset_gap_steps),
        second_crash_gap_steps: gaps(&|r| r.second_crash_gap_steps),
        second_crash_gap_excl_shocked: gaps(&|r| r.second_crash_gap_excl_shocked),
    })
}

pub const SUMMARY_HEADER: &str = "config_id,trials,p_contagion,p_contagion_ci95,omega,f_default_mean,f_default_ci95,\
crash_probability,crash_probability_ci95,speed_mean,speed_ci95,speed_n,infinite_speeds,onset_gap_mean,onset_gap_ci95,\
second_crash_gap_mean,second_crash_gap_ci95,second_crash_gap_excl_shocked_mean,second_crash_gap_excl_shocked_ci95";

pub fn write_summary<W: Write>(out: &mut W, stats: &[EnsembleStats]) -> io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    let ci = |c: Option<MeanCi>| match c {
        Some(c) => format!("{},{}", c.mean, c.half_width),
        None => ",".into(),
    };
    for s in stats {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            s.config_id,
            s.contagion.trials,
            ci(Some(s.p_contagion)),
            opt(s.contagion.extent),
            ci(Some(s.f_default)),
            ci(Some(s.crash_probability)),
            ci(s.speed),
            s.speed.map_or(0, |c| c.n),
            s.infinite_speeds,
            ci(s.onset_gap_steps),
            ci(s.second_crash_gap_steps),
            ci(s.second_crash_gap_excl_shocked),
        )?;
    }
    Ok(())
}
