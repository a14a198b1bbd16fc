//! Direct-from-definition reference implementations shared by the
//! integration tests and the acceptance run. They favour obviousness over
//! speed and share no code with the library.
#![allow(dead_code)]

use flashnet::metrics::Speed;
use flashnet::netgen::FundAssetNetwork;
use rand::Rng;

/// Relative change over the window, compared against -5% in floating point.
pub fn crash_oracle(prices: &[i64], t: usize, window: usize) -> bool {
    let t_ref = if t >= window { t - window } else { 0 };
    let p_ref = prices[t_ref] as f64;
    (prices[t] as f64 - p_ref) / p_ref < -0.05
}

pub fn first_crash_oracle(prices: &[i64], window: usize) -> Option<u64> {
    (1..prices.len()).find(|&t| crash_oracle(prices, t, window)).map(|t| t as u64)
}

/// Speed by counting: `t_p` is the earliest time with at least `p` crashes
/// at or before it.
pub fn speed_oracle(first: &[Option<u64>], zeta: f64, dt_ms: u32) -> Speed {
    let times: Vec<u64> = first.iter().filter_map(|t| *t).collect();
    let n = times.len();
    if n < 2 {
        return Speed::Undefined;
    }
    let p = std::cmp::max((zeta * n as f64).floor() as usize, 1);
    let t1 = *times.iter().min().unwrap();
    let tp = *times.iter().filter(|&&c| times.iter().filter(|&&u| u <= c).count() >= p).min().unwrap();
    if tp == t1 {
        return Speed::Infinite;
    }
    let c = 60_000.0 / dt_ms as f64;
    Speed::Finite(c * zeta * (n - 1) as f64 / (tp - t1) as f64)
}

/// `(P, Omega)` straight from the definitions.
pub fn contagion_oracle(fractions: &[f64], gamma: f64) -> (f64, Option<f64>) {
    let mut count = 0usize;
    let mut sum = 0.0;
    for &f in fractions {
        if f > gamma {
            count += 1;
            sum += f;
        }
    }
    let omega = if count == 0 { None } else { Some(sum / count as f64) };
    (count as f64 / fractions.len() as f64, omega)
}

/// Breadth-first search over the dense investment matrix; the result is the
/// largest number of funds reachable from any fund.
pub fn largest_component_oracle(network: &FundAssetNetwork) -> usize {
    let (n_f, n_a) = (network.n_funds(), network.n_assets());
    let mut seen = vec![false; n_f];
    let mut best = 0;
    for start in 0..n_f {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = vec![start];
        let mut asset_seen = vec![false; n_a];
        let mut size = 0;
        while let Some(f) = queue.pop() {
            size += 1;
            for a in 0..n_a {
                if network.investment(f, a) > 0.0 && !asset_seen[a] {
                    asset_seen[a] = true;
                    for g in 0..n_f {
                        if network.investment(g, a) > 0.0 && !seen[g] {
                            seen[g] = true;
                            queue.push(g);
                        }
                    }
                }
            }
        }
        best = best.max(size);
    }
    best
}

/// Random walk price path with occasional jumps, so both crash and calm
/// stretches show up.
pub fn random_path<R: Rng>(rng: &mut R, len: usize) -> Vec<i64> {
    let mut p: i64 = rng.random_range(50..20_000);
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(p);
        let step = if rng.random_bool(0.1) { p / rng.random_range(5..30) } else { p / 200 + 1 };
        p = if rng.random_bool(0.5) { p + rng.random_range(0..=step) } else { (p - rng.random_range(0..=step)).max(1) };
    }
    out
}

/// Random sparse investment matrix.
pub fn random_network<R: Rng>(rng: &mut R, n_f: usize, n_a: usize, density: f64) -> FundAssetNetwork {
    let rows = (0..n_f)
        .map(|_| (0..n_a).map(|_| if rng.random_bool(density) { rng.random_range(1.0..100.0) } else { 0.0 }).collect())
        .collect();
    FundAssetNetwork::from_rows(rows)
}

/// Crash-time vectors with frequent ties and gaps.
pub fn random_first_crashes<R: Rng>(rng: &mut R, n: usize) -> Vec<Option<u64>> {
    (0..n).map(|_| rng.random_bool(0.7).then(|| rng.random_range(0..40u64) * rng.random_range(1..200u64))).collect()
}

pub fn random_fractions<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match rng.random_range(0..4) {
            0 => 0.0,
            1 => rng.random_range(0..=20) as f64 / 20.0,
            _ => rng.random::<f64>(),
        })
        .collect()
}
