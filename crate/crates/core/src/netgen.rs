//! Weighted bipartite fund–asset networks with preferential attachment.
//!
//! Funds are added one at a time. Each fund picks `k_fund` distinct assets,
//! weighting them by the rank of the total already invested in each asset,
//! raised to the crowding exponent `beta`. A positive `beta` favours assets
//! that already hold a lot of investment. A negative `beta` favours assets
//! that hold little. The fund then spreads its capital over the chosen assets
//! using descending allocation fractions.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("network needs at least one fund and one asset (got {n_funds} funds, {n_assets} assets)")]
    Empty { n_funds: usize, n_assets: usize },
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfUnitRange { name: &'static str, value: f64 },
    #[error("{name} = {value} must be finite and non-negative")]
    Negative { name: &'static str, value: f64 },
    #[error("no asset carries any investment")]
    NoConnectedAsset,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkParams {
    pub n_funds: usize,
    pub n_assets: usize,
    /// Diversification: fraction of assets each fund holds.
    pub rho: f64,
    /// Crowding exponent.
    pub beta: f64,
    /// Allocation uniformity: 1 spreads capital equally, 0 uses Gaussian weights.
    pub alpha: f64,
    /// Per-fund noise on `rho`.
    pub sigma: f64,
    /// Initial capital per fund, in currency.
    pub capital: f64,
    /// Initial leverage per fund.
    pub leverage: f64,
}

impl Default for NetworkParams {
    fn default() -> Self {
        NetworkParams {
            n_funds: 1,
            n_assets: 1,
            rho: 0.5,
            beta: 0.0,
            alpha: 0.0,
            sigma: 0.001,
            capital: 1.0e6,
            leverage: 3.0,
        }
    }
}

impl NetworkParams {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.n_funds == 0 || self.n_assets == 0 {
            return Err(NetworkError::Empty { n_funds: self.n_funds, n_assets: self.n_assets });
        }
        for (name, value) in [("rho", self.rho), ("alpha", self.alpha)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(NetworkError::OutOfUnitRange { name, value });
            }
        }
        for (name, value) in [("sigma", self.sigma), ("capital", self.capital), ("leverage", self.leverage)] {
            if !value.is_finite() || value < 0.0 {
                return Err(NetworkError::Negative { name, value });
            }
        }
        if !self.beta.is_finite() {
            return Err(NetworkError::Negative { name: "beta", value: self.beta });
        }
        Ok(())
    }

    /// Total invested per fund: capital plus the loan, `C0 (1 + lambda0)`.
    pub fn fund_value(&self) -> f64 {
        self.capital * (1.0 + self.leverage)
    }
}

/// Currency investments of every fund in every asset.
#[derive(Clone, Debug, PartialEq)]
pub struct FundAssetNetwork {
    n_assets: usize,
    investments: Vec<f64>,
    fund_degree: Vec<usize>,
}

impl FundAssetNetwork {
    /// Builds a network from explicit rows; used for hand-made topologies.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n_assets = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_assets), "ragged investment matrix");
        let fund_degree = rows.iter().map(|r| r.iter().filter(|&&a| a > 0.0).count()).collect();
        FundAssetNetwork { n_assets, investments: rows.into_iter().flatten().collect(), fund_degree }
    }

    pub fn n_funds(&self) -> usize {
        self.fund_degree.len()
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn investment(&self, fund: usize, asset: usize) -> f64 {
        self.investments[fund * self.n_assets + asset]
    }

    pub fn row(&self, fund: usize) -> &[f64] {
        &self.investments[fund * self.n_assets..(fund + 1) * self.n_assets]
    }

    pub fn fund_degree(&self, fund: usize) -> usize {
        self.fund_degree[fund]
    }

    pub fn asset_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.n_assets];
        for row in self.investments.chunks(self.n_assets) {
            for (t, a) in totals.iter_mut().zip(row) {
                *t += a;
            }
        }
        totals
    }

    /// Positive entries as `(fund, asset, investment)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.investments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > 0.0)
            .map(|(k, &a)| (k / self.n_assets, k % self.n_assets, a))
    }

    pub fn write_edges_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "fund,asset,investment")?;
        for (f, a, v) in self.edges() {
            writeln!(out, "{f},{a},{v}")?;
        }
        Ok(())
    }
}

/// Dense ascending ranks starting at 1: equal totals share a rank.
pub fn dense_ranks(totals: &[f64]) -> Vec<usize> {
    let mut distinct: Vec<f64> = totals.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    totals
        .iter()
        .map(|t| distinct.partition_point(|d| d.total_cmp(t).is_lt()) + 1)
        .collect()
}

/// Probability of each asset being picked next.
///
/// Ranks are dense. For negative `beta` the ranks are reversed against the
/// top rank, so the least-invested assets rank highest. The weight is then
/// `rank^|beta|`, normalised.
pub fn preferential_weights(totals: &[f64], beta: f64) -> Vec<f64> {
    let ranks = dense_ranks(totals);
    let top = ranks.iter().copied().max().unwrap_or(1);
    let exponent = beta.abs();
    let weights: Vec<f64> = ranks
        .iter()
        .map(|&r| {
            let r = if beta < 0.0 { top - r + 1 } else { r };
            (r as f64 / top as f64).powf(exponent)
        })
        .collect();
    let sum: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / sum).collect()
}

/// `k` allocation fractions in descending order, summing to one.
///
/// The Gaussian part is `k` absolute standard-normal variates normalised to
/// unit sum. `alpha` blends it linearly with the equal split `1/k`.
pub fn investment_fractions<R: Rng + ?Sized>(k: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    assert!(k >= 1, "a fund invests in at least one asset");
    let mut g: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).map(|x: f64| x.abs()).collect();
    let sum: f64 = g.iter().sum();
    if sum > 0.0 {
        g.iter_mut().for_each(|x| *x /= sum);
    } else {
        g.iter_mut().for_each(|x| *x = 1.0 / k as f64);
    }
    g.sort_by(|a, b| b.total_cmp(a));
    let uniform = 1.0 / k as f64;
    g.into_iter().map(|x| alpha * uniform + (1.0 - alpha) * x).collect()
}

/// Number of assets a fund holds: the noise-perturbed diversification times
/// the asset count, to the nearest integer, at least one.
pub fn fund_degree<R: Rng + ?Sized>(params: &NetworkParams, rng: &mut R) -> usize {
    let rho = Normal::new(params.rho, params.sigma).expect("validated sigma").sample(rng).clamp(0.0, 1.0);
    ((rho * params.n_assets as f64).round() as usize).clamp(1, params.n_assets)
}

/// Weighted sampling of `k` distinct indices; weights are renormalised over
/// the remaining indices after each pick.
pub fn weighted_choice_without_replacement<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut picks = Vec::with_capacity(k);
    for _ in 0..k.min(w.len()) {
        let total: f64 = w.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut chosen = None;
        for (j, &wj) in w.iter().enumerate() {
            if wj <= 0.0 {
                continue;
            }
            chosen = Some(j);
            if target < wj {
                break;
            }
            target -= wj;
        }
        let j = chosen.expect("some weight left");
        picks.push(j);
        w[j] = 0.0;
    }
    picks
}

pub fn generate_network<R: Rng + ?Sized>(params: &NetworkParams, rng: &mut R) -> Result<FundAssetNetwork, NetworkError> {
    params.validate()?;
    let n_a = params.n_assets;
    let value = params.fund_value();
    let mut investments = vec![0.0; params.n_funds * n_a];
    let mut totals = vec![0.0; n_a];
    let mut degrees = Vec::with_capacity(params.n_funds);
    for fund in 0..params.n_funds {
        let weights = preferential_weights(&totals, params.beta);
        let k = fund_degree(params, rng);
        let picks = weighted_choice_without_replacement(&weights, k, rng);
        let fractions = investment_fractions(k, params.alpha, rng);
        let row = &mut investments[fund * n_a..(fund + 1) * n_a];
        for (&asset, fraction) in picks.iter().zip(fractions) {
            row[asset] = value * fraction;
            totals[asset] += row[asset];
        }
        degrees.push(k);
    }
    Ok(FundAssetNetwork { n_assets: n_a, investments, fund_degree: degrees })
}

/// A connected component of the investment graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub funds: Vec<usize>,
    pub assets: Vec<usize>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Components that contain at least one fund, largest fund count first.
/// Assets nobody holds are not components.
pub fn components(network: &FundAssetNetwork) -> Vec<Component> {
    let (n_f, n_a) = (network.n_funds(), network.n_assets());
    let mut parent: Vec<usize> = (0..n_f + n_a).collect();
    for (f, a, _) in network.edges() {
        let (rf, ra) = (find(&mut parent, f), find(&mut parent, n_f + a));
        if rf != ra {
            parent[ra] = rf;
        }
    }
    let mut by_root: std::collections::BTreeMap<usize, Component> = std::collections::BTreeMap::new();
    for f in 0..n_f {
        let r = find(&mut parent, f);
        by_root.entry(r).or_insert_with(|| Component { funds: Vec::new(), assets: Vec::new() }).funds.push(f);
    }
    let totals = network.asset_totals();
    for a in 0..n_a {
        if totals[a] > 0.0 {
            let r = find(&mut parent, n_f + a);
            if let Some(c) = by_root.get_mut(&r) {
                c.assets.push(a);
            }
        }
    }
    let mut out: Vec<Component> = by_root.into_values().collect();
    out.sort_by(|a, b| b.funds.len().cmp(&a.funds.len()).then(a.funds[0].cmp(&b.funds[0])));
    out
}

pub fn largest_component_funds(network: &FundAssetNetwork) -> usize {
    components(network).first().map_or(0, |c| c.funds.len())
}

/// Picks the asset that receives the exogenous shock: uniform over held
/// assets, restricted to the giant component when it holds more than 80 % of
/// the funds.
pub fn select_shock_asset<R: Rng + ?Sized>(network: &FundAssetNetwork, rng: &mut R) -> Result<usize, NetworkError> {
    let comps = components(network);
    let giant = comps.first().filter(|c| c.funds.len() * 5 > network.n_funds() * 4);
    let candidates: Vec<usize> = match giant {
        Some(c) => c.assets.clone(),
        None => {
            let totals = network.asset_totals();
            (0..network.n_assets()).filter(|&a| totals[a] > 0.0).collect()
        }
    };
    if candidates.is_empty() {
        return Err(NetworkError::NoConnectedAsset);
    }
    Ok(candidates[rng.random_range(0..candidates.len())])
}
