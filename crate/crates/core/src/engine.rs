//! Trial loop: scheduling, matching, shock injection and fund updates.
//!
//! A trial is a pure function of its [`TrialConfig`]. All randomness is drawn
//! from ChaCha streams keyed by the master seed, a purpose tag and an index.
//! Adding agents therefore never shifts the draws of unrelated streams.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use thiserror::Error;

use crate::agents::{
    AgentKind, AgentSpec, AgentState, Behaviour, BehaviourParams, DistressedSellerState, MarketView, SellerOwner,
};
use crate::macrofin::{self, Bank, Fund, FundState, LiquidationCommand, Transition};
use crate::metrics::{self, CrashSet};
use crate::netgen::{self, FundAssetNetwork, NetworkError, NetworkParams};
use crate::orderbook::{
    AgentId, LimitOrderBook, Order, Side, Step, Tick, Trade, INITIAL_PRICE, OPENING_AUCTION_STEPS,
    STEPS_PER_SECOND,
};

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("invalid trial config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShockConfig {
    pub enabled: bool,
    /// Unscaled share quantity; divided by the agent scale divisor.
    pub quantity: u64,
    pub eta: f64,
    pub delta_s: f64,
}

impl Default for ShockConfig {
    fn default() -> Self {
        ShockConfig { enabled: true, quantity: 75_000, eta: 0.09, delta_s: 10.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialConfig {
    pub steps: Step,
    pub dt_ms: u32,
    /// Fraction of the run before the shock; the shock step is `floor(fraction * steps)`.
    pub shock_fraction: f64,
    pub network: NetworkParams,
    pub tau_c: f64,
    pub scale_divisor: u32,
    pub shock: ShockConfig,
    /// Volume fraction and mean interval of fund liquidation sellers.
    pub liquidation_eta: f64,
    pub liquidation_delta_s: f64,
    pub behaviour: BehaviourParams,
    pub initial_price: Tick,
    /// Steps before margin monitoring starts; `None` starts it at the shock step.
    pub monitor_from: Option<Step>,
    pub seed: u64,
    pub record_trades: bool,
    /// Sample fund balance sheets every this many steps.
    pub snapshot_every: Option<Step>,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            steps: 100_000,
            dt_ms: 50,
            shock_fraction: 0.2,
            network: NetworkParams::default(),
            tau_c: 1.01,
            scale_divisor: 32,
            shock: ShockConfig::default(),
            liquidation_eta: 0.09,
            liquidation_delta_s: 10.0,
            behaviour: BehaviourParams::default(),
            initial_price: INITIAL_PRICE,
            monitor_from: None,
            seed: 0,
            record_trades: false,
            snapshot_every: None,
        }
    }
}

impl TrialConfig {
    pub fn shock_step(&self) -> Step {
        (self.shock_fraction * self.steps as f64).floor() as Step
    }

    pub fn monitor_start(&self) -> Step {
        self.monitor_from.unwrap_or_else(|| self.shock_step())
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::InvalidConfig(m));
        if self.dt_ms == 0 {
            return bad("dt_ms must be positive".into());
        }
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        let t_star = self.shock_step();
        if t_star == 0 || t_star >= self.steps {
            return bad(format!("shock step {t_star} must lie strictly inside (0, {})", self.steps));
        }
        if self.shock.enabled && t_star <= OPENING_AUCTION_STEPS {
            return bad(format!("shock step {t_star} falls inside the opening auction"));
        }
        if self.tau_c.is_nan() || self.tau_c < 1.0 {
            return bad(format!("tau_c = {} must be at least 1", self.tau_c));
        }
        for (name, v) in [
            ("shock.eta", self.shock.eta),
            ("shock.delta_s", self.shock.delta_s),
            ("liquidation.eta", self.liquidation_eta),
            ("liquidation.delta_s", self.liquidation_delta_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if self.scale_divisor == 0 {
            return bad("scale divisor must be positive".into());
        }
        if self.initial_price < 1 {
            return bad("initial price must be at least one tick".into());
        }
        if self.snapshot_every == Some(0) {
            return bad("snapshot interval must be positive".into());
        }
        self.network.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FundSnapshot {
    pub step: Step,
    pub fund: usize,
    pub capital: f64,
    pub leverage: Option<f64>,
    pub state: FundState,
}

impl FundSnapshot {
    pub fn write_row<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        macrofin::write_snapshot_fields(out, self.step, self.fund, self.capital, self.leverage, self.state)
    }
}

/// Everything recorded by one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    pub steps: Step,
    pub dt_ms: u32,
    pub shock_step: Step,
    pub shocked_asset: Option<usize>,
    /// Last-trade price per asset at the end of every step.
    pub prices: Vec<Vec<Tick>>,
    /// Traded volume per asset in one-second bins.
    pub volume_per_second: Vec<Vec<u64>>,
    /// Resting bid and ask depth per asset, sampled every second.
    pub bid_depth: Vec<Vec<u64>>,
    pub ask_depth: Vec<Vec<u64>>,
    pub fund_states: Vec<FundState>,
    pub default_steps: Vec<Option<Step>>,
    pub margin_calls: Vec<u32>,
    pub bank_realised_loss: f64,
    pub bank_shortfall_at_default: f64,
    pub crash_sets: Vec<CrashSet>,
    pub first_crash: Vec<Option<Step>>,
    pub volatility_auctions: Vec<u32>,
    pub trades: Option<Vec<Vec<Trade>>>,
    pub snapshots: Vec<FundSnapshot>,
    pub network: FundAssetNetwork,
}

impl TrialResult {
    pub fn n_assets(&self) -> usize {
        self.prices.len()
    }

    pub fn fraction_defaulted(&self) -> f64 {
        if self.fund_states.is_empty() {
            return 0.0;
        }
        self.fund_states.iter().filter(|s| **s == FundState::Default).count() as f64 / self.fund_states.len() as f64
    }
}

// Stream purposes.
const STREAM_NETWORK: u64 = 1;
const STREAM_SHOCK: u64 = 2;
const STREAM_SCHEDULER: u64 = 3;
const STREAM_AGENT: u64 = 4;
const STREAM_VALUATION: u64 = 5;

/// Independent ChaCha stream for `(seed, purpose, index)`.
pub fn substream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 48) | index);
    rng
}

/// Mutable state of a running trial.
pub struct TrialState {
    config: TrialConfig,
    now: Step,
    books: Vec<LimitOrderBook>,
    agents: Vec<AgentState>,
    generations: Vec<u32>,
    schedule: BinaryHeap<Reverse<(Step, u32, u32)>>,
    scheduler_rng: ChaCha8Rng,
    funds: Vec<Fund>,
    bank: Bank,
    /// Agent id of each fund's seller per asset, created on first use.
    fund_sellers: Vec<Vec<Option<u32>>>,
    network: FundAssetNetwork,
    next_order_id: u64,
    prices: Vec<Vec<Tick>>,
    volume_per_second: Vec<Vec<u64>>,
    bid_depth: Vec<Vec<u64>>,
    ask_depth: Vec<Vec<u64>>,
    volatility_auctions: Vec<u32>,
    shocked_asset: Option<usize>,
    snapshots: Vec<FundSnapshot>,
    due: Vec<u32>,
}

impl TrialState {
    pub fn new(config: TrialConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let seed = config.seed;
        let network = netgen::generate_network(&config.network, &mut substream(seed, STREAM_NETWORK, 0))?;
        let n_a = network.n_assets();
        let funds: Vec<Fund> = (0..network.n_funds())
            .map(|i| {
                Fund::from_investments(
                    i,
                    config.network.capital,
                    config.network.leverage,
                    config.tau_c,
                    network.row(i),
                    config.initial_price,
                )
            })
            .collect();
        let bank = Bank::new(&funds);
        let books = (0..n_a).map(|a| LimitOrderBook::new(a, config.initial_price)).collect();
        let capacity = (config.steps as usize) + 1;
        let seconds = (config.steps / STEPS_PER_SECOND) as usize + 1;
        let mut state = TrialState {
            now: 0,
            books,
            agents: Vec::new(),
            generations: Vec::new(),
            schedule: BinaryHeap::new(),
            scheduler_rng: substream(seed, STREAM_SCHEDULER, 0),
            fund_sellers: vec![vec![None; n_a]; funds.len()],
            funds,
            bank,
            network,
            next_order_id: 0,
            prices: (0..n_a).map(|_| Vec::with_capacity(capacity)).collect(),
            volume_per_second: vec![Vec::with_capacity(seconds); n_a],
            bid_depth: vec![Vec::with_capacity(seconds); n_a],
            ask_depth: vec![Vec::with_capacity(seconds); n_a],
            volatility_auctions: vec![0; n_a],
            shocked_asset: None,
            snapshots: Vec::new(),
            due: Vec::new(),
            config,
        };
        state.populate();
        Ok(state)
    }

    fn populate(&mut self) {
        let cfg = self.config;
        let mut valuation_rng = substream(cfg.seed, STREAM_VALUATION, 0);
        let valuations = Normal::new(cfg.initial_price as f64, cfg.behaviour.valuation_std.max(0.0))
            .expect("valid valuation spread");
        for asset in 0..self.books.len() {
            for kind in AgentKind::TRADERS {
                let spec = AgentSpec::calibrated(kind, cfg.scale_divisor);
                for _ in 0..spec.scaled_population() {
                    let behaviour = match kind {
                        AgentKind::Small => Behaviour::Small,
                        AgentKind::FundamentalBuy | AgentKind::FundamentalSell => Behaviour::Fundamental {
                            side: if kind == AgentKind::FundamentalBuy { Side::Buy } else { Side::Sell },
                            valuation: valuations.sample(&mut valuation_rng).round() as Tick,
                        },
                        AgentKind::Opportunistic => Behaviour::Opportunistic { buy_probability: 0.5 },
                        AgentKind::MarketMaker => Behaviour::MarketMaker,
                        AgentKind::Hft => Behaviour::Hft,
                        AgentKind::Distressed => unreachable!("distressed sellers are created on demand"),
                    };
                    let id = self.push_agent(asset, kind, spec.mean_gap_steps(cfg.dt_ms), spec.scaled_inventory_limit(), behaviour);
                    self.wake_later(id, 0);
                }
            }
        }
    }

    fn push_agent(
        &mut self,
        asset: usize,
        kind: AgentKind,
        mean_gap: f64,
        limit: Option<i64>,
        behaviour: Behaviour,
    ) -> u32 {
        let id = self.agents.len() as u32;
        let rng = substream(self.config.seed, STREAM_AGENT, u64::from(id));
        self.agents.push(AgentState::new(AgentId(id), asset, kind, mean_gap, limit, behaviour, rng));
        self.generations.push(0);
        id
    }

    /// Schedules the agent's next wake-up strictly after `now`.
    fn wake_later(&mut self, id: u32, now: Step) {
        let at = self.agents[id as usize].schedule(now);
        self.schedule.push(Reverse((at, id, self.generations[id as usize])));
    }

    fn wake_at(&mut self, id: u32, at: Step) {
        self.agents[id as usize].next_wakeup = at;
        self.schedule.push(Reverse((at, id, self.generations[id as usize])));
    }

    pub fn now(&self) -> Step {
        self.now
    }

    pub fn books(&self) -> &[LimitOrderBook] {
        &self.books
    }

    pub fn funds(&self) -> &[Fund] {
        &self.funds
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn is_finished(&self) -> bool {
        self.now >= self.config.steps
    }

    fn view(&self, asset: usize) -> MarketView {
        let book = &self.books[asset];
        let history = &self.prices[asset];
        let lookback = STEPS_PER_SECOND as usize * 60;
        MarketView {
            now: self.now,
            best_bid: book.best_bid(),
            best_ask: book.best_ask(),
            bid_qty_at_best: book.quantity_at_best(Side::Buy),
            ask_qty_at_best: book.quantity_at_best(Side::Sell),
            last_price: book.last_trade_price(),
            price_minute_ago: (history.len() >= lookback).then(|| history[history.len() - lookback]),
            trailing_volume: book.trailing_volume(),
        }
    }

    fn apply_trades(&mut self, asset: usize, trades: &[Trade]) {
        for t in trades {
            self.agents[t.buyer.0 as usize].apply_fill(Side::Buy, t.quantity);
            let seller = &mut self.agents[t.seller.0 as usize];
            seller.apply_fill(Side::Sell, t.quantity);
            if let Some(DistressedSellerState { owner: SellerOwner::Fund(f), .. }) = seller.seller().copied() {
                self.funds[f].record_sale(asset, t.quantity, t.price);
            }
        }
    }

    fn inject_shock(&mut self) {
        let cfg = self.config;
        let asset = netgen::select_shock_asset(&self.network, &mut substream(cfg.seed, STREAM_SHOCK, 0))
            .unwrap_or(0);
        let quantity = cfg.shock.quantity / u64::from(cfg.scale_divisor);
        let seller = DistressedSellerState::new(SellerOwner::Exogenous, asset, quantity, cfg.shock.eta, cfg.shock.delta_s);
        let mean_gap = cfg.shock.delta_s * 1000.0 / f64::from(cfg.dt_ms);
        let id = self.push_agent(asset, AgentKind::Distressed, mean_gap, None, Behaviour::Distressed(seller));
        self.wake_at(id, self.now);
        self.shocked_asset = Some(asset);
    }

    fn activate_agent(&mut self, id: u32) {
        let mut due = std::mem::take(&mut self.due);
        due.clear();
        due.push(id);
        self.activate(&due);
        self.due = due;
    }

    fn activate(&mut self, ids: &[u32]) {
        let params = self.config.behaviour;
        let now = self.now;
        for &id in ids {
            let asset = self.agents[id as usize].asset;
            let view = self.view(asset);
            let action = self.agents[id as usize].act(&view, &params);
            if action.cancel_open {
                let open = std::mem::take(&mut self.agents[id as usize].open_orders);
                for order in open {
                    self.books[asset].cancel_order(order);
                }
            }
            for intent in action.orders {
                let order_id = self.next_order_id;
                self.next_order_id += 1;
                let order = match intent {
                    crate::agents::Intent::Limit { side, price, quantity } => {
                        Order::limit(order_id, id, side, price, quantity, now)
                    }
                    crate::agents::Intent::Market { side, quantity } => Order::market(order_id, id, side, quantity, now),
                };
                let trades = self.books[asset].submit_order(order, now).expect("agents emit well-formed orders");
                self.apply_trades(asset, &trades);
                if self.books[asset].contains(order.id) && self.agents[id as usize].kind != AgentKind::Small {
                    self.agents[id as usize].open_orders.push(order.id);
                }
            }
            let keep = self.agents[id as usize].seller().map_or(true, |s| s.active && s.remaining > 0);
            if keep {
                self.wake_later(id, now);
            }
        }
    }

    fn apply_liquidation(&mut self, fund: usize, command: LiquidationCommand) {
        let cfg = self.config;
        match command {
            LiquidationCommand::None => {}
            LiquidationCommand::Deactivate => {
                for asset in 0..self.books.len() {
                    if let Some(id) = self.fund_sellers[fund][asset] {
                        if let Some(s) = self.agents[id as usize].seller_mut() {
                            s.active = false;
                        }
                        self.generations[id as usize] += 1;
                    }
                }
            }
            LiquidationCommand::Activate(targets) => {
                let mean_gap = cfg.liquidation_delta_s * 1000.0 / f64::from(cfg.dt_ms);
                for (asset, quantity) in targets {
                    let id = match self.fund_sellers[fund][asset] {
                        Some(id) => {
                            let s = self.agents[id as usize].seller_mut().expect("fund seller");
                            s.remaining = quantity;
                            s.active = quantity > 0;
                            self.generations[id as usize] += 1;
                            id
                        }
                        None => {
                            let seller = DistressedSellerState::new(
                                SellerOwner::Fund(fund),
                                asset,
                                quantity,
                                cfg.liquidation_eta,
                                cfg.liquidation_delta_s,
                            );
                            let id = self.push_agent(asset, AgentKind::Distressed, mean_gap, None, Behaviour::Distressed(seller));
                            self.fund_sellers[fund][asset] = Some(id);
                            id
                        }
                    };
                    self.wake_later(id, self.now);
                }
            }
        }
    }

    /// Advances the trial by one step.
    pub fn step(&mut self) {
        let now = self.now;
        let cfg = self.config;
        if cfg.shock.enabled && now == cfg.shock_step() {
            self.inject_shock();
        }

        for asset in 0..self.books.len() {
            if self.books[asset].phase().auction_end().is_some_and(|end| now >= end) {
                let (_, trades) = self.books[asset].clear_auction(now).expect("auction has elapsed");
                self.apply_trades(asset, &trades);
            }
        }

        let mut due = std::mem::take(&mut self.due);
        due.clear();
        while let Some(&Reverse((at, id, generation))) = self.schedule.peek() {
            if at > now {
                break;
            }
            self.schedule.pop();
            if generation == self.generations[id as usize] {
                due.push(id);
            }
        }
        due.shuffle(&mut self.scheduler_rng);
        self.activate(&due);
        self.due = due;

        for asset in 0..self.books.len() {
            let book = &mut self.books[asset];
            if book.end_step(now) {
                self.volatility_auctions[asset] += 1;
            }
            self.prices[asset].push(book.last_trade_price());
        }
        if (now + 1) % STEPS_PER_SECOND == 0 {
            for asset in 0..self.books.len() {
                let book = &self.books[asset];
                let second = now / STEPS_PER_SECOND;
                let start = (second * STEPS_PER_SECOND) as usize;
                let traded: u64 = book.trade_log().iter().rev().take_while(|t| t.time as usize >= start).map(|t| t.quantity).sum();
                self.volume_per_second[asset].push(traded);
                self.bid_depth[asset].push(book.depth(Side::Buy));
                self.ask_depth[asset].push(book.depth(Side::Sell));
            }
        }

        if now >= cfg.monitor_start() {
            self.update_funds();
        }
        self.now += 1;
    }

    fn update_funds(&mut self) {
        let now = self.now;
        let prices: Vec<Tick> = self.books.iter().map(|b| b.last_trade_price()).collect();
        for f in 0..self.funds.len() {
            let transition = macrofin::update_fund(&mut self.funds[f], &mut self.bank, &prices, now);
            if transition != Transition::Unchanged {
                let command = macrofin::update_liquidation(&self.funds[f], transition);
                self.apply_liquidation(f, command);
            }
            if let Some(every) = self.config.snapshot_every {
                if now % every == 0 {
                    let fund = &self.funds[f];
                    self.snapshots.push(FundSnapshot {
                        step: now,
                        fund: f,
                        capital: fund.capital,
                        leverage: fund.leverage,
                        state: fund.state,
                    });
                }
            }
        }
    }

    /// Runs the remaining steps and collects the result.
    pub fn finish(mut self) -> TrialResult {
        while !self.is_finished() {
            self.step();
        }
        let window = metrics::crash_window_steps(self.config.dt_ms);
        let crash_sets: Vec<CrashSet> = self.prices.iter().map(|p| metrics::crash_set(p, window)).collect();
        let first_crash = crash_sets.iter().map(CrashSet::first).collect();
        let trades = self.config.record_trades.then(|| self.books.iter().map(|b| b.trade_log().to_vec()).collect());
        TrialResult {
            seed: self.config.seed,
            steps: self.config.steps,
            dt_ms: self.config.dt_ms,
            shock_step: self.config.shock_step(),
            shocked_asset: self.shocked_asset,
            prices: self.prices,
            volume_per_second: self.volume_per_second,
            bid_depth: self.bid_depth,
            ask_depth: self.ask_depth,
            fund_states: self.funds.iter().map(|f| f.state).collect(),
            default_steps: self.funds.iter().map(|f| f.default_step).collect(),
            margin_calls: self.funds.iter().map(|f| f.margin_calls).collect(),
            bank_realised_loss: self.bank.realised_loss(),
            bank_shortfall_at_default: self.bank.shortfall_at_default(),
            crash_sets,
            first_crash,
            volatility_auctions: self.volatility_auctions,
            trades,
            snapshots: self.snapshots,
            network: self.network,
        }
    }

    /// Submits an agent's wake-up out of schedule; used by tests and demos.
    pub fn activate_now(&mut self, id: u32) {
        self.activate_agent(id);
    }
}

pub fn run_trial(config: &TrialConfig) -> Result<TrialResult, EngineError> {
    Ok(TrialState::new(*config)?.finish())
}

#[derive(Debug, Error)]
#[error("{} of the trial configs are invalid; first: config {}: {}", .errors.len(), .errors[0].0, .errors[0].1)]
pub struct EnsembleError {
    pub errors: Vec<(usize, EngineError)>,
}

/// Runs every config, mapping each result through `reduce` on the worker
/// that produced it. Output order follows the input, whatever the
/// parallelism. Without the `parallel` feature trials run serially.
#[cfg_attr(not(feature = "parallel"), allow(unused_variables))]
pub fn run_ensemble_with<R, F>(configs: &[TrialConfig], workers: usize, reduce: F) -> Result<Vec<R>, EnsembleError>
where
    R: Send,
    F: Fn(usize, TrialResult) -> R + Sync,
{
    let errors: Vec<(usize, EngineError)> =
        configs.iter().enumerate().filter_map(|(i, c)| c.validate().err().map(|e| (i, e))).collect();
    if !errors.is_empty() {
        return Err(EnsembleError { errors });
    }
    let run = |(i, c): (usize, &TrialConfig)| reduce(i, run_trial(c).expect("validated config"));
    #[cfg(feature = "parallel")]
    if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("thread pool");
        return Ok(pool.install(|| configs.par_iter().enumerate().map(run).collect()));
    }
    Ok(configs.iter().enumerate().map(run).collect())
}

pub fn run_ensemble(configs: &[TrialConfig], workers: usize) -> Result<Vec<TrialResult>, EnsembleError> {
    run_ensemble_with(configs, workers, |_, r| r)
}
