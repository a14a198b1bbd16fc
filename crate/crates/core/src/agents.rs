//! Zero-intelligence trader behaviours.
//!
//! Every agent trades a single asset and wakes at Poisson-distributed times.
//! On each wake-up it looks at a [`MarketView`] of its book and returns an
//! [`Action`]: whether to cancel its resting orders, and which new orders to
//! send. All randomness comes from the agent's own stream.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::orderbook::{AgentId, OrderId, Side, Step, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AgentKind {
    Small,
    FundamentalBuy,
    FundamentalSell,
    Opportunistic,
    MarketMaker,
    Hft,
    Distressed,
}

impl AgentKind {
    pub const TRADERS: [AgentKind; 6] = [
        AgentKind::Small,
        AgentKind::FundamentalBuy,
        AgentKind::FundamentalSell,
        AgentKind::Opportunistic,
        AgentKind::MarketMaker,
        AgentKind::Hft,
    ];
}

/// Calibrated population and timing for one behaviour type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentSpec {
    pub kind: AgentKind,
    pub timescale_s: f64,
    /// Unscaled inventory bound; `None` is unbounded.
    pub inventory_limit: Option<f64>,
    /// Unscaled population.
    pub population: u32,
    pub scale_divisor: u32,
}

/// Total inventory across all HFTs, shared equally among them before scaling.
pub const HFT_TOTAL_INVENTORY: f64 = 3000.0;

impl AgentSpec {
    /// Calibrated defaults per behaviour. The fundamental population of 2500
    /// is split evenly between buyers and sellers. The distressed row's
    /// population is set by the fund network, so it is 1 here.
    pub fn calibrated(kind: AgentKind, scale_divisor: u32) -> Self {
        let (timescale_s, inventory_limit, population) = match kind {
            AgentKind::Small => (7200.0, None, 6500),
            AgentKind::FundamentalBuy | AgentKind::FundamentalSell => (60.0, None, 1250),
            AgentKind::Opportunistic => (120.0, Some(120.0), 1600),
            AgentKind::MarketMaker => (20.0, Some(120.0), 320),
            AgentKind::Hft => (0.35, Some(HFT_TOTAL_INVENTORY / 16.0), 16),
            AgentKind::Distressed => (10.0, None, 1),
        };
        AgentSpec { kind, timescale_s, inventory_limit, population, scale_divisor }
    }

    pub fn scaled_population(&self) -> u32 {
        (self.population / self.scale_divisor.max(1)).max(1)
    }

    pub fn scaled_inventory_limit(&self) -> Option<i64> {
        self.inventory_limit.map(|l| ((l / f64::from(self.scale_divisor.max(1))).floor() as i64).max(1))
    }

    pub fn mean_gap_steps(&self, dt_ms: u32) -> f64 {
        self.timescale_s * 1000.0 / f64::from(dt_ms)
    }
}

/// Order sizes and thresholds not fixed by the calibration table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BehaviourParams {
    pub small_spread_ticks: Tick,
    pub fundamental_size: u64,
    /// Passive orders are placed up to this many ticks inside the same-side best.
    pub fundamental_offset_ticks: Tick,
    pub fundamental_toxic_ticks: Tick,
    pub valuation_std: f64,
    pub opportunistic_size: u64,
    pub opportunistic_step_std: f64,
    pub opportunistic_reversion: f64,
    pub mm_size: u64,
    pub mm_toxic_ticks: Tick,
    pub mm_half_spread: Tick,
    pub mm_widen_factor: Tick,
    pub hft_size: u64,
}

impl Default for BehaviourParams {
    fn default() -> Self {
        BehaviourParams {
            small_spread_ticks: 1000,
            fundamental_size: 5,
            fundamental_offset_ticks: 10,
            fundamental_toxic_ticks: 70,
            valuation_std: 20.0,
            opportunistic_size: 3,
            opportunistic_step_std: 0.05,
            opportunistic_reversion: 0.1,
            mm_size: 5,
            mm_toxic_ticks: 24,
            mm_half_spread: 1,
            mm_widen_factor: 3,
            hft_size: 2,
        }
    }
}

/// What an agent sees of its book when it wakes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarketView {
    pub now: Step,
    pub best_bid: Option<Tick>,
    pub best_ask: Option<Tick>,
    pub bid_qty_at_best: u64,
    pub ask_qty_at_best: u64,
    pub last_price: Tick,
    /// Last-trade price one minute ago; `None` during the first minute.
    pub price_minute_ago: Option<Tick>,
    pub trailing_volume: u64,
}

impl MarketView {
    pub fn one_minute_trend(&self) -> Option<Tick> {
        self.price_minute_ago.map(|p| self.last_price - p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Intent {
    Limit { side: Side, price: Tick, quantity: u64 },
    Market { side: Side, quantity: u64 },
}

impl Intent {
    pub fn side(&self) -> Side {
        match *self {
            Intent::Limit { side, .. } | Intent::Market { side, .. } => side,
        }
    }

    pub fn quantity(&self) -> u64 {
        match *self {
            Intent::Limit { quantity, .. } | Intent::Market { quantity, .. } => quantity,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Action {
    pub cancel_open: bool,
    pub orders: Vec<Intent>,
}

impl Action {
    fn none() -> Self {
        Action::default()
    }

    fn replace(orders: Vec<Intent>) -> Self {
        Action { cancel_open: true, orders }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Active,
    Withdrawn,
    Liquidating,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SellerOwner {
    Exogenous,
    Fund(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistressedSellerState {
    pub owner: SellerOwner,
    pub asset: usize,
    pub remaining: u64,
    pub sold: u64,
    pub eta: f64,
    pub delta_s: f64,
    pub active: bool,
}

impl DistressedSellerState {
    pub fn new(owner: SellerOwner, asset: usize, quantity: u64, eta: f64, delta_s: f64) -> Self {
        DistressedSellerState { owner, asset, remaining: quantity, sold: 0, eta, delta_s, active: quantity > 0 }
    }

    /// Books a fill against the remaining quantity.
    pub fn record_fill(&mut self, quantity: u64) {
        let q = quantity.min(self.remaining);
        self.remaining -= q;
        self.sold += q;
        if self.remaining == 0 {
            self.active = false;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Behaviour {
    Small,
    Fundamental { side: Side, valuation: Tick },
    Opportunistic { buy_probability: f64 },
    MarketMaker,
    Hft,
    Distressed(DistressedSellerState),
}

#[derive(Clone, Debug)]
pub struct AgentState {
    pub id: AgentId,
    pub asset: usize,
    pub kind: AgentKind,
    pub mean_gap_steps: f64,
    pub inventory_limit: Option<i64>,
    pub inventory: i64,
    pub next_wakeup: Step,
    pub mode: Mode,
    pub open_orders: Vec<OrderId>,
    pub behaviour: Behaviour,
    pub rng: ChaCha8Rng,
}

/// Next Poisson wake-up: `now` plus an exponential gap with the given mean,
/// rounded to whole steps and at least one step.
pub fn next_wakeup<R: Rng + ?Sized>(now: Step, mean_gap_steps: f64, rng: &mut R) -> Step {
    let gap = Exp::new(1.0 / mean_gap_steps).expect("positive mean gap").sample(rng);
    now + (gap.round() as Step).max(1)
}

/// Sells below the same-side best are never placed by small traders: buys sit
/// at or below the best bid and sells at or above the best ask, up to
/// `spread` ticks away. An empty side anchors on the last trade.
pub fn act_small<R: Rng + ?Sized>(view: &MarketView, spread: Tick, rng: &mut R) -> Intent {
    let side = if rng.random_bool(0.5) { Side::Buy } else { Side::Sell };
    let offset = rng.random_range(0..=spread);
    let price = match side {
        Side::Buy => (view.best_bid.unwrap_or(view.last_price) - offset).max(1),
        Side::Sell => view.best_ask.unwrap_or(view.last_price) + offset,
    };
    Intent::Limit { side, price, quantity: 1 }
}

/// Whether the one-minute price trend is strong enough for a liquidity
/// provider to withdraw. Always false before one minute of history exists.
pub fn toxic_flow_check(view: &MarketView, threshold_ticks: Tick) -> bool {
    view.one_minute_trend().is_some_and(|trend| trend.abs() > threshold_ticks)
}

/// HFT probability of placing a buy, skewed toward the heavier side of the
/// top of book.
pub fn hft_buy_probability(bid_qty: u64, ask_qty: u64) -> f64 {
    let total = bid_qty + ask_qty;
    if total == 0 {
        0.5
    } else {
        bid_qty as f64 / total as f64
    }
}

/// Market sell size: a fraction `eta` of trailing one-minute volume, at least
/// one share and never more than what is left to sell.
pub fn distressed_order_size(remaining: u64, eta: f64, trailing_volume: u64) -> u64 {
    let cap = ((eta * trailing_volume as f64).floor() as u64).max(1);
    remaining.min(cap)
}

/// Room left before a bounded inventory hits its limit on `side`.
fn room(inventory: i64, limit: Option<i64>, side: Side) -> u64 {
    match limit {
        None => u64::MAX,
        Some(l) => {
            let r = match side {
                Side::Buy => l - inventory,
                Side::Sell => l + inventory,
            };
            r.max(0) as u64
        }
    }
}

impl AgentState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: AgentId,
        asset: usize,
        kind: AgentKind,
        mean_gap_steps: f64,
        inventory_limit: Option<i64>,
        behaviour: Behaviour,
        rng: ChaCha8Rng,
    ) -> Self {
        AgentState {
            id,
            asset,
            kind,
            mean_gap_steps,
            inventory_limit,
            inventory: 0,
            next_wakeup: 0,
            mode: Mode::Active,
            open_orders: Vec::new(),
            behaviour,
            rng,
        }
    }

    /// Draws and stores the next wake-up after `now`.
    pub fn schedule(&mut self, now: Step) -> Step {
        self.next_wakeup = next_wakeup(now, self.mean_gap_steps, &mut self.rng);
        self.next_wakeup
    }

    pub fn seller(&self) -> Option<&DistressedSellerState> {
        match &self.behaviour {
            Behaviour::Distressed(s) => Some(s),
            _ => None,
        }
    }

    pub fn seller_mut(&mut self) -> Option<&mut DistressedSellerState> {
        match &mut self.behaviour {
            Behaviour::Distressed(s) => Some(s),
            _ => None,
        }
    }

    pub fn act(&mut self, view: &MarketView, params: &BehaviourParams) -> Action {
        match self.behaviour.clone() {
            Behaviour::Small => Action { cancel_open: false, orders: vec![act_small(view, params.small_spread_ticks, &mut self.rng)] },
            Behaviour::Fundamental { side, valuation } => self.act_fundamental(view, params, side, valuation),
            Behaviour::Opportunistic { buy_probability } => self.act_opportunistic(view, params, buy_probability),
            Behaviour::MarketMaker => self.act_market_maker(view, params),
            Behaviour::Hft => self.act_hft(view, params),
            Behaviour::Distressed(seller) => {
                if !seller.active || seller.remaining == 0 {
                    return Action::none();
                }
                let quantity = distressed_order_size(seller.remaining, seller.eta, view.trailing_volume);
                Action { cancel_open: false, orders: vec![Intent::Market { side: Side::Sell, quantity }] }
            }
        }
    }

    /// Fundamental traders quote near the same-side best, never beyond
    /// their private valuation; a quote crossing the spread takes the
    /// surplus on offer.
    fn act_fundamental(&mut self, view: &MarketView, params: &BehaviourParams, side: Side, valuation: Tick) -> Action {
        if toxic_flow_check(view, params.fundamental_toxic_ticks) {
            self.mode = Mode::Withdrawn;
            return Action::replace(Vec::new());
        }
        self.mode = Mode::Active;
        let offset = self.rng.random_range(0..=params.fundamental_offset_ticks);
        let price = match side {
            Side::Buy => (view.best_bid.unwrap_or(view.last_price) + offset).min(valuation),
            Side::Sell => (view.best_ask.unwrap_or(view.last_price) - offset).max(valuation),
        };
        Action::replace(vec![Intent::Limit { side, price: price.max(1), quantity: params.fundamental_size }])
    }

    fn act_opportunistic(&mut self, view: &MarketView, params: &BehaviourParams, buy_probability: f64) -> Action {
        let noise = Normal::new(0.0, params.opportunistic_step_std).expect("finite std").sample(&mut self.rng);
        let next = (buy_probability + params.opportunistic_reversion * (0.5 - buy_probability) + noise).clamp(0.2, 0.8);
        self.behaviour = Behaviour::Opportunistic { buy_probability: next };
        let side = if self.rng.random_bool(next) { Side::Buy } else { Side::Sell };
        let quantity = params.opportunistic_size.min(room(self.inventory, self.inventory_limit, side));
        if quantity == 0 {
            return Action::replace(Vec::new());
        }
        let price = match side {
            Side::Buy => view.best_ask.unwrap_or(view.last_price),
            Side::Sell => view.best_bid.unwrap_or(view.last_price),
        };
        Action::replace(vec![Intent::Limit { side, price: price.max(1), quantity }])
    }

    /// Two-sided quoting around the last trade. Quotes never cross the
    /// opposite best. A saturated inventory switches to passive unwinding on
    /// the offsetting side until the position is back to half the limit.
    pub fn act_market_maker(&mut self, view: &MarketView, params: &BehaviourParams) -> Action {
        if toxic_flow_check(view, params.mm_toxic_ticks) {
            if self.mode != Mode::Liquidating {
                self.mode = Mode::Withdrawn;
            }
            return Action::replace(Vec::new());
        }
        let limit = self.inventory_limit.unwrap_or(i64::MAX);
        if self.inventory.abs() >= limit {
            self.mode = Mode::Liquidating;
        } else if self.mode == Mode::Liquidating && self.inventory.abs() <= limit / 2 {
            self.mode = Mode::Active;
        } else if self.mode == Mode::Withdrawn {
            self.mode = Mode::Active;
        }

        let widen = view.one_minute_trend().is_some_and(|t| 2 * t.abs() > params.mm_toxic_ticks);
        let half = if widen { params.mm_half_spread * params.mm_widen_factor } else { params.mm_half_spread };
        let mut bid = view.last_price - half;
        let mut ask = view.last_price + half;
        if let Some(best_ask) = view.best_ask {
            bid = bid.min(best_ask - 1);
        }
        if let Some(best_bid) = view.best_bid {
            ask = ask.max(best_bid + 1);
        }

        let (quote_bid, quote_ask) = if self.mode == Mode::Liquidating {
            (self.inventory < 0, self.inventory > 0)
        } else {
            (true, true)
        };
        let mut orders = Vec::with_capacity(2);
        if quote_bid {
            let q = params.mm_size.min(room(self.inventory, self.inventory_limit, Side::Buy));
            if q > 0 && bid >= 1 {
                orders.push(Intent::Limit { side: Side::Buy, price: bid, quantity: q });
            }
        }
        if quote_ask {
            let q = params.mm_size.min(room(self.inventory, self.inventory_limit, Side::Sell));
            if q > 0 {
                orders.push(Intent::Limit { side: Side::Sell, price: ask, quantity: q });
            }
        }
        Action::replace(orders)
    }

    /// HFTs make markets at the touch, leaning toward the order-book
    /// imbalance. A saturated inventory is flattened with a market order.
    fn act_hft(&mut self, view: &MarketView, params: &BehaviourParams) -> Action {
        let limit = self.inventory_limit.unwrap_or(i64::MAX);
        if self.inventory.abs() >= limit {
            let side = if self.inventory > 0 { Side::Sell } else { Side::Buy };
            return Action::replace(vec![Intent::Market { side, quantity: self.inventory.unsigned_abs() }]);
        }
        let p_buy = hft_buy_probability(view.bid_qty_at_best, view.ask_qty_at_best);
        let side = if self.rng.random_bool(p_buy) { Side::Buy } else { Side::Sell };
        let quantity = params.hft_size.min(room(self.inventory, self.inventory_limit, side));
        if quantity == 0 {
            return Action::replace(Vec::new());
        }
        let price = match (side, view.best_bid, view.best_ask) {
            (Side::Buy, Some(b), Some(a)) if a - b > 1 => b + 1,
            (Side::Buy, Some(b), _) => b,
            (Side::Buy, None, _) => view.last_price - 1,
            (Side::Sell, Some(b), Some(a)) if a - b > 1 => a - 1,
            (Side::Sell, _, Some(a)) => a,
            (Side::Sell, _, None) => view.last_price + 1,
        };
        Action::replace(vec![Intent::Limit { side, price: price.max(1), quantity }])
    }

    pub fn apply_fill(&mut self, side: Side, quantity: u64) {
        let q = quantity as i64;
        match side {
            Side::Buy => self.inventory += q,
            Side::Sell => self.inventory -= q,
        }
        if let Some(seller) = self.seller_mut() {
            if side == Side::Sell {
                seller.record_fill(quantity);
            }
        }
    }
}
