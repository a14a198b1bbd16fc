//! Per-asset limit order book.
//!
//! Continuous matching follows price-time priority and always executes at the
//! resting order's limit price. The book also runs call auctions: the opening
//! auction that covers the first simulated minute, and short volatility
//! auctions that start when the last-trade price drops sharply within one
//! second. While an auction is running, orders are queued and nothing
//! matches. When the auction is cleared, every crossable share executes at a
//! single price.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{self, Write};

use thiserror::Error;

/// Price in integer ticks (one tick is one cent).
pub type Tick = i64;
/// Simulation step index.
pub type Step = u64;

/// Default starting price for every asset.
pub const INITIAL_PRICE: Tick = 10_000;
/// Steps in one simulated second at 50 ms resolution.
pub const STEPS_PER_SECOND: Step = 20;
/// Opening auction length: the first simulated minute.
pub const OPENING_AUCTION_STEPS: Step = 60 * STEPS_PER_SECOND;
/// Volatility auction length: five seconds.
pub const VOLATILITY_AUCTION_STEPS: Step = 5 * STEPS_PER_SECOND;
/// Look-back of the volatility trigger, in steps.
pub const TRIGGER_WINDOW_STEPS: usize = STEPS_PER_SECOND as usize;
/// Trigger threshold in thousandths: a fall of 1.3 % or more.
pub const TRIGGER_FALL_PERMILLE: i64 = 13;
/// Trailing volume window used by distressed sellers (one minute).
pub const VOLUME_WINDOW_STEPS: usize = OPENING_AUCTION_STEPS as usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OrderId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Buy => "buy",
            Side::Sell => "sell",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderKind {
    Limit(Tick),
    Market,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Order {
    pub id: OrderId,
    pub agent: AgentId,
    pub side: Side,
    pub kind: OrderKind,
    pub quantity: u64,
    pub submit_time: Step,
}

impl Order {
    pub fn limit(id: u64, agent: u32, side: Side, price: Tick, quantity: u64, time: Step) -> Self {
        Order {
            id: OrderId(id),
            agent: AgentId(agent),
            side,
            kind: OrderKind::Limit(price),
            quantity,
            submit_time: time,
        }
    }

    pub fn market(id: u64, agent: u32, side: Side, quantity: u64, time: Step) -> Self {
        Order {
            id: OrderId(id),
            agent: AgentId(agent),
            side,
            kind: OrderKind::Market,
            quantity,
            submit_time: time,
        }
    }

    pub fn price(&self) -> Option<Tick> {
        match self.kind {
            OrderKind::Limit(p) => Some(p),
            OrderKind::Market => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trade {
    pub time: Step,
    pub price: Tick,
    pub quantity: u64,
    pub aggressor: Side,
    pub buyer: AgentId,
    pub seller: AgentId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    OpeningAuction { ends_at: Step },
    Continuous,
    VolatilityAuction { ends_at: Step },
}

impl Phase {
    pub fn is_auction(self) -> bool {
        !matches!(self, Phase::Continuous)
    }

    /// Step at which a running auction may be cleared.
    pub fn auction_end(self) -> Option<Step> {
        match self {
            Phase::OpeningAuction { ends_at } | Phase::VolatilityAuction { ends_at } => Some(ends_at),
            Phase::Continuous => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OrderError {
    #[error("order {0:?} has zero quantity")]
    ZeroQuantity(OrderId),
    #[error("order {id:?} has limit price {price} below one tick")]
    InvalidPrice { id: OrderId, price: Tick },
    #[error("auction cannot be cleared: {0}")]
    AuctionNotElapsed(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CancelOutcome {
    Removed,
    NotFound,
}

#[derive(Clone, Copy, Debug)]
struct Resting {
    id: OrderId,
    agent: AgentId,
    quantity: u64,
    time: Step,
}

/// Where a resting order lives, for cancellation.
#[derive(Clone, Copy, Debug)]
enum Slot {
    Level(Side, Tick),
    AuctionMarket(Side),
}

#[derive(Clone, Debug)]
pub struct LimitOrderBook {
    asset: usize,
    bids: BTreeMap<Tick, VecDeque<Resting>>,
    asks: BTreeMap<Tick, VecDeque<Resting>>,
    auction_market_buys: VecDeque<Resting>,
    auction_market_sells: VecDeque<Resting>,
    index: HashMap<OrderId, Slot>,
    bid_depth: u64,
    ask_depth: u64,
    last_trade_price: Tick,
    phase: Phase,
    trade_log: Vec<Trade>,
    price_window: VecDeque<Tick>,
    volume_window: VecDeque<u64>,
    trailing_volume: u64,
    step_volume: u64,
    last_event: Step,
}

impl LimitOrderBook {
    /// New book that opens with an auction ending after the first minute.
    pub fn new(asset: usize, initial_price: Tick) -> Self {
        Self::with_phase(asset, initial_price, Phase::OpeningAuction { ends_at: OPENING_AUCTION_STEPS })
    }

    /// New book already trading continuously.
    pub fn continuous(asset: usize, initial_price: Tick) -> Self {
        Self::with_phase(asset, initial_price, Phase::Continuous)
    }

    pub fn with_phase(asset: usize, initial_price: Tick, phase: Phase) -> Self {
        LimitOrderBook {
            asset,
            bids: BTreeMap::new(),
            asks: BTreeMap::new(),
            auction_market_buys: VecDeque::new(),
            auction_market_sells: VecDeque::new(),
            index: HashMap::new(),
            bid_depth: 0,
            ask_depth: 0,
            last_trade_price: initial_price,
            phase,
            trade_log: Vec::new(),
            price_window: VecDeque::with_capacity(TRIGGER_WINDOW_STEPS + 1),
            volume_window: VecDeque::with_capacity(VOLUME_WINDOW_STEPS + 1),
            trailing_volume: 0,
            step_volume: 0,
            last_event: 0,
        }
    }

    pub fn asset(&self) -> usize {
        self.asset
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn last_trade_price(&self) -> Tick {
        self.last_trade_price
    }

    pub fn trade_log(&self) -> &[Trade] {
        &self.trade_log
    }

    pub fn best_bid(&self) -> Option<Tick> {
        self.bids.keys().next_back().copied()
    }

    pub fn best_ask(&self) -> Option<Tick> {
        self.asks.keys().next().copied()
    }

    /// Total shares resting at the best price on `side`.
    pub fn quantity_at_best(&self, side: Side) -> u64 {
        let level = match side {
            Side::Buy => self.bids.values().next_back(),
            Side::Sell => self.asks.values().next(),
        };
        level.map_or(0, |q| q.iter().map(|r| r.quantity).sum())
    }

    /// Total resting limit volume on `side`.
    pub fn depth(&self, side: Side) -> u64 {
        match side {
            Side::Buy => self.bid_depth,
            Side::Sell => self.ask_depth,
        }
    }

    /// Volume traded over the previous minute of completed steps plus the
    /// current step so far.
    pub fn trailing_volume(&self) -> u64 {
        self.trailing_volume + self.step_volume
    }

    pub fn resting_orders(&self) -> usize {
        self.index.len()
    }

    pub fn contains(&self, id: OrderId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn submit_order(&mut self, order: Order, now: Step) -> Result<Vec<Trade>, OrderError> {
        if order.quantity == 0 {
            return Err(OrderError::ZeroQuantity(order.id));
        }
        if let OrderKind::Limit(price) = order.kind {
            if price < 1 {
                return Err(OrderError::InvalidPrice { id: order.id, price });
            }
        }
        debug_assert!(now >= self.last_event, "events must arrive in time order");
        self.last_event = now;

        let resting = Resting { id: order.id, agent: order.agent, quantity: order.quantity, time: order.submit_time };
        if self.phase.is_auction() {
            match order.kind {
                OrderKind::Limit(price) => self.rest(order.side, price, resting),
                OrderKind::Market => {
                    let queue = match order.side {
                        Side::Buy => &mut self.auction_market_buys,
                        Side::Sell => &mut self.auction_market_sells,
                    };
                    queue.push_back(resting);
                    self.index.insert(order.id, Slot::AuctionMarket(order.side));
                }
            }
            return Ok(Vec::new());
        }

        let mut trades = Vec::new();
        let remaining = self.match_incoming(&order, now, &mut trades);
        if remaining > 0 {
            if let OrderKind::Limit(price) = order.kind {
                self.rest(order.side, price, Resting { quantity: remaining, ..resting });
            }
            // unfilled market remainder is dropped
        }
        Ok(trades)
    }

    fn match_incoming(&mut self, order: &Order, now: Step, trades: &mut Vec<Trade>) -> u64 {
        let start = trades.len();
        let mut remaining = order.quantity;
        while remaining > 0 {
            let best = match order.side {
                Side::Buy => self.asks.first_entry(),
                Side::Sell => self.bids.last_entry(),
            };
            let Some(mut level) = best else { break };
            let level_price = *level.key();
            let crosses = match (order.kind, order.side) {
                (OrderKind::Market, _) => true,
                (OrderKind::Limit(p), Side::Buy) => p >= level_price,
                (OrderKind::Limit(p), Side::Sell) => p <= level_price,
            };
            if !crosses {
                break;
            }
            let queue = level.get_mut();
            while remaining > 0 {
                let Some(front) = queue.front_mut() else { break };
                let fill = remaining.min(front.quantity);
                front.quantity -= fill;
                remaining -= fill;
                let (buyer, seller) = match order.side {
                    Side::Buy => (order.agent, front.agent),
                    Side::Sell => (front.agent, order.agent),
                };
                trades.push(Trade { time: now, price: level_price, quantity: fill, aggressor: order.side, buyer, seller });
                if front.quantity == 0 {
                    let id = front.id;
                    queue.pop_front();
                    self.index.remove(&id);
                }
            }
            if queue.is_empty() {
                level.remove();
            }
        }
        let filled = order.quantity - remaining;
        match order.side {
            Side::Buy => self.ask_depth -= filled,
            Side::Sell => self.bid_depth -= filled,
        }
        self.record(&trades[start..]);
        remaining
    }

    fn record(&mut self, new: &[Trade]) {
        for t in new {
            self.step_volume += t.quantity;
            self.last_trade_price = t.price;
        }
        self.trade_log.extend_from_slice(new);
    }

    fn rest(&mut self, side: Side, price: Tick, resting: Resting) {
        let levels = match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        };
        levels.entry(price).or_default().push_back(resting);
        match side {
            Side::Buy => self.bid_depth += resting.quantity,
            Side::Sell => self.ask_depth += resting.quantity,
        }
        self.index.insert(resting.id, Slot::Level(side, price));
    }

    pub fn cancel_order(&mut self, id: OrderId) -> CancelOutcome {
        let Some(slot) = self.index.remove(&id) else {
            return CancelOutcome::NotFound;
        };
        match slot {
            Slot::Level(side, price) => {
                let levels = match side {
                    Side::Buy => &mut self.bids,
                    Side::Sell => &mut self.asks,
                };
                let queue = levels.get_mut(&price).expect("indexed level exists");
                let pos = queue.iter().position(|r| r.id == id).expect("indexed order exists");
                let removed = queue.remove(pos).expect("position is valid");
                if queue.is_empty() {
                    levels.remove(&price);
                }
                match side {
                    Side::Buy => self.bid_depth -= removed.quantity,
                    Side::Sell => self.ask_depth -= removed.quantity,
                }
            }
            Slot::AuctionMarket(side) => {
                let queue = match side {
                    Side::Buy => &mut self.auction_market_buys,
                    Side::Sell => &mut self.auction_market_sells,
                };
                let pos = queue.iter().position(|r| r.id == id).expect("indexed order exists");
                queue.remove(pos);
            }
        }
        CancelOutcome::Removed
    }

    /// Executable volume if the auction cleared at `price`.
    fn executable_volume(&self, price: Tick) -> u64 {
        let market_buys: u64 = self.auction_market_buys.iter().map(|r| r.quantity).sum();
        let market_sells: u64 = self.auction_market_sells.iter().map(|r| r.quantity).sum();
        let demand: u64 =
            market_buys + self.bids.range(price..).flat_map(|(_, q)| q.iter()).map(|r| r.quantity).sum::<u64>();
        let supply: u64 =
            market_sells + self.asks.range(..=price).flat_map(|(_, q)| q.iter()).map(|r| r.quantity).sum::<u64>();
        demand.min(supply)
    }

    /// Price that maximises executable volume; ties go to the price closest
    /// to the last trade, then to the lower price. `None` when nothing crosses.
    pub fn auction_clearing_price(&self) -> Option<(Tick, u64)> {
        let mut candidates: Vec<Tick> = self.bids.keys().chain(self.asks.keys()).copied().collect();
        candidates.push(self.last_trade_price);
        candidates.sort_unstable();
        candidates.dedup();
        let mut best: Option<(Tick, u64)> = None;
        for p in candidates {
            let v = self.executable_volume(p);
            if v == 0 {
                continue;
            }
            best = match best {
                None => Some((p, v)),
                Some((bp, bv)) => {
                    let closer = (p - self.last_trade_price).abs() < (bp - self.last_trade_price).abs();
                    if v > bv || (v == bv && closer) {
                        Some((p, v))
                    } else {
                        Some((bp, bv))
                    }
                }
            };
        }
        best
    }

    /// Clears an elapsed auction and moves the book to continuous trading.
    pub fn clear_auction(&mut self, now: Step) -> Result<(Option<Tick>, Vec<Trade>), OrderError> {
        match self.phase.auction_end() {
            None => return Err(OrderError::AuctionNotElapsed("book is trading continuously")),
            Some(end) if now < end => return Err(OrderError::AuctionNotElapsed("auction still running")),
            Some(_) => {}
        }
        self.last_event = self.last_event.max(now);
        let cleared = self.auction_clearing_price();
        let mut trades = Vec::new();
        if let Some((price, volume)) = cleared {
            self.execute_auction(price, volume, now, &mut trades);
        }
        for r in self.auction_market_buys.drain(..).chain(self.auction_market_sells.drain(..)) {
            self.index.remove(&r.id);
        }
        self.phase = Phase::Continuous;
        self.record(&trades);
        Ok((cleared.map(|(p, _)| p), trades))
    }

    fn execute_auction(&mut self, price: Tick, volume: u64, now: Step, trades: &mut Vec<Trade>) {
        // Priority order per side: market orders, then limits by price, FIFO within.
        let mut buys: Vec<(Option<Tick>, Resting)> = self.auction_market_buys.iter().map(|r| (None, *r)).collect();
        for (p, q) in self.bids.range(price..).rev() {
            buys.extend(q.iter().map(|r| (Some(*p), *r)));
        }
        let mut sells: Vec<(Option<Tick>, Resting)> = self.auction_market_sells.iter().map(|r| (None, *r)).collect();
        for (p, q) in self.asks.range(..=price) {
            sells.extend(q.iter().map(|r| (Some(*p), *r)));
        }

        let mut left = volume;
        let (mut bi, mut si) = (0, 0);
        let mut buy_fill = vec![0u64; buys.len()];
        let mut sell_fill = vec![0u64; sells.len()];
        while left > 0 {
            let b = &buys[bi].1;
            let s = &sells[si].1;
            let fill = left.min(b.quantity - buy_fill[bi]).min(s.quantity - sell_fill[si]);
            let aggressor = if (b.time, b.id) > (s.time, s.id) { Side::Buy } else { Side::Sell };
            trades.push(Trade { time: now, price, quantity: fill, aggressor, buyer: b.agent, seller: s.agent });
            buy_fill[bi] += fill;
            sell_fill[si] += fill;
            left -= fill;
            if buy_fill[bi] == b.quantity {
                bi += 1;
            }
            if sell_fill[si] == s.quantity {
                si += 1;
            }
        }
        for ((level, r), filled) in buys.iter().zip(&buy_fill) {
            if *filled > 0 {
                self.reduce(Side::Buy, *level, r.id, *filled);
            }
        }
        for ((level, r), filled) in sells.iter().zip(&sell_fill) {
            if *filled > 0 {
                self.reduce(Side::Sell, *level, r.id, *filled);
            }
        }
    }

    fn reduce(&mut self, side: Side, level: Option<Tick>, id: OrderId, by: u64) {
        let queue = match (side, level) {
            (Side::Buy, None) => &mut self.auction_market_buys,
            (Side::Sell, None) => &mut self.auction_market_sells,
            (Side::Buy, Some(p)) => self.bids.get_mut(&p).expect("level exists"),
            (Side::Sell, Some(p)) => self.asks.get_mut(&p).expect("level exists"),
        };
        let pos = queue.iter().position(|r| r.id == id).expect("order exists");
        queue[pos].quantity -= by;
        if queue[pos].quantity == 0 {
            queue.remove(pos);
            self.index.remove(&id);
        }
        if let Some(p) = level {
            let levels = match side {
                Side::Buy => &mut self.bids,
                Side::Sell => &mut self.asks,
            };
            if levels.get(&p).is_some_and(|q| q.is_empty()) {
                levels.remove(&p);
            }
            match side {
                Side::Buy => self.bid_depth -= by,
                Side::Sell => self.ask_depth -= by,
            }
        }
    }

    /// True when the last-trade price has fallen by at least 1.3 % relative to
    /// the price one second earlier; in that case the book enters a
    /// five-second volatility auction.
    pub fn check_volatility_trigger(&mut self, now: Step) -> bool {
        if self.phase != Phase::Continuous || self.price_window.len() < TRIGGER_WINDOW_STEPS {
            return false;
        }
        let before = self.price_window[self.price_window.len() - TRIGGER_WINDOW_STEPS];
        let fall = (before - self.last_trade_price) * 1000;
        if fall >= TRIGGER_FALL_PERMILLE * before {
            self.phase = Phase::VolatilityAuction { ends_at: now + VOLATILITY_AUCTION_STEPS };
            true
        } else {
            false
        }
    }

    /// Closes the current step: checks the volatility trigger and rolls the
    /// one-second price window and the one-minute volume window. Returns
    /// whether a volatility auction started.
    pub fn end_step(&mut self, now: Step) -> bool {
        let triggered = self.check_volatility_trigger(now);
        self.price_window.push_back(self.last_trade_price);
        if self.price_window.len() > TRIGGER_WINDOW_STEPS {
            self.price_window.pop_front();
        }
        self.volume_window.push_back(self.step_volume);
        self.trailing_volume += self.step_volume;
        if self.volume_window.len() > VOLUME_WINDOW_STEPS {
            self.trailing_volume -= self.volume_window.pop_front().unwrap_or(0);
        }
        self.step_volume = 0;
        triggered
    }

    /// Bid and ask levels as `(price, total quantity)`, best first.
    pub fn levels(&self, side: Side) -> Vec<(Tick, u64)> {
        let sum = |q: &VecDeque<Resting>| q.iter().map(|r| r.quantity).sum::<u64>();
        match side {
            Side::Buy => self.bids.iter().rev().map(|(p, q)| (*p, sum(q))).collect(),
            Side::Sell => self.asks.iter().map(|(p, q)| (*p, sum(q))).collect(),
        }
    }
}

/// Writes trades as `time,asset,price,qty,aggressor`.
pub fn write_trades_csv<W: Write>(out: &mut W, asset: usize, trades: &[Trade], header: bool) -> io::Result<()> {
    if header {
        writeln!(out, "time,asset,price,qty,aggressor")?;
    }
    for t in trades {
        writeln!(out, "{},{},{},{},{}", t.time, asset, t.price, t.quantity, t.aggressor.as_str())?;
    }
    Ok(())
}
