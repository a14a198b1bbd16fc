//! Fund and bank balance sheets.
//!
//! A fund finances its portfolio with its own capital plus a margin loan
//! from the bank. Leverage is the financed portfolio value over capital,
//! minus one. The bank issues a margin call when leverage exceeds
//! `tau_c` times its initial value, and withdraws the call once leverage
//! drops back below the initial level. A fund whose capital turns negative
//! defaults, and the bank then liquidates what is left.

use crate::orderbook::{Step, Tick};

/// Currency value of one price tick.
pub const TICK_VALUE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FundState {
    Normal,
    MarginCall,
    Default,
}

impl FundState {
    pub fn as_str(self) -> &'static str {
        match self {
            FundState::Normal => "normal",
            FundState::MarginCall => "margin_call",
            FundState::Default => "default",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Valuation {
    /// Share value plus cash from sales.
    pub value: f64,
    pub capital: f64,
    /// Undefined once capital is no longer positive.
    pub leverage: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fund {
    pub id: usize,
    pub capital0: f64,
    pub leverage0: f64,
    pub loan: f64,
    pub tau_c: f64,
    /// Shares held per asset.
    pub positions: Vec<u64>,
    /// Proceeds of distressed sales.
    pub cash: f64,
    pub state: FundState,
    pub capital: f64,
    pub leverage: Option<f64>,
    pub default_step: Option<Step>,
    pub margin_calls: u32,
}

impl Fund {
    pub fn new(id: usize, capital0: f64, leverage0: f64, tau_c: f64, positions: Vec<u64>) -> Self {
        Fund {
            id,
            capital0,
            leverage0,
            loan: capital0 * leverage0,
            tau_c,
            positions,
            cash: 0.0,
            state: FundState::Normal,
            capital: capital0,
            leverage: Some(leverage0),
            default_step: None,
            margin_calls: 0,
        }
    }

    /// Positions from currency investments at a common starting price; the
    /// rounding remainder (under one share per position) is dropped.
    pub fn from_investments(id: usize, capital0: f64, leverage0: f64, tau_c: f64, row: &[f64], price: Tick) -> Self {
        let share_price = price as f64 * TICK_VALUE;
        let positions = row.iter().map(|a| (a / share_price).floor() as u64).collect();
        Fund::new(id, capital0, leverage0, tau_c, positions)
    }

    pub fn holds_anything(&self) -> bool {
        self.positions.iter().any(|&s| s > 0)
    }

    /// Books a distressed sale.
    pub fn record_sale(&mut self, asset: usize, quantity: u64, price: Tick) {
        let q = quantity.min(self.positions[asset]);
        self.positions[asset] -= q;
        self.cash += q as f64 * price as f64 * TICK_VALUE;
    }
}

/// Marks the fund at the given prices (ticks) and stores capital and leverage.
pub fn mark_to_market(fund: &mut Fund, prices: &[Tick]) -> Valuation {
    let shares: f64 = fund.positions.iter().zip(prices).map(|(&s, &p)| s as f64 * p as f64).sum::<f64>() * TICK_VALUE;
    let value = shares + fund.cash;
    let capital = value - fund.loan;
    let leverage = (capital > 0.0).then(|| value / capital - 1.0);
    fund.capital = capital;
    fund.leverage = leverage;
    Valuation { value, capital, leverage }
}

/// Margin state after observing `leverage`. Entering a call needs
/// `leverage / leverage0 > tau_c`; leaving it needs `leverage < leverage0`.
/// Default is not decided here.
pub fn margin_check(state: FundState, leverage: f64, leverage0: f64, tau_c: f64) -> FundState {
    match state {
        FundState::Default => FundState::Default,
        FundState::Normal if leverage0 > 0.0 && leverage / leverage0 > tau_c => FundState::MarginCall,
        FundState::MarginCall if leverage < leverage0 => FundState::Normal,
        s => s,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transition {
    Unchanged,
    EnteredMarginCall,
    ExitedMarginCall,
    Defaulted,
}

/// What the fund's distressed sellers should do after a transition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LiquidationCommand {
    None,
    /// Sell the whole position in each listed `(asset, shares)`.
    Activate(Vec<(usize, u64)>),
    Deactivate,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Bank {
    pub loans: Vec<f64>,
    /// Loss realised when a defaulted fund's liquidation completes.
    pub realised_losses: Vec<Option<f64>>,
    /// Mark-to-market shortfall at the default instant.
    pub default_shortfalls: Vec<Option<f64>>,
}

impl Bank {
    pub fn new(funds: &[Fund]) -> Self {
        Bank {
            loans: funds.iter().map(|f| f.loan).collect(),
            realised_losses: vec![None; funds.len()],
            default_shortfalls: vec![None; funds.len()],
        }
    }

    pub fn realised_loss(&self) -> f64 {
        self.realised_losses.iter().flatten().sum()
    }

    pub fn shortfall_at_default(&self) -> f64 {
        self.default_shortfalls.iter().flatten().sum()
    }
}

/// Moves a fund into default. Liquidation continues under the bank.
pub fn apply_default(fund: &mut Fund, bank: &mut Bank, now: Step) {
    if fund.state == FundState::Default {
        return;
    }
    fund.state = FundState::Default;
    fund.default_step = Some(now);
    bank.default_shortfalls[fund.id] = Some((-fund.capital).max(0.0));
    if !fund.holds_anything() {
        settle_default(fund, bank);
    }
}

/// Realises the bank's loss once a defaulted fund has nothing left to sell.
pub fn settle_default(fund: &Fund, bank: &mut Bank) {
    if fund.state == FundState::Default && !fund.holds_anything() && bank.realised_losses[fund.id].is_none() {
        bank.realised_losses[fund.id] = Some((fund.loan - fund.cash).max(0.0));
    }
}

/// Full per-step update: mark, default test, margin check.
pub fn update_fund(fund: &mut Fund, bank: &mut Bank, prices: &[Tick], now: Step) -> Transition {
    if fund.state == FundState::Default {
        mark_to_market(fund, prices);
        settle_default(fund, bank);
        return Transition::Unchanged;
    }
    let v = mark_to_market(fund, prices);
    let Some(leverage) = v.leverage.filter(|_| v.capital > 0.0) else {
        apply_default(fund, bank, now);
        return Transition::Defaulted;
    };
    let before = fund.state;
    fund.state = margin_check(before, leverage, fund.leverage0, fund.tau_c);
    match (before, fund.state) {
        (FundState::Normal, FundState::MarginCall) => {
            fund.margin_calls += 1;
            Transition::EnteredMarginCall
        }
        (FundState::MarginCall, FundState::Normal) => Transition::ExitedMarginCall,
        _ => Transition::Unchanged,
    }
}

/// Seller activations implied by a transition: every held asset gets a
/// seller targeting the full current position; leaving the margin call
/// suspends them all.
pub fn update_liquidation(fund: &Fund, transition: Transition) -> LiquidationCommand {
    match transition {
        Transition::EnteredMarginCall | Transition::Defaulted => LiquidationCommand::Activate(
            fund.positions.iter().enumerate().filter(|(_, &s)| s > 0).map(|(a, &s)| (a, s)).collect(),
        ),
        Transition::ExitedMarginCall => LiquidationCommand::Deactivate,
        Transition::Unchanged => LiquidationCommand::None,
    }
}

/// Fund snapshot rows: `step,fund,capital,leverage,state`.
pub fn write_snapshot_row<W: std::io::Write>(out: &mut W, step: Step, fund: &Fund) -> std::io::Result<()> {
    write_snapshot_fields(out, step, fund.id, fund.capital, fund.leverage, fund.state)
}

pub fn write_snapshot_fields<W: std::io::Write>(
    out: &mut W,
    step: Step,
    fund: usize,
    capital: f64,
    leverage: Option<f64>,
    state: FundState,
) -> std::io::Result<()> {
    let leverage = leverage.map_or_else(|| "nan".to_string(), |l| l.to_string());
    writeln!(out, "{step},{fund},{capital},{leverage},{}", state.as_str())
}
