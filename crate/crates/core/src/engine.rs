//! Trading-period state machine.
//!
//! A period starts by re-anchoring on the last trade: every flat contrarian
//! that activates quotes one unit at `(1 + r_market) * anchor`, and every flat
//! trend follower that activates is armed at the same relative distance. The
//! main fund then sends at most one market order, after which the cascade
//! runs in waves until nothing more trades:
//!
//! 1. snapshot the stops reached by the last trade and the armed followers
//!    whose trigger it reached,
//! 2. execute the stops (book order), then the followers (ascending
//!    `|r_market|`, then population order), each as a one-unit market order,
//! 3. every fill that opens a position places that investor's take-profit
//!    limit and stop-loss stop; every fill that closes one cancels the
//!    sibling and locks the investor for the rest of the period.
//!
//! Followers and stops triggered by trades inside a wave are picked up by
//! the next wave, which reproduces the wave counts of the closed-form
//! cascade in [`crate::theory`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{BookError, EngineError};
use crate::orderbook::{Book, Fill, Order, OrderKind, Owner, Side};
use crate::population::{Investor, StrategyType};
use crate::theory::ActivationRealization;

pub const DEFAULT_WAVE_CAP: usize = 10_000;
pub const DEFAULT_INITIAL_PRICE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub initial_price: f64,
    pub wave_cap: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            initial_price: DEFAULT_INITIAL_PRICE,
            wave_cap: DEFAULT_WAVE_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InvestorStatus {
    /// -1, 0 or +1.
    pub position: i8,
    pub entry_price: Option<f64>,
    pub tp_order: Option<Order>,
    pub sl_order: Option<Order>,
    pub locked_this_period: bool,
    pub cash: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MainFundOrder {
    pub side: Side,
    pub size: u64,
}

impl MainFundOrder {
    pub fn buy(size: u64) -> Self {
        Self { side: Side::Buy, size }
    }

    pub fn sell(size: u64) -> Self {
        Self { side: Side::Sell, size }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodResult {
    pub period_index: u32,
    pub anchor_price: f64,
    pub fills: Vec<Fill>,
    pub closing_price: f64,
    /// Market orders released per cascade wave (trend followers plus fired
    /// stops). Only waves that traded are listed.
    pub cascade_counts: Vec<usize>,
    pub trend_orders: usize,
    pub stop_orders: usize,
    /// Cash received minus cash paid by the main fund this period.
    pub main_fund_cash_flow: f64,
    pub main_fund_shares_delta: i64,
    pub activation_realization: ActivationRealization,
}

impl PeriodResult {
    pub fn main_fund_fills(&self) -> impl Iterator<Item = &Fill> {
        self.fills
            .iter()
            .filter(|f| f.buy_owner == Owner::MainFund || f.sell_owner == Owner::MainFund)
    }

    pub fn total_cascade(&self) -> usize {
        self.cascade_counts.iter().sum()
    }
}

/// One debug line per fill.
pub fn format_fill(period: u32, fill: &Fill) -> String {
    format!(
        "fill period={} seq={} buyer={} seller={} price={:.16e} size={}",
        period, fill.seq, fill.buy_owner, fill.sell_owner, fill.price, fill.size
    )
}

/// An armed trend follower: trigger price and the key it is released by.
#[derive(Debug, Clone, Copy)]
struct Armed {
    trigger: f64,
    magnitude: f64,
    investor: u32,
}

#[derive(Debug, Clone)]
pub struct MarketState {
    pub period_index: u32,
    pub anchor_price: f64,
    book: Book,
    statuses: Vec<InvestorStatus>,
    rng: ChaCha8Rng,
    main_fund_position: i64,
    main_fund_cash: f64,
}

impl MarketState {
    pub fn last_price(&self) -> f64 {
        self.book.last_price()
    }

    pub fn book(&self) -> &Book {
        &self.book
    }

    pub fn status(&self, investor: u32) -> &InvestorStatus {
        &self.statuses[investor as usize]
    }

    pub fn statuses(&self) -> &[InvestorStatus] {
        &self.statuses
    }

    pub fn main_fund_position(&self) -> i64 {
        self.main_fund_position
    }

    pub fn main_fund_cash(&self) -> f64 {
        self.main_fund_cash
    }
}

/// Running fill-level bookkeeping for the period in progress.
#[derive(Debug, Default)]
struct PeriodLog {
    fills: Vec<Fill>,
    mf_cash: f64,
    mf_shares: i64,
}

pub struct Engine<'p> {
    population: &'p [Investor],
    config: EngineConfig,
    state: MarketState,
    entry_quotes: Vec<Order>,
    armed_up: Vec<Armed>,
    armed_down: Vec<Armed>,
    next_up: usize,
    next_down: usize,
    realization: Option<ActivationRealization>,
    log: PeriodLog,
}

impl<'p> Engine<'p> {
    pub fn new(population: &'p [Investor], config: EngineConfig, seed: u64) -> Self {
        debug_assert!(population.iter().enumerate().all(|(i, inv)| inv.id as usize == i));
        Self {
            population,
            config,
            state: MarketState {
                period_index: 0,
                anchor_price: config.initial_price,
                book: Book::new(config.initial_price),
                statuses: vec![InvestorStatus::default(); population.len()],
                rng: ChaCha8Rng::seed_from_u64(seed),
                main_fund_position: 0,
                main_fund_cash: 0.0,
            },
            entry_quotes: Vec::new(),
            armed_up: Vec::new(),
            armed_down: Vec::new(),
            next_up: 0,
            next_down: 0,
            realization: None,
            log: PeriodLog::default(),
        }
    }

    pub fn state(&self) -> &MarketState {
        &self.state
    }

    pub fn population(&self) -> &'p [Investor] {
        self.population
    }

    /// Opens the next period: re-anchors, withdraws last period's unfilled
    /// contrarian quotes, draws activation for every flat investor, quotes
    /// the activated contrarians and arms the activated trend followers.
    pub fn begin_period(&mut self) -> Result<&ActivationRealization, EngineError> {
        if self.realization.is_some() {
            return Err(EngineError::Invariant("begin_period called twice without run_period".into()));
        }
        let state = &mut self.state;
        state.period_index += 1;
        let anchor = state.book.last_price();
        state.anchor_price = anchor;

        state.book.cancel_limits(&self.entry_quotes);
        self.entry_quotes.clear();
        self.armed_up.clear();
        self.armed_down.clear();
        self.next_up = 0;
        self.next_down = 0;

        let mut realization = ActivationRealization {
            anchor_price: anchor,
            ..Default::default()
        };
        for investor in self.population {
            let status = &mut state.statuses[investor.id as usize];
            status.locked_this_period = false;
            if status.position != 0 {
                continue;
            }
            if !state.rng.random_bool(investor.p_active) {
                continue;
            }
            let r = investor.r_market;
            let level = (1.0 + r) * anchor;
            match investor.strategy_type {
                StrategyType::Contrarian => {
                    let side = if r > 0.0 { Side::Sell } else { Side::Buy };
                    let order = state
                        .book
                        .new_order(Owner::Investor(investor.id), side, OrderKind::Limit(level), 1);
                    self.entry_quotes.push(order);
                    if r > 0.0 {
                        realization.asks.push(r);
                    } else {
                        realization.bids.push(r);
                    }
                }
                StrategyType::Trend => {
                    let armed = Armed {
                        trigger: level,
                        magnitude: r.abs(),
                        investor: investor.id,
                    };
                    if r > 0.0 {
                        self.armed_up.push(armed);
                        realization.trend_up.push(r);
                    } else {
                        self.armed_down.push(armed);
                        realization.trend_down.push(r);
                    }
                }
            }
        }
        state.book.place_limits(&self.entry_quotes).map_err(crossed)?;
        let by_magnitude = |a: &Armed, b: &Armed| a.magnitude.total_cmp(&b.magnitude).then(a.investor.cmp(&b.investor));
        self.armed_up.sort_unstable_by(by_magnitude);
        self.armed_down.sort_unstable_by(by_magnitude);
        realization.asks.sort_unstable_by(f64::total_cmp);
        realization.trend_up.sort_unstable_by(f64::total_cmp);
        realization.bids.sort_unstable_by(|a, b| b.total_cmp(a));
        realization.trend_down.sort_unstable_by(|a, b| b.total_cmp(a));
        self.log = PeriodLog::default();
        Ok(self.realization.insert(realization))
    }

    /// Runs the open period to its fixpoint.
    pub fn run_period(&mut self, main_fund: Option<MainFundOrder>) -> Result<PeriodResult, EngineError> {
        let Some(realization) = self.realization.take() else {
            return Err(EngineError::Invariant("run_period called before begin_period".into()));
        };
        if let Some(order) = main_fund {
            let fills = self.state.book.execute_market(Owner::MainFund, order.side, order.size)?;
            self.settle(fills)?;
        }

        let mut cascade_counts = Vec::new();
        let mut trend_orders = 0;
        let mut stop_orders = 0;
        loop {
            if cascade_counts.len() >= self.config.wave_cap {
                return Err(EngineError::NonTermination(self.config.wave_cap));
            }
            let last = self.state.book.last_price();
            let stops = self.state.book.poll_stops();
            let up_end = self.next_up + self.armed_up[self.next_up..].partition_point(|a| a.trigger <= last);
            let down_end = self.next_down + self.armed_down[self.next_down..].partition_point(|a| a.trigger >= last);
            let triggered: Vec<(u32, Side)> = self.armed_up[self.next_up..up_end]
                .iter()
                .map(|a| (a.investor, Side::Buy))
                .chain(self.armed_down[self.next_down..down_end].iter().map(|a| (a.investor, Side::Sell)))
                .collect();
            self.next_up = up_end;
            self.next_down = down_end;
            if stops.is_empty() && triggered.is_empty() {
                break;
            }

            let mut released = 0;
            for stop in stops {
                let Owner::Investor(id) = stop.owner else {
                    return Err(EngineError::Invariant("main fund never holds stops".into()));
                };
                // a stop whose owner was already flattened this wave is stale
                let live = self.state.statuses[id as usize]
                    .sl_order
                    .is_some_and(|sl| sl.order_id == stop.order_id);
                if !live {
                    continue;
                }
                self.state.statuses[id as usize].sl_order = None;
                let fills = self.state.book.execute_market(stop.owner, stop.side, stop.size)?;
                self.settle(fills)?;
                released += 1;
                stop_orders += 1;
            }
            for (id, side) in triggered {
                let status = &self.state.statuses[id as usize];
                if status.position != 0 || status.locked_this_period {
                    continue;
                }
                let fills = self.state.book.execute_market(Owner::Investor(id), side, 1)?;
                self.settle(fills)?;
                released += 1;
                trend_orders += 1;
            }
            if released > 0 {
                cascade_counts.push(released);
            }
        }

        self.audit_fixpoint()?;
        self.audit_conservation()?;
        let log = std::mem::take(&mut self.log);
        Ok(PeriodResult {
            period_index: self.state.period_index,
            anchor_price: self.state.anchor_price,
            fills: log.fills,
            closing_price: self.state.book.last_price(),
            cascade_counts,
            trend_orders,
            stop_orders,
            main_fund_cash_flow: log.mf_cash,
            main_fund_shares_delta: log.mf_shares,
            activation_realization: realization,
        })
    }

    /// `begin_period` followed by `run_period`.
    pub fn step(&mut self, main_fund: Option<MainFundOrder>) -> Result<PeriodResult, EngineError> {
        self.begin_period()?;
        self.run_period(main_fund)
    }

    /// Places the exit orders of an investor who just opened `position` at
    /// `entry_price`. No-op for investors without exit parameters.
    pub fn place_tp_sl(&mut self, investor: u32, entry_price: f64, position: i8) -> Result<(), EngineError> {
        let inv = &self.population[investor as usize];
        let (Some(r_profit), Some(r_loss)) = (inv.r_profit, inv.r_loss) else {
            return Ok(());
        };
        let loss = r_loss.abs();
        let owner = Owner::Investor(investor);
        let book = &mut self.state.book;
        let (tp, sl) = match position {
            1 => (
                book.new_order(owner, Side::Sell, OrderKind::Limit(entry_price * (1.0 + r_profit)), 1),
                book.new_order(owner, Side::Sell, OrderKind::Stop(entry_price * (1.0 - loss)), 1),
            ),
            -1 => (
                book.new_order(owner, Side::Buy, OrderKind::Limit(entry_price * (1.0 - r_profit)), 1),
                book.new_order(owner, Side::Buy, OrderKind::Stop(entry_price * (1.0 + loss)), 1),
            ),
            other => return Err(EngineError::Invariant(format!("exit orders for position {other}"))),
        };
        book.place_limit(tp).map_err(crossed)?;
        book.place_stop(sl)?;
        let status = &mut self.state.statuses[investor as usize];
        status.tp_order = Some(tp);
        status.sl_order = Some(sl);
        Ok(())
    }

    fn settle(&mut self, fills: Vec<Fill>) -> Result<(), EngineError> {
        for fill in &fills {
            if fill.buy_owner == fill.sell_owner || fill.size == 0 || !(fill.price > 0.0 && fill.price.is_finite()) {
                return Err(EngineError::Invariant(format!("malformed fill {fill:?}")));
            }
            let notional = fill.price * fill.size as f64;
            self.apply(fill.buy_owner, fill.size as i64, -notional, fill.price)?;
            self.apply(fill.sell_owner, -(fill.size as i64), notional, fill.price)?;
        }
        self.log.fills.extend(fills);
        Ok(())
    }

    fn apply(&mut self, owner: Owner, shares: i64, cash: f64, price: f64) -> Result<(), EngineError> {
        let id = match owner {
            Owner::MainFund => {
                self.state.main_fund_position += shares;
                self.state.main_fund_cash += cash;
                self.log.mf_shares += shares;
                self.log.mf_cash += cash;
                return Ok(());
            }
            Owner::Investor(id) => id,
        };
        let status = &mut self.state.statuses[id as usize];
        let before = status.position;
        let after = i64::from(before) + shares;
        if after.abs() > 1 {
            return Err(EngineError::Invariant(format!("investor {id} would hold {after} units")));
        }
        status.position = after as i8;
        status.cash += cash;
        if before == 0 {
            if status.locked_this_period {
                return Err(EngineError::Invariant(format!("locked investor {id} opened a position")));
            }
            status.entry_price = Some(price);
            self.place_tp_sl(id, price, after as i8)?;
        } else if after == 0 {
            let tp = status.tp_order.take();
            let sl = status.sl_order.take();
            status.entry_price = None;
            status.locked_this_period = true;
            for order in tp.iter().chain(sl.iter()) {
                self.state.book.cancel(order);
            }
        }
        Ok(())
    }

    fn audit_fixpoint(&self) -> Result<(), EngineError> {
        let last = self.state.book.last_price();
        let pending_up = self.armed_up[self.next_up..].first().is_some_and(|a| a.trigger <= last);
        let pending_down = self.armed_down[self.next_down..].first().is_some_and(|a| a.trigger >= last);
        if pending_up || pending_down || self.state.book.has_triggered_stop() {
            return Err(EngineError::Invariant("period ended before its fixpoint".into()));
        }
        Ok(())
    }

    fn audit_conservation(&self) -> Result<(), EngineError> {
        let shares: i64 = self.state.statuses.iter().map(|s| i64::from(s.position)).sum::<i64>()
            + self.state.main_fund_position;
        if shares != 0 {
            return Err(EngineError::Invariant(format!("net share position is {shares}")));
        }
        Ok(())
    }

    /// Sum of all cash balances. Zero up to floating-point summation error.
    pub fn net_cash(&self) -> f64 {
        self.state.statuses.iter().map(|s| s.cash).sum::<f64>() + self.state.main_fund_cash
    }
}

fn crossed(e: BookError) -> EngineError {
    match e {
        BookError::CrossedBook { .. } => EngineError::Invariant(format!("engine sequencing: {e}")),
        other => EngineError::Book(other),
    }
}
