//! Continuous price-time priority book with limit, market and stop orders.
//!
//! Each side keeps its limits in two layers ordered by `(price, seq)`: a
//! tree for orders placed one at a time and a sorted vector for batches
//! placed together. Matching always takes the better head of the two, so
//! priority is exactly as if every order sat in one queue. Market orders
//! never rest. Stops wait in trigger-ordered queues until
//! [`Book::poll_stops`] hands them back to the caller, which executes them
//! at market.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::BookError;

pub type OrderId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Owner {
    MainFund,
    Investor(u32),
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Owner::MainFund => f.write_str("mf"),
            Owner::Investor(id) => write!(f, "{id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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

    /// +1 for buys, -1 for sells.
    pub fn sign(self) -> i64 {
        match self {
            Side::Buy => 1,
            Side::Sell => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderKind {
    Limit(f64),
    Market,
    /// Becomes a market order once the last trade reaches the trigger.
    Stop(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Order {
    pub order_id: OrderId,
    pub owner: Owner,
    pub side: Side,
    pub kind: OrderKind,
    pub size: u64,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fill {
    pub buy_owner: Owner,
    pub sell_owner: Owner,
    pub price: f64,
    pub size: u64,
    pub seq: u64,
    /// The limit order that was resting when the fill happened.
    pub resting_order_id: OrderId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Resting {
    order_id: OrderId,
    owner: Owner,
    size: u64,
}

/// Queue key whose ordering puts the best price first. Book prices are
/// positive and finite, where IEEE-754 bit patterns order like the values.
trait Priority: Ord + Copy + fmt::Debug {
    fn new(price: f64, seq: u64) -> Self;
    fn price(&self) -> f64;
    fn seq(&self) -> u64;
}

fn price_bits(price: f64) -> u64 {
    debug_assert!(price > 0.0 && price.is_finite(), "book price {price}");
    price.to_bits()
}

/// Asks: lowest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct AskKey(u64, u64);

/// Bids: highest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct BidKey(u64, u64);

impl Priority for AskKey {
    fn new(price: f64, seq: u64) -> Self {
        AskKey(price_bits(price), seq)
    }
    fn price(&self) -> f64 {
        f64::from_bits(self.0)
    }
    fn seq(&self) -> u64 {
        self.1
    }
}

impl Priority for BidKey {
    fn new(price: f64, seq: u64) -> Self {
        BidKey(!price_bits(price), seq)
    }
    fn price(&self) -> f64 {
        f64::from_bits(!self.0)
    }
    fn seq(&self) -> u64 {
        self.1
    }
}

#[derive(Debug, Clone)]
struct Ladder<K: Priority> {
    tree: BTreeMap<K, Resting>,
    /// Sorted worst-first so the head pops off the end.
    batch: Vec<(K, Resting)>,
    depth: u64,
}

enum Head {
    Tree,
    Batch,
}

impl<K: Priority> Ladder<K> {
    fn new() -> Self {
        Self {
            tree: BTreeMap::new(),
            batch: Vec::new(),
            depth: 0,
        }
    }

    fn len(&self) -> usize {
        self.tree.len() + self.batch.len()
    }

    fn head(&self) -> Option<(Head, K)> {
        match (self.tree.keys().next(), self.batch.last()) {
            (Some(&t), Some(&(b, _))) if t < b => Some((Head::Tree, t)),
            (_, Some(&(b, _))) => Some((Head::Batch, b)),
            (Some(&t), None) => Some((Head::Tree, t)),
            (None, None) => None,
        }
    }

    fn best_price(&self) -> Option<f64> {
        self.head().map(|(_, k)| k.price())
    }

    /// Every key best-first.
    fn keys(&self) -> Vec<K> {
        let mut keys: Vec<K> = self.tree.keys().copied().chain(self.batch.iter().map(|(k, _)| *k)).collect();
        keys.sort_unstable();
        keys
    }

    fn insert(&mut self, key: K, resting: Resting) {
        self.depth += resting.size;
        self.tree.insert(key, resting);
    }

    /// Queues an order in the batch layer; call [`Ladder::seal_batch`]
    /// once the batch is complete.
    fn push_batch(&mut self, key: K, resting: Resting) {
        self.depth += resting.size;
        self.batch.push((key, resting));
    }

    fn seal_batch(&mut self) {
        self.batch.sort_by_key(|entry| std::cmp::Reverse(entry.0));
    }

    fn remove(&mut self, key: &K) -> Option<Resting> {
        let resting = match self.tree.remove(key) {
            Some(r) => r,
            None => {
                let i = self.batch.binary_search_by(|(k, _)| key.cmp(k)).ok()?;
                self.batch.remove(i).1
            }
        };
        self.depth -= resting.size;
        Some(resting)
    }

    /// Removes every order whose seq is in `seqs` (sorted). Returns the
    /// units withdrawn.
    fn remove_seqs(&mut self, seqs: &[u64]) -> u64 {
        let mut removed = 0;
        let mut keep = |k: &K, r: &Resting| {
            let keep = seqs.binary_search(&k.seq()).is_err();
            if !keep {
                removed += r.size;
            }
            keep
        };
        self.batch.retain(|(k, r)| keep(k, r));
        self.tree.retain(|k, r| keep(k, r));
        self.depth -= removed;
        removed
    }

    /// Takes up to `wanted` units from the best order.
    fn take_best(&mut self, wanted: u64) -> Option<(f64, u64, Resting)> {
        let (head, key) = self.head()?;
        let slot = match head {
            Head::Tree => self.tree.get_mut(&key).expect("head key is present"),
            Head::Batch => &mut self.batch.last_mut().expect("head entry is present").1,
        };
        let take = wanted.min(slot.size);
        slot.size -= take;
        let resting = *slot;
        if resting.size == 0 {
            match head {
                Head::Tree => {
                    self.tree.remove(&key);
                }
                Head::Batch => {
                    self.batch.pop();
                }
            }
        }
        self.depth -= take;
        Some((key.price(), take, resting))
    }
}

#[derive(Debug, Clone)]
pub struct Book {
    asks: Ladder<AskKey>,
    bids: Ladder<BidKey>,
    stop_buys: BTreeMap<AskKey, Order>,
    stop_sells: BTreeMap<BidKey, Order>,
    last_price: f64,
    next_seq: u64,
    fill_seq: u64,
    scratch: Vec<u64>,
}

impl Book {
    pub fn new(initial_price: f64) -> Self {
        assert!(initial_price > 0.0 && initial_price.is_finite());
        Self {
            asks: Ladder::new(),
            bids: Ladder::new(),
            stop_buys: BTreeMap::new(),
            stop_sells: BTreeMap::new(),
            last_price: initial_price,
            next_seq: 0,
            fill_seq: 0,
            scratch: Vec::new(),
        }
    }

    /// Builds an order stamped with the next submission sequence number,
    /// which doubles as its id.
    pub fn new_order(&mut self, owner: Owner, side: Side, kind: OrderKind, size: u64) -> Order {
        self.next_seq += 1;
        Order {
            order_id: self.next_seq,
            owner,
            side,
            kind,
            size,
            seq: self.next_seq,
        }
    }

    pub fn last_price(&self) -> f64 {
        self.last_price
    }

    pub fn best_ask(&self) -> Option<f64> {
        self.asks.best_price()
    }

    pub fn best_bid(&self) -> Option<f64> {
        self.bids.best_price()
    }

    pub fn ask_depth(&self) -> u64 {
        self.asks.depth
    }

    pub fn bid_depth(&self) -> u64 {
        self.bids.depth
    }

    pub fn resting_limits(&self) -> usize {
        self.asks.len() + self.bids.len()
    }

    pub fn resting_stops(&self) -> usize {
        self.stop_buys.len() + self.stop_sells.len()
    }

    /// Asks best-first as `(price, seq)`.
    pub fn ask_queue(&self) -> Vec<(f64, u64)> {
        self.asks.keys().iter().map(|k| (k.price(), k.seq())).collect()
    }

    /// Bids best-first as `(price, seq)`.
    pub fn bid_queue(&self) -> Vec<(f64, u64)> {
        self.bids.keys().iter().map(|k| (k.price(), k.seq())).collect()
    }

    /// Stop triggers as `(buy stops ascending, sell stops descending)`.
    pub fn stop_triggers(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.stop_buys.keys().map(Priority::price).collect(),
            self.stop_sells.keys().map(Priority::price).collect(),
        )
    }

    fn limit_price(order: &Order) -> Result<f64, BookError> {
        match order.kind {
            OrderKind::Limit(price) => {
                debug_assert!(price > 0.0 && order.size > 0);
                Ok(price)
            }
            _ => Err(BookError::WrongKind(order.order_id, "limit")),
        }
    }

    fn resting(order: &Order) -> Resting {
        Resting {
            order_id: order.order_id,
            owner: order.owner,
            size: order.size,
        }
    }

    pub fn place_limit(&mut self, order: Order) -> Result<(), BookError> {
        let price = Self::limit_price(&order)?;
        let crossed = match order.side {
            Side::Sell => self.best_bid().is_some_and(|bid| bid >= price),
            Side::Buy => self.best_ask().is_some_and(|ask| ask <= price),
        };
        if crossed {
            return Err(BookError::CrossedBook { order_id: order.order_id, price });
        }
        match order.side {
            Side::Sell => self.asks.insert(AskKey::new(price, order.seq), Self::resting(&order)),
            Side::Buy => self.bids.insert(BidKey::new(price, order.seq), Self::resting(&order)),
        }
        Ok(())
    }

    /// Places a batch of limit orders at once. Equivalent to placing them one
    /// by one, except that a crossing anywhere in the batch rejects all of it.
    pub fn place_limits(&mut self, orders: &[Order]) -> Result<(), BookError> {
        let mut lowest_ask = self.best_ask();
        let mut highest_bid = self.best_bid();
        for order in orders {
            let price = Self::limit_price(order)?;
            match order.side {
                Side::Sell => lowest_ask = Some(lowest_ask.map_or(price, |a| a.min(price))),
                Side::Buy => highest_bid = Some(highest_bid.map_or(price, |b| b.max(price))),
            }
        }
        if let (Some(ask), Some(bid)) = (lowest_ask, highest_bid) {
            if bid >= ask {
                let crossing = |o: &&Order| match (o.kind, o.side) {
                    (OrderKind::Limit(p), Side::Sell) => p <= bid,
                    (OrderKind::Limit(p), Side::Buy) => p >= ask,
                    _ => false,
                };
                let culprit = orders.iter().find(crossing).unwrap_or(&orders[0]);
                let OrderKind::Limit(price) = culprit.kind else { unreachable!() };
                return Err(BookError::CrossedBook { order_id: culprit.order_id, price });
            }
        }
        for order in orders {
            let OrderKind::Limit(price) = order.kind else { unreachable!() };
            match order.side {
                Side::Sell => self.asks.push_batch(AskKey::new(price, order.seq), Self::resting(order)),
                Side::Buy => self.bids.push_batch(BidKey::new(price, order.seq), Self::resting(order)),
            }
        }
        self.asks.seal_batch();
        self.bids.seal_batch();
        Ok(())
    }

    /// Cancels every still-resting limit order in `orders` in one pass.
    /// Returns the units withdrawn.
    pub fn cancel_limits(&mut self, orders: &[Order]) -> u64 {
        let mut seqs = std::mem::take(&mut self.scratch);
        seqs.clear();
        seqs.extend(orders.iter().filter(|o| matches!(o.kind, OrderKind::Limit(_))).map(|o| o.seq));
        seqs.sort_unstable();
        let removed = self.asks.remove_seqs(&seqs) + self.bids.remove_seqs(&seqs);
        self.scratch = seqs;
        removed
    }

    pub fn place_stop(&mut self, order: Order) -> Result<(), BookError> {
        let OrderKind::Stop(trigger) = order.kind else {
            return Err(BookError::WrongKind(order.order_id, "stop"));
        };
        match order.side {
            Side::Buy => self.stop_buys.insert(AskKey::new(trigger, order.seq), order),
            Side::Sell => self.stop_sells.insert(BidKey::new(trigger, order.seq), order),
        };
        Ok(())
    }

    /// Removes a resting limit or pending stop. Returns the order with its
    /// remaining size, or `None` if it already left the book.
    pub fn cancel(&mut self, order: &Order) -> Option<Order> {
        let remaining = |r: Resting| Order { size: r.size, ..*order };
        match (order.kind, order.side) {
            (OrderKind::Limit(p), Side::Sell) => self.asks.remove(&AskKey::new(p, order.seq)).map(remaining),
            (OrderKind::Limit(p), Side::Buy) => self.bids.remove(&BidKey::new(p, order.seq)).map(remaining),
            (OrderKind::Stop(t), Side::Buy) => self.stop_buys.remove(&AskKey::new(t, order.seq)),
            (OrderKind::Stop(t), Side::Sell) => self.stop_sells.remove(&BidKey::new(t, order.seq)),
            (OrderKind::Market, _) => None,
        }
    }

    /// Executes a market order of `size` units for `owner` against the
    /// opposite side, best price first and earliest seq within a price.
    /// All-or-nothing: fails without touching the book if depth is short.
    pub fn execute_market(&mut self, owner: Owner, side: Side, size: u64) -> Result<Vec<Fill>, BookError> {
        debug_assert!(size > 0);
        let available = match side {
            Side::Buy => self.asks.depth,
            Side::Sell => self.bids.depth,
        };
        if available < size {
            return Err(BookError::BookExhausted { requested: size, available });
        }
        let mut fills = Vec::new();
        let mut remaining = size;
        while remaining > 0 {
            let (price, take, resting) = match side {
                Side::Buy => self.asks.take_best(remaining),
                Side::Sell => self.bids.take_best(remaining),
            }
            .expect("depth counter out of sync");
            remaining -= take;
            self.fill_seq += 1;
            let (buy_owner, sell_owner) = match side {
                Side::Buy => (owner, resting.owner),
                Side::Sell => (resting.owner, owner),
            };
            fills.push(Fill {
                buy_owner,
                sell_owner,
                price,
                size: take,
                seq: self.fill_seq,
                resting_order_id: resting.order_id,
            });
            self.last_price = price;
        }
        Ok(fills)
    }

    /// Removes and returns every stop whose trigger the last trade has
    /// reached (inclusive): buy stops ascending by trigger, then sell stops
    /// descending by trigger, seq breaking ties.
    pub fn poll_stops(&mut self) -> Vec<Order> {
        let last = self.last_price;
        let mut fired = Vec::new();
        while let Some(entry) = self.stop_buys.first_entry() {
            if entry.key().price() > last {
                break;
            }
            fired.push(entry.remove());
        }
        while let Some(entry) = self.stop_sells.first_entry() {
            if entry.key().price() < last {
                break;
            }
            fired.push(entry.remove());
        }
        fired
    }

    /// True when some pending stop would fire at the current last price.
    pub fn has_triggered_stop(&self) -> bool {
        let last = self.last_price;
        self.stop_buys.keys().next().is_some_and(|k| k.price() <= last)
            || self.stop_sells.keys().next().is_some_and(|k| k.price() >= last)
    }
}
