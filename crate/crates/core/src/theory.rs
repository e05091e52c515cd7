//! Closed-form accounting over a realized activation.
//!
//! Given which small investors were active in a period (their `r_market`
//! values, sorted), the main fund's cost, the trend cascade, the closing
//! price and the resulting rate of return follow without simulating the
//! book. The engine records an [`ActivationRealization`] per period so the
//! two routes can be compared run by run.
//!
//! Ladder prices are computed as `(1.0 + r) * anchor`, the same expression
//! the engine uses to quote, so equal rates give bit-identical prices.

use crate::error::TheoryError;

/// Activated small investors of one period, as rates relative to the
/// period's anchor price.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActivationRealization {
    /// Contrarian asks, ascending (`r_1^{C+} <= r_2^{C+} <= ...`).
    pub asks: Vec<f64>,
    /// Contrarian bids, negative, ascending in magnitude.
    pub bids: Vec<f64>,
    /// Armed rise-triggered trend followers, ascending.
    pub trend_up: Vec<f64>,
    /// Armed fall-triggered trend followers, negative, ascending in magnitude.
    pub trend_down: Vec<f64>,
    pub anchor_price: f64,
}

impl ActivationRealization {
    pub fn validate(&self) -> Result<(), TheoryError> {
        let bad = |m: &str| Err(TheoryError::InvalidRealization(m.to_string()));
        if !(self.anchor_price.is_finite() && self.anchor_price > 0.0) {
            return bad("anchor price must be positive");
        }
        let positive = |v: &[f64]| v.iter().all(|r| r.is_finite() && *r > 0.0);
        let negative = |v: &[f64]| v.iter().all(|r| r.is_finite() && *r < 0.0 && r.is_sign_negative());
        if !positive(&self.asks) || !positive(&self.trend_up) {
            return bad("asks and trend_up must be finite and strictly positive");
        }
        if !negative(&self.bids) || !negative(&self.trend_down) {
            return bad("bids and trend_down must be finite and strictly negative");
        }
        let ascending = |v: &[f64]| v.windows(2).all(|w| w[0] <= w[1]);
        let descending = |v: &[f64]| v.windows(2).all(|w| w[0] >= w[1]);
        if !ascending(&self.asks) || !ascending(&self.trend_up) {
            return bad("asks and trend_up must be sorted ascending");
        }
        if !descending(&self.bids) || !descending(&self.trend_down) {
            return bad("bids and trend_down must be sorted by ascending magnitude");
        }
        Ok(())
    }

    /// Price of the `i`-th ask (0-based).
    pub fn ask_price(&self, i: usize) -> f64 {
        (1.0 + self.asks[i]) * self.anchor_price
    }
}

fn depth(needed: usize, available: usize) -> Result<(), TheoryError> {
    if needed > available {
        Err(TheoryError::InsufficientDepth { needed, available })
    } else {
        Ok(())
    }
}

/// Total paid for `n_mf` units bought at market:
/// `sum_{i<=n_mf} (1 + r_i^{C+}) * anchor`.
pub fn cost_of_buy(realization: &ActivationRealization, n_mf: usize) -> Result<f64, TheoryError> {
    depth(n_mf, realization.asks.len())?;
    Ok(ladder_sum(&realization.asks[..n_mf], realization.anchor_price))
}

/// Total received for `n_mf` units sold at market into bids quoted around
/// `p1`: `sum_{i<=n_mf} (1 + r_i^{C-}) * p1`.
pub fn proceeds_of_sell(realization: &ActivationRealization, n_mf: usize, p1: f64) -> Result<f64, TheoryError> {
    depth(n_mf, realization.bids.len())?;
    Ok(ladder_sum(&realization.bids[..n_mf], p1))
}

fn ladder_sum(rates: &[f64], anchor: f64) -> f64 {
    rates.iter().map(|r| (1.0 + r) * anchor).sum()
}

/// Trend-cascade waves after the main fund consumes `n_mf` ladder entries.
///
/// Wave `i` counts the not-yet-triggered followers whose trigger is reached
/// by the ladder entry at position `n_mf + (sum of earlier waves)`. `reached`
/// decides whether a trigger rate is reached by a ladder rate. Both lists
/// are sorted so that triggered followers always form a prefix.
fn cascade(
    ladder: &[f64],
    triggers: &[f64],
    n_mf: usize,
    reached: impl Fn(f64, f64) -> bool,
) -> Result<(Vec<usize>, usize), TheoryError> {
    depth(n_mf, ladder.len())?;
    let mut waves = Vec::new();
    let mut total = 0usize;
    if n_mf == 0 {
        return Ok((waves, total));
    }
    loop {
        let index = n_mf + total;
        let threshold = ladder[index - 1];
        let fresh = triggers[total..].partition_point(|&t| reached(t, threshold));
        if fresh == 0 {
            break;
        }
        total += fresh;
        waves.push(fresh);
        depth(n_mf + total, ladder.len())?;
    }
    Ok((waves, total))
}

/// Buy-side cascade: returns the wave counts `N_t^1, N_t^2, ...` and their
/// sum `N_t^X`.
pub fn cascade_counts(realization: &ActivationRealization, n_mf: usize) -> Result<(Vec<usize>, usize), TheoryError> {
    cascade(&realization.asks, &realization.trend_up, n_mf, |t, c| t <= c)
}

/// Sell-side cascade (`N_t^Y`), the mirror image over bids and
/// fall-triggered followers.
pub fn cascade_counts_sell(realization: &ActivationRealization, n_mf: usize) -> Result<(Vec<usize>, usize), TheoryError> {
    cascade(&realization.bids, &realization.trend_down, n_mf, |t, c| t >= c)
}

/// Rate of the last ask consumed in a buy period, `r^{C+}_{n_mf + N_t^X}`.
pub fn closing_rate_buy(realization: &ActivationRealization, n_mf: usize) -> Result<f64, TheoryError> {
    let (_, total) = cascade_counts(realization, n_mf)?;
    Ok(if n_mf == 0 { 0.0 } else { realization.asks[n_mf + total - 1] })
}

/// Rate of the last bid consumed in a sell period, `r^{C-}_{n_mf + N_t^Y}`.
pub fn closing_rate_sell(realization: &ActivationRealization, n_mf: usize) -> Result<f64, TheoryError> {
    let (_, total) = cascade_counts_sell(realization, n_mf)?;
    Ok(if n_mf == 0 { 0.0 } else { realization.bids[n_mf + total - 1] })
}

/// Everything the closed form says about a one-buy, one-sell plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleTheory {
    pub m_buy: f64,
    pub m_sell: f64,
    /// Closing price of the buy period, `P(1)`.
    pub p1: f64,
    pub waves: Vec<usize>,
    /// `m_sell / m_buy - 1`.
    pub r_mf_accounting: f64,
    /// The factored form `(1 + r_top) (1 + mean r^-) / (1 + mean r^+) - 1`.
    pub r_mf: f64,
}

pub fn single_outcome(
    buy: &ActivationRealization,
    sell: &ActivationRealization,
    n_mf: usize,
) -> Result<SingleTheory, TheoryError> {
    if n_mf == 0 {
        return Err(TheoryError::InvalidRealization("order size must be positive".into()));
    }
    let (waves, total) = cascade_counts(buy, n_mf)?;
    let top = buy.asks[n_mf + total - 1];
    let p1 = (1.0 + top) * buy.anchor_price;
    let m_buy = cost_of_buy(buy, n_mf)?;
    let m_sell = proceeds_of_sell(sell, n_mf, p1)?;
    let n = n_mf as f64;
    let mean_ask = buy.asks[..n_mf].iter().sum::<f64>() / n;
    let mean_bid = sell.bids[..n_mf].iter().sum::<f64>() / n;
    Ok(SingleTheory {
        m_buy,
        m_sell,
        p1,
        waves,
        r_mf_accounting: m_sell / m_buy - 1.0,
        r_mf: (1.0 + top) * (1.0 + mean_bid) / (1.0 + mean_ask) - 1.0,
    })
}

/// Return of buying `n_mf` in one period and selling it in the next.
pub fn single_return(buy: &ActivationRealization, sell: &ActivationRealization, n_mf: usize) -> Result<f64, TheoryError> {
    single_outcome(buy, sell, n_mf).map(|s| s.r_mf)
}

/// One period of a batched plan: the activated ladder on the main fund's
/// side (asks for buys, bids for sells) and the size it trades.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodLeg {
    pub ladder: Vec<f64>,
    pub size: usize,
}

impl PeriodLeg {
    fn mean_rate(&self) -> f64 {
        self.ladder[..self.size].iter().sum::<f64>() / self.size as f64
    }
}

/// A batched plan over `D_buy` buy periods and `D_sell` sell periods.
///
/// `f_buy[k-1]` is `f_b(k)`, the closing rate of buy period `k` relative to
/// its anchor; `f_sell` likewise. `f_b(0) = f_s(0) = 0` is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPeriodRealization {
    pub initial_price: f64,
    pub buys: Vec<PeriodLeg>,
    pub sells: Vec<PeriodLeg>,
    pub f_buy: Vec<f64>,
    pub f_sell: Vec<f64>,
}

impl MultiPeriodRealization {
    /// Derives the per-period closing rates from each period's activation
    /// through the cascade recursion.
    pub fn from_periods(
        buys: &[(ActivationRealization, usize)],
        sells: &[(ActivationRealization, usize)],
    ) -> Result<Self, TheoryError> {
        let initial_price = buys
            .first()
            .map(|(r, _)| r.anchor_price)
            .ok_or_else(|| TheoryError::InvalidRealization("no buy periods".into()))?;
        let mut f_buy = Vec::with_capacity(buys.len());
        for (r, n) in buys {
            r.validate()?;
            f_buy.push(closing_rate_buy(r, *n)?);
        }
        let mut f_sell = Vec::with_capacity(sells.len());
        for (r, n) in sells {
            r.validate()?;
            f_sell.push(closing_rate_sell(r, *n)?);
        }
        let legs = |v: &[(ActivationRealization, usize)], bids: bool| {
            v.iter()
                .map(|(r, n)| PeriodLeg {
                    ladder: if bids { r.bids.clone() } else { r.asks.clone() },
                    size: *n,
                })
                .collect()
        };
        Ok(Self {
            initial_price,
            buys: legs(buys, false),
            sells: legs(sells, true),
            f_buy,
            f_sell,
        })
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        if self.buys.len() != self.f_buy.len() || self.sells.len() != self.f_sell.len() {
            return Err(TheoryError::InvalidRealization(
                "one closing rate per period is required".into(),
            ));
        }
        if self.buys.is_empty() || self.sells.is_empty() {
            return Err(TheoryError::InvalidRealization("needs buy and sell periods".into()));
        }
        for leg in self.buys.iter().chain(&self.sells) {
            if leg.size == 0 {
                return Err(TheoryError::InvalidRealization("period sizes must be positive".into()));
            }
            depth(leg.size, leg.ladder.len())?;
        }
        Ok(())
    }

    /// Every rate (ladders and closing rates) multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let scale_legs = |legs: &[PeriodLeg]| {
            legs.iter()
                .map(|l| PeriodLeg {
                    ladder: l.ladder.iter().map(|r| r * factor).collect(),
                    size: l.size,
                })
                .collect()
        };
        Self {
            initial_price: self.initial_price,
            buys: scale_legs(&self.buys),
            sells: scale_legs(&self.sells),
            f_buy: self.f_buy.iter().map(|f| f * factor).collect(),
            f_sell: self.f_sell.iter().map(|f| f * factor).collect(),
        }
    }

    /// Price at which the sell periods start, `P_0^s`.
    pub fn sell_start_price(&self) -> f64 {
        self.f_buy
            .iter()
            .fold(self.initial_price, |anchor, f| (1.0 + f) * anchor)
    }
}

/// Sum over periods of each period's ladder cost, every period quoted
/// against the previous period's close.
fn multi_ladder_total(legs: &[PeriodLeg], closes: &[f64], start: f64) -> f64 {
    let mut anchor = start;
    let mut total = 0.0;
    for (j, leg) in legs.iter().enumerate() {
        if j > 0 {
            anchor *= 1.0 + closes[j - 1];
        }
        total += ladder_sum(&leg.ladder[..leg.size], anchor);
    }
    total
}

/// Total cost of the buy periods, `M^D_buy`.
pub fn multi_cost(realization: &MultiPeriodRealization) -> Result<f64, TheoryError> {
    realization.validate()?;
    Ok(multi_ladder_total(&realization.buys, &realization.f_buy, realization.initial_price))
}

/// Total proceeds of the sell periods, `M^D_sell`.
pub fn multi_proceeds(realization: &MultiPeriodRealization) -> Result<f64, TheoryError> {
    realization.validate()?;
    Ok(multi_ladder_total(
        &realization.sells,
        &realization.f_sell,
        realization.sell_start_price(),
    ))
}

/// Rate of return of a batched plan. `approximate = false` gives the exact
/// `M^D_sell / M^D_buy - 1`; `approximate = true` keeps only first-order
/// terms in the ladder rates inside the two averages:
///
/// `[1 + sum_j f_b(j)] * (1 + avg_j[mean r^-(j) + sum_{k<j} f_s(k)])
///                     / (1 + avg_j[mean r^+(j) + sum_{k<j} f_b(k)]) - 1`
///
/// where `avg_j` weights period `j` by its share of the total size, which
/// is the plain average over periods when all periods trade equal sizes.
pub fn multi_return(realization: &MultiPeriodRealization, approximate: bool) -> Result<f64, TheoryError> {
    if !approximate {
        return Ok(multi_proceeds(realization)? / multi_cost(realization)? - 1.0);
    }
    realization.validate()?;
    let averaged = |legs: &[PeriodLeg], closes: &[f64]| {
        let total: usize = legs.iter().map(|l| l.size).sum();
        let mut carried = 0.0;
        let mut acc = 0.0;
        for (j, leg) in legs.iter().enumerate() {
            if j > 0 {
                carried += closes[j - 1];
            }
            acc += leg.size as f64 / total as f64 * (leg.mean_rate() + carried);
        }
        acc
    };
    let lead = 1.0 + realization.f_buy.iter().sum::<f64>();
    let num = 1.0 + averaged(&realization.sells, &realization.f_sell);
    let den = 1.0 + averaged(&realization.buys, &realization.f_buy);
    Ok(lead * num / den - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
    }

    fn buy_side(asks: &[f64], trend_up: &[f64], anchor: f64) -> ActivationRealization {
        ActivationRealization {
            asks: asks.to_vec(),
            trend_up: trend_up.to_vec(),
            anchor_price: anchor,
            ..Default::default()
        }
    }

    fn sell_side(bids: &[f64], anchor: f64) -> ActivationRealization {
        ActivationRealization {
            bids: bids.to_vec(),
            anchor_price: anchor,
            ..Default::default()
        }
    }

    #[test]
    fn cost_examples() {
        assert_eq!(cost_of_buy(&buy_side(&[0.01, 0.02], &[], 100.0), 2).unwrap(), 203.0);
        let identity = ActivationRealization { asks: vec![0.0], anchor_price: 42.5, ..Default::default() };
        assert_eq!(cost_of_buy(&identity, 1).unwrap(), 42.5);
        assert_eq!(
            cost_of_buy(&buy_side(&[0.01, 0.02], &[], 100.0), 3),
            Err(TheoryError::InsufficientDepth { needed: 3, available: 2 })
        );
    }

    #[test]
    fn cascade_examples() {
        let r = buy_side(&[0.005, 0.01, 0.015, 0.02, 0.025], &[0.01, 0.015, 0.03], 100.0);
        assert_eq!(cascade_counts(&r, 2).unwrap(), (vec![1, 1], 2));
        assert_eq!(closing_rate_buy(&r, 2).unwrap(), 0.02);
        let none = buy_side(&[0.005, 0.01], &[], 100.0);
        assert_eq!(cascade_counts(&none, 2).unwrap(), (vec![], 0));
        let far = buy_side(&[0.05, 0.1], &[0.5], 100.0);
        assert_eq!(cascade_counts(&far, 2).unwrap(), (vec![], 0));
    }

    #[test]
    fn cascade_running_off_the_ladder_is_insufficient_depth() {
        let r = buy_side(&[0.01, 0.02], &[0.005, 0.01, 0.02], 100.0);
        assert!(matches!(cascade_counts(&r, 1), Err(TheoryError::InsufficientDepth { .. })));
    }

    #[test]
    fn sell_cascade_mirrors_buy_cascade() {
        let up = buy_side(&[0.005, 0.01, 0.015, 0.02, 0.025], &[0.01, 0.015, 0.03], 100.0);
        let down = ActivationRealization {
            bids: up.asks.iter().map(|r| -r).collect(),
            trend_down: up.trend_up.iter().map(|r| -r).collect(),
            anchor_price: 100.0,
            ..Default::default()
        };
        down.validate().unwrap();
        assert_eq!(cascade_counts_sell(&down, 2).unwrap(), (vec![1, 1], 2));
        assert_eq!(closing_rate_sell(&down, 2).unwrap(), -0.02);
    }

    #[test]
    fn proceeds_examples() {
        let r = sell_side(&[-0.01, -0.02], 102.0);
        assert!(close(proceeds_of_sell(&r, 2, 102.0).unwrap(), 200.94, 1e-14));
        let p = 87.0;
        assert!(close(proceeds_of_sell(&sell_side(&[-0.1], p), 1, p).unwrap(), 0.9 * p, 1e-15));
        let zero = sell_side(&[-0.0], 100.0);
        assert!(zero.validate().is_err());
    }

    #[test]
    fn single_return_examples() {
        let buy = buy_side(&[0.01, 0.02], &[], 100.0);
        let sell = sell_side(&[-0.01, -0.02], 102.0);
        let expected = 1.02 * (1.0 - 0.015) / (1.0 + 0.015) - 1.0;
        assert!(close(single_return(&buy, &sell, 2).unwrap(), expected, 1e-14));
        assert!((expected - -0.010148).abs() < 5e-7);

        for r in [0.01, 0.05, 0.1] {
            let buy = buy_side(&[r], &[], 100.0);
            let sell = sell_side(&[-r], (1.0 + r) * 100.0);
            assert!(close(single_return(&buy, &sell, 1).unwrap(), -r, 1e-12));
        }
    }

    #[test]
    fn single_return_with_cascade_matches_fill_by_fill_cash() {
        let buy = buy_side(&[0.005, 0.01, 0.015, 0.02, 0.025], &[0.01, 0.015, 0.03], 100.0);
        let sell = sell_side(&[-0.005, -0.01, -0.015], 102.0);
        // independent cash accounting: main fund pays the first two asks,
        // the cascade lifts the price to the fourth ask, then the main fund
        // sells into the first two bids quoted off that close.
        let paid = 100.5 + 101.0;
        let close_price = 102.0;
        let received = close_price * 0.995 + close_price * 0.99;
        let by_cash = received / paid - 1.0;
        let theory = single_outcome(&buy, &sell, 2).unwrap();
        assert_eq!(theory.waves, vec![1, 1]);
        assert!(close(theory.p1, close_price, 1e-15));
        assert!(close(theory.r_mf, by_cash, 1e-12));
        assert!(close(theory.r_mf_accounting, by_cash, 1e-12));
    }

    fn uniform_multi(rates_b: &[f64], rates_s: &[f64], f_b: &[f64], f_s: &[f64], n: usize, p0: f64) -> MultiPeriodRealization {
        MultiPeriodRealization {
            initial_price: p0,
            buys: f_b.iter().map(|_| PeriodLeg { ladder: rates_b.to_vec(), size: n }).collect(),
            sells: f_s.iter().map(|_| PeriodLeg { ladder: rates_s.to_vec(), size: n }).collect(),
            f_buy: f_b.to_vec(),
            f_sell: f_s.to_vec(),
        }
    }

    #[test]
    fn multi_cost_examples() {
        let m = uniform_multi(&[0.01], &[-0.01], &[0.02, 0.0], &[0.0], 1, 100.0);
        assert!(close(multi_cost(&m).unwrap(), 204.02, 1e-14));
        let flat = uniform_multi(&[0.0; 3], &[-0.01; 3], &[0.0, 0.0], &[0.0], 3, 50.0);
        assert_eq!(multi_cost(&flat).unwrap(), 2.0 * 3.0 * 50.0);
    }

    #[test]
    fn multi_proceeds_examples() {
        let m = uniform_multi(&[0.01], &[-0.01], &[0.0], &[0.0, 0.0], 1, 100.0);
        assert!(close(multi_proceeds(&m).unwrap(), 198.0, 1e-14));
        let m = uniform_multi(&[0.01], &[-0.01], &[0.02, 0.03], &[0.0], 1, 100.0);
        assert!(close(m.sell_start_price(), 1.02 * 1.03 * 100.0, 1e-15));
    }

    #[test]
    fn multi_reduces_to_single_period() {
        let buy = buy_side(&[0.005, 0.01, 0.015, 0.02, 0.025], &[0.01, 0.015, 0.03], 100.0);
        let p1 = (1.0 + 0.02) * 100.0;
        let sell = ActivationRealization {
            bids: vec![-0.005, -0.01, -0.02],
            trend_down: vec![-0.03],
            anchor_price: p1,
            ..Default::default()
        };
        let multi = MultiPeriodRealization::from_periods(&[(buy.clone(), 2)], &[(sell.clone(), 2)]).unwrap();
        assert_eq!(multi_cost(&multi).unwrap(), cost_of_buy(&buy, 2).unwrap());
        assert_eq!(multi_proceeds(&multi).unwrap(), proceeds_of_sell(&sell, 2, p1).unwrap());
        let single = single_outcome(&buy, &sell, 2).unwrap();
        assert_eq!(multi_return(&multi, false).unwrap(), single.r_mf_accounting);
        assert!(close(multi_return(&multi, true).unwrap(), single.r_mf, 1e-14));
    }

    #[test]
    fn zero_rates_give_zero_return() {
        let m = uniform_multi(&[0.0; 4], &[-0.0; 4], &[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0], 4, 100.0);
        assert_eq!(multi_return(&m, false).unwrap(), 0.0);
        assert_eq!(multi_return(&m, true).unwrap(), 0.0);
    }

    #[test]
    fn multi_depth_is_checked() {
        let m = uniform_multi(&[0.01], &[-0.01], &[0.0], &[0.0], 2, 100.0);
        assert!(matches!(multi_cost(&m), Err(TheoryError::InsufficientDepth { .. })));
    }
}
