//! Main-fund plans and their return accounting.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineConfig, MainFundOrder, PeriodResult};
use crate::error::{ConfigError, EngineError, SimError, TheoryError};
use crate::orderbook::{Owner, Side};
use crate::population::Investor;
use crate::theory::{self, ActivationRealization, MultiPeriodRealization};

pub const MAX_BATCH_PERIODS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MainFundPlan {
    /// Buy `n_mf` in one order, sell it all in the next period.
    Single { n_mf: u64 },
    /// Buy `total_shares` over `d_buy` periods, then sell over `d_sell`.
    Batch { total_shares: u64, d_buy: u32, d_sell: u32 },
}

impl MainFundPlan {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match *self {
            MainFundPlan::Single { n_mf } if n_mf >= 1 => Ok(()),
            MainFundPlan::Single { .. } => Err(ConfigError::Invalid("order size must be at least 1".into())),
            MainFundPlan::Batch { total_shares, d_buy, d_sell } => {
                let periods = 1..=MAX_BATCH_PERIODS;
                if !periods.contains(&d_buy) || !periods.contains(&d_sell) {
                    return Err(ConfigError::Invalid(format!(
                        "buy/sell periods must lie in [1, {MAX_BATCH_PERIODS}], got {d_buy}/{d_sell}"
                    )));
                }
                if total_shares < u64::from(d_buy.max(d_sell)) {
                    return Err(ConfigError::Invalid(format!(
                        "{total_shares} shares cannot be spread over {} periods",
                        d_buy.max(d_sell)
                    )));
                }
                Ok(())
            }
        }
    }

    /// One main-fund market order per period, buys first.
    pub fn schedule(&self) -> Vec<MainFundOrder> {
        match *self {
            MainFundPlan::Single { n_mf } => vec![MainFundOrder::buy(n_mf), MainFundOrder::sell(n_mf)],
            MainFundPlan::Batch { total_shares, d_buy, d_sell } => split_sizes(total_shares, d_buy)
                .into_iter()
                .map(MainFundOrder::buy)
                .chain(split_sizes(total_shares, d_sell).into_iter().map(MainFundOrder::sell))
                .collect(),
        }
    }

    pub fn buy_periods(&self) -> usize {
        match *self {
            MainFundPlan::Single { .. } => 1,
            MainFundPlan::Batch { d_buy, .. } => d_buy as usize,
        }
    }
}

impl fmt::Display for MainFundPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MainFundPlan::Single { n_mf } => write!(f, "single:{n_mf}"),
            MainFundPlan::Batch { total_shares, d_buy, d_sell } => write!(f, "batch:{total_shares}:{d_buy}x{d_sell}"),
        }
    }
}

/// Equal per-period sizes with the last period absorbing the remainder.
pub fn split_sizes(total: u64, periods: u32) -> Vec<u64> {
    let periods = u64::from(periods.max(1));
    let base = total / periods;
    let mut sizes = vec![base; periods as usize];
    *sizes.last_mut().unwrap() += total - base * periods;
    sizes
}

/// A period's activation and the main fund's order size in it.
type Leg = (ActivationRealization, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyOutcome {
    pub plan: MainFundPlan,
    pub m_buy: f64,
    pub m_sell: f64,
    pub r_mf: f64,
    pub period_results: Vec<PeriodResult>,
}

impl StrategyOutcome {
    pub fn profit(&self) -> f64 {
        self.m_sell - self.m_buy
    }

    pub fn closing_prices(&self) -> Vec<f64> {
        self.period_results.iter().map(|p| p.closing_price).collect()
    }

    pub fn total_cascade(&self) -> usize {
        self.period_results.iter().map(PeriodResult::total_cascade).sum()
    }

    fn legs(&self) -> (Vec<Leg>, Vec<Leg>) {
        let schedule = self.plan.schedule();
        let mut buys = Vec::new();
        let mut sells = Vec::new();
        for (order, period) in schedule.iter().zip(&self.period_results) {
            let leg = (period.activation_realization.clone(), order.size as usize);
            match order.side {
                Side::Buy => buys.push(leg),
                Side::Sell => sells.push(leg),
            }
        }
        (buys, sells)
    }

    /// The recorded activations in the shape the closed form consumes.
    pub fn multi_realization(&self) -> Result<MultiPeriodRealization, TheoryError> {
        let (buys, sells) = self.legs();
        MultiPeriodRealization::from_periods(&buys, &sells)
    }

    /// Closed-form values for this run's recorded activations. Meaningful
    /// when small investors do not take profit or stop loss.
    pub fn oracle(&self) -> Result<OracleReport, TheoryError> {
        let multi = self.multi_realization()?;
        let (m_buy, m_sell) = (theory::multi_cost(&multi)?, theory::multi_proceeds(&multi)?);
        let r_mf = match self.plan {
            MainFundPlan::Single { n_mf } => theory::single_return(
                &self.period_results[0].activation_realization,
                &self.period_results[1].activation_realization,
                n_mf as usize,
            )?,
            MainFundPlan::Batch { .. } => theory::multi_return(&multi, false)?,
        };
        Ok(OracleReport {
            m_buy,
            m_sell,
            r_mf,
            r_mf_approx: theory::multi_return(&multi, true)?,
        })
    }
}

/// Closed-form counterpart of a [`StrategyOutcome`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReport {
    pub m_buy: f64,
    pub m_sell: f64,
    pub r_mf: f64,
    /// First-order approximation of the return.
    pub r_mf_approx: f64,
}

impl OracleReport {
    /// Largest relative disagreement with a simulated outcome over
    /// `(m_buy, m_sell, r_mf)`.
    pub fn max_relative_error(&self, outcome: &StrategyOutcome) -> f64 {
        [
            relative_error(outcome.m_buy, self.m_buy),
            relative_error(outcome.m_sell, self.m_sell),
            return_error(outcome.r_mf, self.r_mf),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Error between two returns measured on the gross scale `1 + r`. A plain
/// relative error is meaningless for returns near zero, where one ulp of
/// `m_sell / m_buy` already dominates.
pub fn return_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Runs `plan` on a fresh market over `population`.
pub fn run_plan(
    population: &[Investor],
    plan: MainFundPlan,
    seed: u64,
    config: EngineConfig,
) -> Result<StrategyOutcome, SimError> {
    plan.validate()?;
    let mut engine = Engine::new(population, config, seed);
    let mut period_results = Vec::new();
    let mut m_buy = 0.0;
    let mut m_sell = 0.0;
    for order in plan.schedule() {
        let result = engine.step(Some(order))?;
        for fill in result.main_fund_fills() {
            let notional = fill.price * fill.size as f64;
            if fill.buy_owner == Owner::MainFund {
                m_buy += notional;
            } else {
                m_sell += notional;
            }
        }
        period_results.push(result);
    }
    if engine.state().main_fund_position() != 0 {
        return Err(EngineError::Invariant(format!(
            "main fund finished holding {} units",
            engine.state().main_fund_position()
        ))
        .into());
    }
    Ok(StrategyOutcome {
        plan,
        m_buy,
        m_sell,
        r_mf: m_sell / m_buy - 1.0,
        period_results,
    })
}

pub fn run_single_strategy(
    population: &[Investor],
    n_mf: u64,
    seed: u64,
    config: EngineConfig,
) -> Result<StrategyOutcome, SimError> {
    run_plan(population, MainFundPlan::Single { n_mf }, seed, config)
}

pub fn run_batch_strategy(
    population: &[Investor],
    total_shares: u64,
    d_buy: u32,
    d_sell: u32,
    seed: u64,
    config: EngineConfig,
) -> Result<StrategyOutcome, SimError> {
    run_plan(population, MainFundPlan::Batch { total_shares, d_buy, d_sell }, seed, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{build_population, PopulationConfig, StrategyType};

    fn contrarians(rates: &[f64]) -> Vec<Investor> {
        rates
            .iter()
            .enumerate()
            .map(|(i, &r)| Investor {
                id: i as u32,
                strategy_type: StrategyType::Contrarian,
                r_market: r,
                r_profit: None,
                r_loss: None,
                p_active: 1.0,
            })
            .collect()
    }

    #[test]
    fn symmetric_single_level_loses_the_spread() {
        let pop = contrarians(&[0.05, -0.05]);
        let out = run_single_strategy(&pop, 1, 1, EngineConfig::default()).unwrap();
        assert!((out.r_mf - -0.05).abs() < 1e-12);
    }

    #[test]
    fn two_unit_ladder_without_followers() {
        let pop = contrarians(&[0.01, 0.02, -0.01, -0.02]);
        let out = run_single_strategy(&pop, 2, 1, EngineConfig::default()).unwrap();
        let expected = 1.02 * (1.0 - 0.015) / (1.0 + 0.015) - 1.0;
        assert!((out.r_mf - expected).abs() < 1e-12);
        assert!((out.r_mf - -0.010148).abs() < 5e-7);
        assert_eq!(out.closing_prices().len(), 2);
    }

    #[test]
    fn remainder_goes_to_the_last_period() {
        assert_eq!(split_sizes(2000, 3), vec![666, 666, 668]);
        assert_eq!(split_sizes(2000, 3).iter().sum::<u64>(), 2000);
        assert_eq!(split_sizes(2000, 5), vec![400; 5]);
        assert_eq!(split_sizes(7, 1), vec![7]);
    }

    #[test]
    fn plan_validation() {
        assert!(MainFundPlan::Single { n_mf: 0 }.validate().is_err());
        assert!(MainFundPlan::Batch { total_shares: 2000, d_buy: 6, d_sell: 1 }.validate().is_err());
        assert!(MainFundPlan::Batch { total_shares: 2000, d_buy: 1, d_sell: 0 }.validate().is_err());
        assert!(MainFundPlan::Batch { total_shares: 4, d_buy: 5, d_sell: 1 }.validate().is_err());
        assert!(MainFundPlan::Batch { total_shares: 5, d_buy: 5, d_sell: 5 }.validate().is_ok());
    }

    #[test]
    fn one_by_one_batch_equals_single() {
        let pop = build_population(&PopulationConfig { seed: 5, ..Default::default() }).unwrap();
        let single = run_single_strategy(&pop, 800, 17, EngineConfig::default()).unwrap();
        let batch = run_batch_strategy(&pop, 800, 1, 1, 17, EngineConfig::default()).unwrap();
        assert_eq!(single.m_buy, batch.m_buy);
        assert_eq!(single.m_sell, batch.m_sell);
        assert_eq!(single.r_mf, batch.r_mf);
    }

    #[test]
    fn exhausted_book_is_reported() {
        let pop = contrarians(&[0.01, -0.01]);
        let err = run_single_strategy(&pop, 2, 1, EngineConfig::default()).unwrap_err();
        assert!(err.is_book_exhausted());
    }
}
