//! Small-investor population.
//!
//! A population is a flat list of [`Investor`]s built from tiers. Each tier
//! holds contrarians and trend followers whose `r_market` is drawn from the
//! same normal distribution. Investors are emitted contrarians first (all
//! tiers, in tier order) and then trend followers, so contrarian draws do not
//! depend on the trend multiplier.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::seed::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierSpec {
    pub mean_r_market: f64,
    pub sigma_r_market: f64,
    pub contrarian_count: u32,
    /// Multiplied by the population ratio to get the trend count.
    pub trend_count_base: u32,
    pub p_active: f64,
}

impl TierSpec {
    pub const fn new(mean: f64, sigma: f64, contrarians: u32, trend_base: u32, p_active: f64) -> Self {
        Self {
            mean_r_market: mean,
            sigma_r_market: sigma,
            contrarian_count: contrarians,
            trend_count_base: trend_base,
            p_active,
        }
    }

    pub fn trend_count(&self, ratio: f64) -> u32 {
        (f64::from(self.trend_count_base) * ratio).round_ties_even() as u32
    }

    fn validate(&self, index: usize) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(format!("tier {index}: {msg}")));
        if !self.mean_r_market.is_finite() || !self.sigma_r_market.is_finite() {
            return bad("r_market parameters must be finite");
        }
        if self.sigma_r_market < 0.0 {
            return bad("sigma_r_market must be nonnegative");
        }
        if self.sigma_r_market == 0.0 && self.mean_r_market == 0.0 {
            return bad("a degenerate tier at r_market = 0 has no side");
        }
        if self.mean_r_market <= -1.0 {
            return bad("mean_r_market must be above -1");
        }
        if !(0.0..=1.0).contains(&self.p_active) {
            return bad("p_active must lie in [0, 1]");
        }
        Ok(())
    }
}

/// The tiers of the reference investor structure: a wall of 20000
/// contrarians at each of +/-0.1 and three normally spread tiers per side
/// with 2000 contrarians and `2000 * ratio` trend followers each.
pub fn default_tiers() -> Vec<TierSpec> {
    vec![
        TierSpec::new(0.10, 0.0, 20_000, 0, 0.5),
        TierSpec::new(0.08, 0.04, 2_000, 2_000, 0.5),
        TierSpec::new(0.04, 0.02, 2_000, 2_000, 0.5),
        TierSpec::new(0.02, 0.01, 2_000, 2_000, 0.5),
        TierSpec::new(-0.02, 0.01, 2_000, 2_000, 0.5),
        TierSpec::new(-0.04, 0.02, 2_000, 2_000, 0.5),
        TierSpec::new(-0.08, 0.04, 2_000, 2_000, 0.5),
        TierSpec::new(-0.10, 0.0, 20_000, 0, 0.5),
    ]
}

/// How take-profit and stop-loss rates are assigned.
///
/// All bounds are absolute rates: `r_profit` is returned positive and
/// `r_loss` negative.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TpSlRegime {
    /// Investors never take profit or stop loss.
    #[default]
    None,
    /// `r_profit = |r_loss| ~ U(lo, hi)`.
    Equal { lo: f64, hi: f64 },
    /// `|r_loss| ~ U(lo, hi)`, then `r_profit ~ U(|r_loss|, hi)`.
    ProfitGreater { lo: f64, hi: f64 },
    /// `r_profit ~ U(lo, hi)`, then `|r_loss| ~ U(r_profit, hi)`.
    LossGreater { lo: f64, hi: f64 },
    /// Separate regimes for contrarians and trend followers.
    PerClass {
        contrarian: Box<TpSlRegime>,
        trend: Box<TpSlRegime>,
    },
}

impl TpSlRegime {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            TpSlRegime::None => Ok(()),
            TpSlRegime::Equal { lo, hi }
            | TpSlRegime::ProfitGreater { lo, hi }
            | TpSlRegime::LossGreater { lo, hi } => {
                if lo.is_finite() && hi.is_finite() && 0.0 < *lo && lo < hi && *hi < 1.0 {
                    Ok(())
                } else {
                    Err(ConfigError::Invalid(format!(
                        "tp/sl bounds must satisfy 0 < lo < hi < 1, got lo={lo}, hi={hi}"
                    )))
                }
            }
            TpSlRegime::PerClass { contrarian, trend } => {
                for sub in [contrarian.as_ref(), trend.as_ref()] {
                    if matches!(sub, TpSlRegime::PerClass { .. }) {
                        return Err(ConfigError::Invalid("per-class regimes cannot nest".into()));
                    }
                    sub.validate()?;
                }
                Ok(())
            }
        }
    }

    /// The regime that applies to one strategy class.
    pub fn for_class(&self, class: StrategyType) -> &TpSlRegime {
        match (self, class) {
            (TpSlRegime::PerClass { contrarian, .. }, StrategyType::Contrarian) => contrarian,
            (TpSlRegime::PerClass { trend, .. }, StrategyType::Trend) => trend,
            (other, _) => other,
        }
    }

    /// Short stable label used in CSV output.
    pub fn label(&self) -> String {
        match self {
            TpSlRegime::None => "none".into(),
            TpSlRegime::Equal { lo, hi } => format!("equal({lo},{hi})"),
            TpSlRegime::ProfitGreater { lo, hi } => format!("profit-greater({lo},{hi})"),
            TpSlRegime::LossGreater { lo, hi } => format!("loss-greater({lo},{hi})"),
            TpSlRegime::PerClass { contrarian, trend } => {
                format!("contrarian:{}/trend:{}", contrarian.label(), trend.label())
            }
        }
    }
}

/// Draws `(r_profit, r_loss)` for one investor. Must be given a non
/// per-class regime; see [`TpSlRegime::for_class`].
pub fn sample_tp_sl<R: Rng + ?Sized>(regime: &TpSlRegime, rng: &mut R) -> (Option<f64>, Option<f64>) {
    match *regime {
        TpSlRegime::None => (None, None),
        TpSlRegime::Equal { lo, hi } => {
            let d = rng.random_range(lo..hi);
            (Some(d), Some(-d))
        }
        TpSlRegime::ProfitGreater { lo, hi } => {
            let loss = rng.random_range(lo..hi);
            let profit = rng.random_range(loss..hi);
            (Some(profit), Some(-loss))
        }
        TpSlRegime::LossGreater { lo, hi } => {
            let profit = rng.random_range(lo..hi);
            let loss = rng.random_range(profit..hi);
            (Some(profit), Some(-loss))
        }
        TpSlRegime::PerClass { .. } => panic!("sample_tp_sl needs a per-class regime resolved first"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub tiers: Vec<TierSpec>,
    pub ratio: f64,
    pub tp_sl: TpSlRegime,
    pub seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            tiers: default_tiers(),
            ratio: 0.4,
            tp_sl: TpSlRegime::None,
            seed: 0,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.tiers.is_empty() {
            return Err(ConfigError::Invalid("population needs at least one tier".into()));
        }
        if !(self.ratio.is_finite() && self.ratio >= 0.0) {
            return Err(ConfigError::Invalid(format!("ratio must be >= 0, got {}", self.ratio)));
        }
        for (i, tier) in self.tiers.iter().enumerate() {
            tier.validate(i)?;
        }
        self.tp_sl.validate()
    }

    /// Replaces every tier's activation probability.
    pub fn with_p_active(mut self, p_active: f64) -> Self {
        for tier in &mut self.tiers {
            tier.p_active = p_active;
        }
        self
    }

    pub fn contrarian_total(&self) -> u64 {
        self.tiers.iter().map(|t| u64::from(t.contrarian_count)).sum()
    }

    pub fn trend_total(&self) -> u64 {
        self.tiers.iter().map(|t| u64::from(t.trend_count(self.ratio))).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyType {
    Trend,
    Contrarian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Investor {
    pub id: u32,
    pub strategy_type: StrategyType,
    /// Signed trigger rate. Its sign picks the side: contrarians above zero
    /// quote asks, trend followers above zero buy on rises.
    pub r_market: f64,
    pub r_profit: Option<f64>,
    pub r_loss: Option<f64>,
    pub p_active: f64,
}

impl Investor {
    pub fn has_tp_sl(&self) -> bool {
        self.r_profit.is_some() && self.r_loss.is_some()
    }
}

/// Builds the population described by `config`. Deterministic in
/// `config.seed`; each (tier, class) pair draws from its own sub-stream.
pub fn build_population(config: &PopulationConfig) -> Result<Vec<Investor>, ConfigError> {
    config.validate()?;
    let capacity = (config.contrarian_total() + config.trend_total()) as usize;
    let mut investors = Vec::with_capacity(capacity);

    for (class_tag, class) in [(0u64, StrategyType::Contrarian), (1, StrategyType::Trend)] {
        let regime = config.tp_sl.for_class(class);
        for (tier_index, tier) in config.tiers.iter().enumerate() {
            let count = match class {
                StrategyType::Contrarian => tier.contrarian_count,
                StrategyType::Trend => tier.trend_count(config.ratio),
            };
            let stream = (tier_index as u64) << 8 | class_tag << 1;
            let mut market_rng = ChaCha8Rng::seed_from_u64(substream(config.seed, stream));
            let mut exit_rng = ChaCha8Rng::seed_from_u64(substream(config.seed, stream | 1));
            let normal = Normal::new(tier.mean_r_market, tier.sigma_r_market)
                .map_err(|e| ConfigError::Invalid(format!("tier {tier_index}: {e}")))?;
            for _ in 0..count {
                let r_market = loop {
                    let r = normal.sample(&mut market_rng);
                    if r != 0.0 {
                        break r;
                    }
                };
                let (r_profit, r_loss) = sample_tp_sl(regime, &mut exit_rng);
                investors.push(Investor {
                    id: investors.len() as u32,
                    strategy_type: class,
                    r_market,
                    r_profit,
                    r_loss,
                    p_active: tier.p_active,
                });
            }
        }
    }
    Ok(investors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(pop: &[Investor], class: StrategyType) -> usize {
        pop.iter().filter(|i| i.strategy_type == class).count()
    }

    #[test]
    fn default_tiers_at_ratio_04() {
        let pop = build_population(&PopulationConfig::default()).unwrap();
        assert_eq!(count(&pop, StrategyType::Trend), 4800);
        assert_eq!(count(&pop, StrategyType::Contrarian), 52_000);
        // 800 per normally spread tier
        let trend_02 = pop
            .iter()
            .filter(|i| i.strategy_type == StrategyType::Trend)
            .take(800)
            .all(|i| i.p_active == 0.5);
        assert!(trend_02);
        for (i, inv) in pop.iter().enumerate() {
            assert_eq!(inv.id as usize, i);
        }
    }

    #[test]
    fn zero_ratio_has_no_trend_followers() {
        let config = PopulationConfig { ratio: 0.0, ..Default::default() };
        let pop = build_population(&config).unwrap();
        assert_eq!(count(&pop, StrategyType::Trend), 0);
        assert_eq!(count(&pop, StrategyType::Contrarian), 52_000);
    }

    #[test]
    fn degenerate_tier_is_constant() {
        let config = PopulationConfig {
            tiers: vec![TierSpec::new(0.1, 0.0, 20_000, 0, 0.5)],
            ..Default::default()
        };
        let pop = build_population(&config).unwrap();
        assert_eq!(pop.len(), 20_000);
        assert!(pop.iter().all(|i| i.r_market == 0.1));
    }

    #[test]
    fn trend_counts_round_half_to_even() {
        let tier = TierSpec::new(0.02, 0.01, 0, 5, 0.5);
        assert_eq!(tier.trend_count(0.5), 2); // 2.5 -> 2
        assert_eq!(tier.trend_count(0.7), 4); // 3.5 -> 4
        assert_eq!(tier.trend_count(0.0), 0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let negative = PopulationConfig { ratio: -0.1, ..Default::default() };
        assert!(build_population(&negative).is_err());
        let inverted = PopulationConfig {
            tp_sl: TpSlRegime::Equal { lo: 0.08, hi: 0.02 },
            ..Default::default()
        };
        assert!(build_population(&inverted).is_err());
        let empty = PopulationConfig { tiers: vec![], ..Default::default() };
        assert!(build_population(&empty).is_err());
        let bad_p = PopulationConfig::default().with_p_active(1.5);
        assert!(build_population(&bad_p).is_err());
        let nested = PopulationConfig {
            tp_sl: TpSlRegime::PerClass {
                contrarian: Box::new(TpSlRegime::PerClass {
                    contrarian: Box::new(TpSlRegime::None),
                    trend: Box::new(TpSlRegime::None),
                }),
                trend: Box::new(TpSlRegime::None),
            },
            ..Default::default()
        };
        assert!(build_population(&nested).is_err());
    }

    #[test]
    fn no_tp_sl_draws_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_tp_sl(&TpSlRegime::None, &mut rng), (None, None));
    }

    #[test]
    fn equal_regime_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let (p, l) = sample_tp_sl(&TpSlRegime::Equal { lo: 0.02, hi: 0.08 }, &mut rng);
            let (p, l) = (p.unwrap(), l.unwrap());
            assert_eq!(p, -l);
            assert!((0.02..=0.08).contains(&p));
        }
    }

    #[test]
    fn per_class_applies_to_each_class() {
        let config = PopulationConfig {
            tp_sl: TpSlRegime::PerClass {
                contrarian: Box::new(TpSlRegime::Equal { lo: 0.02, hi: 0.04 }),
                trend: Box::new(TpSlRegime::None),
            },
            ..Default::default()
        };
        let pop = build_population(&config).unwrap();
        for inv in &pop {
            match inv.strategy_type {
                StrategyType::Contrarian => {
                    let p = inv.r_profit.unwrap();
                    assert!((0.02..0.04).contains(&p));
                }
                StrategyType::Trend => assert!(!inv.has_tp_sl()),
            }
        }
    }

    #[test]
    fn contrarian_draws_do_not_depend_on_ratio_or_regime() {
        let a = build_population(&PopulationConfig { ratio: 0.1, seed: 9, ..Default::default() }).unwrap();
        let b = build_population(&PopulationConfig {
            ratio: 1.6,
            seed: 9,
            tp_sl: TpSlRegime::Equal { lo: 0.02, hi: 0.08 },
            ..Default::default()
        })
        .unwrap();
        for (x, y) in a.iter().zip(&b).take(52_000) {
            assert_eq!(x.r_market, y.r_market);
        }
    }
}
