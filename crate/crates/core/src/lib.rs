//! Agent-based market simulator: a main fund pumping and dumping against
//! trend followers and contrarians on a price-time priority book, with the
//! closed-form return model alongside.

pub mod cli;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod orderbook;
pub mod population;
pub mod seed;
pub mod strategy;
pub mod theory;

pub use engine::{Engine, EngineConfig, MainFundOrder, PeriodResult};
pub use error::{BookError, ConfigError, EngineError, SimError, TheoryError};
pub use experiment::{run_sweep, SweepConfig};
pub use population::{build_population, Investor, PopulationConfig, StrategyType, TierSpec, TpSlRegime};
pub use seed::derive_child_seed;
pub use strategy::{run_batch_strategy, run_plan, run_single_strategy, MainFundPlan, StrategyOutcome};
