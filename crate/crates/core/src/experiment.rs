//! Sweep configuration, execution and CSV persistence.
//!
//! A sweep is the cartesian product `ratio x plan point x repetition`. Task
//! order is canonical (ratios outer, repetitions inner) and rows are written
//! in that order whatever the worker count, so identical configs give
//! byte-identical files.
//!
//! Repetition `k` of every coordinate uses the child seed
//! `derive_child_seed(master_seed, k)`: coordinates are compared on common
//! random numbers. Inside a run the population and the market draw from two
//! sub-streams of the child seed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineConfig, DEFAULT_INITIAL_PRICE, DEFAULT_WAVE_CAP};
use crate::error::{ConfigError, EngineError, SimError};
use crate::population::{build_population, default_tiers, PopulationConfig, TierSpec, TpSlRegime};
use crate::seed::{derive_child_seed, substream};
use crate::strategy::{run_plan, MainFundPlan, StrategyOutcome};

pub const DEFAULT_REPETITIONS: u32 = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    #[serde(default = "default_price")]
    pub initial_price: f64,
    #[serde(default = "default_wave_cap")]
    pub wave_cap: usize,
}

fn default_price() -> f64 {
    DEFAULT_INITIAL_PRICE
}

fn default_wave_cap() -> usize {
    DEFAULT_WAVE_CAP
}

impl Default for MarketSection {
    fn default() -> Self {
        Self {
            initial_price: DEFAULT_INITIAL_PRICE,
            wave_cap: DEFAULT_WAVE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSection {
    #[serde(default = "default_tiers")]
    pub tiers: Vec<TierSpec>,
    pub ratios: Vec<f64>,
    /// Overrides every tier's activation probability when set.
    #[serde(default)]
    pub p_active: Option<f64>,
    #[serde(default)]
    pub tp_sl: TpSlRegime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlanSection {
    Single {
        order_sizes: Vec<u64>,
    },
    Batch {
        total_shares: u64,
        d_buy: Vec<u32>,
        d_sell: Vec<u32>,
    },
}

impl PlanSection {
    pub fn points(&self) -> Vec<MainFundPlan> {
        match self {
            PlanSection::Single { order_sizes } => {
                order_sizes.iter().map(|&n_mf| MainFundPlan::Single { n_mf }).collect()
            }
            PlanSection::Batch { total_shares, d_buy, d_sell } => d_buy
                .iter()
                .flat_map(|&b| {
                    d_sell.iter().map(move |&s| MainFundPlan::Batch {
                        total_shares: *total_shares,
                        d_buy: b,
                        d_sell: s,
                    })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_reps")]
    pub repetitions: u32,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Worker threads; 0 lets the pool pick.
    #[serde(default)]
    pub workers: usize,
}

fn default_reps() -> u32 {
    DEFAULT_REPETITIONS
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            repetitions: DEFAULT_REPETITIONS,
            master_seed: 0,
            output: None,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub market: MarketSection,
    pub population: PopulationSection,
    pub plan: PlanSection,
    #[serde(default)]
    pub run: RunSection,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            market: MarketSection::default(),
            population: PopulationSection {
                tiers: default_tiers(),
                ratios: vec![0.4],
                p_active: None,
                tp_sl: TpSlRegime::None,
            },
            plan: PlanSection::Single { order_sizes: vec![1000] },
            run: RunSection::default(),
        }
    }
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: SweepConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<inline>".into(),
            reason: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse { reason, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !(self.market.initial_price.is_finite() && self.market.initial_price > 0.0) {
            return invalid("initial_price must be positive".into());
        }
        if self.market.wave_cap == 0 {
            return invalid("wave_cap must be positive".into());
        }
        if self.run.repetitions == 0 {
            return invalid("repetitions must be at least 1".into());
        }
        if self.population.ratios.is_empty() {
            return invalid("ratios must not be empty".into());
        }
        let empty_plan = match &self.plan {
            PlanSection::Single { order_sizes } => order_sizes.is_empty(),
            PlanSection::Batch { d_buy, d_sell, .. } => d_buy.is_empty() || d_sell.is_empty(),
        };
        if empty_plan {
            return invalid("swept plan lists must not be empty".into());
        }
        for plan in self.plan.points() {
            plan.validate()?;
        }
        for &ratio in &self.population.ratios {
            self.population_config(ratio, 0).validate()?;
        }
        Ok(())
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            initial_price: self.market.initial_price,
            wave_cap: self.market.wave_cap,
        }
    }

    pub fn population_config(&self, ratio: f64, seed: u64) -> PopulationConfig {
        let config = PopulationConfig {
            tiers: self.population.tiers.clone(),
            ratio,
            tp_sl: self.population.tp_sl.clone(),
            seed,
        };
        match self.population.p_active {
            Some(p) => config.with_p_active(p),
            None => config,
        }
    }

    /// Every `(ratio, plan, repetition)` task in canonical order.
    pub fn tasks(&self) -> Vec<Task> {
        let points = self.plan.points();
        let mut tasks = Vec::new();
        for &ratio in &self.population.ratios {
            for &plan in &points {
                for repetition in 0..self.run.repetitions {
                    tasks.push(Task {
                        ratio,
                        plan,
                        repetition,
                        seed: derive_child_seed(self.run.master_seed, u64::from(repetition)),
                    });
                }
            }
        }
        tasks
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Task {
    pub ratio: f64,
    pub plan: MainFundPlan,
    pub repetition: u32,
    pub seed: u64,
}

impl Task {
    /// Builds this task's population and runs its plan.
    pub fn run(&self, config: &SweepConfig) -> Result<StrategyOutcome, SimError> {
        let population = build_population(&config.population_config(self.ratio, substream(self.seed, 0)))?;
        run_plan(&population, self.plan, substream(self.seed, 1), config.engine_config())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    BookExhausted,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::BookExhausted => "book_exhausted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutputs {
    pub r_mf: f64,
    pub m_buy: f64,
    pub m_sell: f64,
    pub closing_prices: Vec<f64>,
    pub total_cascade: usize,
}

impl From<&StrategyOutcome> for RunOutputs {
    fn from(o: &StrategyOutcome) -> Self {
        Self {
            r_mf: o.r_mf,
            m_buy: o.m_buy,
            m_sell: o.m_sell,
            closing_prices: o.closing_prices(),
            total_cascade: o.total_cascade(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub task: Task,
    pub regime: String,
    pub p_active: Option<f64>,
    pub status: RunStatus,
    pub outputs: Option<RunOutputs>,
}

/// Column order of the sweep CSV.
pub const CSV_HEADER: [&str; 17] = [
    "status",
    "ratio",
    "p_active",
    "regime",
    "plan",
    "n_mf",
    "total_shares",
    "d_buy",
    "d_sell",
    "repetition",
    "seed",
    "r_mf",
    "m_buy",
    "m_sell",
    "profit",
    "closing_prices",
    "total_cascade",
];

/// 17 significant digits; parses back to the identical `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl RunRecord {
    pub fn csv_row(&self) -> Vec<String> {
        let t = &self.task;
        let (plan, n_mf, total, d_buy, d_sell) = match t.plan {
            MainFundPlan::Single { n_mf } => ("single", n_mf.to_string(), String::new(), String::new(), String::new()),
            MainFundPlan::Batch { total_shares, d_buy, d_sell } => (
                "batch",
                String::new(),
                total_shares.to_string(),
                d_buy.to_string(),
                d_sell.to_string(),
            ),
        };
        let mut row = vec![
            self.status.as_str().to_string(),
            format_float(t.ratio),
            self.p_active.map(format_float).unwrap_or_default(),
            self.regime.clone(),
            plan.to_string(),
            n_mf,
            total,
            d_buy,
            d_sell,
            t.repetition.to_string(),
            t.seed.to_string(),
        ];
        match &self.outputs {
            Some(o) => row.extend([
                format_float(o.r_mf),
                format_float(o.m_buy),
                format_float(o.m_sell),
                format_float(o.m_sell - o.m_buy),
                o.closing_prices.iter().map(|p| format_float(*p)).collect::<Vec<_>>().join(";"),
                o.total_cascade.to_string(),
            ]),
            None => row.extend(std::iter::repeat_n(String::new(), 6)),
        }
        row
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run ratio={ratio} plan={plan:?} repetition={repetition} failed: {source}")]
    Run {
        ratio: f64,
        plan: MainFundPlan,
        repetition: u32,
        source: EngineError,
    },
    #[error("cannot write {path}: {reason}")]
    Output { path: String, reason: String },
}

/// Runs a single task and turns the outcome into a record. Book exhaustion
/// becomes a row status; any other engine failure aborts.
pub fn run_task(config: &SweepConfig, task: Task) -> Result<(RunRecord, Option<StrategyOutcome>), SweepError> {
    let mut record = RunRecord {
        task,
        regime: config.population.tp_sl.label(),
        p_active: config.population.p_active,
        status: RunStatus::Ok,
        outputs: None,
    };
    match task.run(config) {
        Ok(outcome) => {
            record.outputs = Some(RunOutputs::from(&outcome));
            Ok((record, Some(outcome)))
        }
        Err(e) if e.is_book_exhausted() => {
            record.status = RunStatus::BookExhausted;
            Ok((record, None))
        }
        Err(SimError::Config(e)) => Err(e.into()),
        Err(SimError::Engine(source)) => Err(SweepError::Run {
            ratio: task.ratio,
            plan: task.plan,
            repetition: task.repetition,
            source,
        }),
    }
}

/// Runs every task of the sweep, in parallel when the pool allows, and
/// returns the records in canonical order. `inspect` sees each successful
/// outcome on the worker that produced it.
pub fn run_sweep_with<F>(config: &SweepConfig, inspect: F) -> Result<Vec<RunRecord>, SweepError>
where
    F: Fn(&Task, &StrategyOutcome) -> Result<(), EngineError> + Sync,
{
    config.validate()?;
    let tasks = config.tasks();
    let work = || {
        tasks
            .par_iter()
            .map(|task| {
                let (record, outcome) = run_task(config, *task)?;
                if let Some(outcome) = outcome {
                    inspect(task, &outcome).map_err(|source| SweepError::Run {
                        ratio: task.ratio,
                        plan: task.plan,
                        repetition: task.repetition,
                        source,
                    })?;
                }
                Ok(record)
            })
            .collect::<Result<Vec<_>, SweepError>>()
    };
    if config.run.workers == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.run.workers)
            .build()
            .map_err(|e| ConfigError::Invalid(format!("worker pool: {e}")))?
            .install(work)
    }
}

pub fn run_sweep(config: &SweepConfig) -> Result<Vec<RunRecord>, SweepError> {
    run_sweep_with(config, |_, _| Ok(()))
}

pub fn write_csv<W: Write>(records: &[RunRecord], writer: W) -> Result<(), csv::Error> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(CSV_HEADER)?;
    for record in records {
        csv.write_record(record.csv_row())?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_csv_file(records: &[RunRecord], path: &Path) -> Result<(), SweepError> {
    let output_error = |reason: String| SweepError::Output {
        path: path.display().to_string(),
        reason,
    };
    let file = fs::File::create(path).map_err(|e| output_error(e.to_string()))?;
    write_csv(records, std::io::BufWriter::new(file)).map_err(|e| output_error(e.to_string()))
}
